"""Denoiser model builders: residual dense blocks, grouped stacks, and the
full encoder-style network with global residual, plus the flat cascade
baseline it is compared against.

Residuals exist at four levels, each reducible to the identity by zeroing
its terminal weights: inside every dense block, around every group, across
pairs of groups (when enabled), and globally from network input to output.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import Cbam, ConvLayer, Module, TransposedConvLayer
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_grdbs: int = 4
    rdbs_per_grdb: int = 4
    convs_per_rdb: int = 8
    base_filters: int = 64       # width carried between blocks (G0)
    growth: int = 64             # channels added by each dense conv (G)
    cbam: bool = True
    cbam_reduction: int = 16
    skip_every_2: bool = False
    grdb_residual: bool = True
    in_channels: int = 3
    out_channels: int = 3
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        for name in ("num_grdbs", "rdbs_per_grdb", "convs_per_rdb", "base_filters", "growth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.cbam and self.base_filters % self.cbam_reduction != 0:
            raise ConfigError(
                f"base_filters {self.base_filters} not divisible by "
                f"cbam_reduction {self.cbam_reduction}"
            )
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @classmethod
    def tiny(cls, **overrides):
        """2 GRDBs x 2 RDBs x 4 convs at width 8; runs in seconds on a CPU."""
        base = dict(num_grdbs=2, rdbs_per_grdb=2, convs_per_rdb=4,
                    base_filters=8, growth=8, cbam_reduction=4)
        base.update(overrides)
        return cls(**base)


# Residual-branch fusion layers start at 0.1x their fan-in init and the tail
# starts at zero: every block (and the whole net) then opens near the
# identity. At full fan-in the stacked local residuals amplify activations
# multiplicatively, which at desk scale drives the attention gates into
# saturation before anything is learned.
FUSION_INIT_SCALE = 0.1


class RdbBlock(Module):
    """Densely connected convs fused by 1x1 and closed by a local residual."""

    def __init__(self, cfg: ModelConfig, rng):
        g0, g = cfg.base_filters, cfg.growth
        self.convs = [
            ConvLayer(g0 + i * g, g, 3, rng=rng, dtype=cfg.np_dtype)
            for i in range(cfg.convs_per_rdb)
        ]
        self.fusion = ConvLayer(g0 + cfg.convs_per_rdb * g, g0, 1, rng=rng, dtype=cfg.np_dtype)
        self.fusion.weight.data *= FUSION_INIT_SCALE

    def forward(self, x: Tensor) -> Tensor:
        feats = [x]
        for conv in self.convs:
            feats.append(T.relu(conv(T.concat_channels(feats))))
        return x + self.fusion(T.concat_channels(feats))


class GrdbBlock(Module):
    """Cascaded dense blocks whose outputs are concatenated and fused by 1x1."""

    def __init__(self, cfg: ModelConfig, rng):
        self.rdbs = [RdbBlock(cfg, rng) for _ in range(cfg.rdbs_per_grdb)]
        self.fusion = ConvLayer(cfg.rdbs_per_grdb * cfg.base_filters, cfg.base_filters, 1,
                                rng=rng, dtype=cfg.np_dtype)
        self.fusion.weight.data *= FUSION_INIT_SCALE
        self.residual = cfg.grdb_residual

    def forward(self, x: Tensor) -> Tensor:
        outs = []
        h = x
        for rdb in self.rdbs:
            h = rdb(h)
            outs.append(h)
        fused = self.fusion(T.concat_channels(outs))
        return x + fused if self.residual else fused


class GrdnModel(Module):
    """Head conv, stride-2 down-conv, grouped dense blocks, transposed
    up-conv, optional attention, tail conv, global residual."""

    def __init__(self, cfg: ModelConfig):
        rng = np.random.default_rng(cfg.seed)
        g0, dt = cfg.base_filters, cfg.np_dtype
        self.config = cfg
        self.head = ConvLayer(cfg.in_channels, g0, 3, rng=rng, dtype=dt)
        self.down = ConvLayer(g0, g0, 4, stride=2, padding=1, rng=rng, dtype=dt)
        self.grdbs = [GrdbBlock(cfg, rng) for _ in range(cfg.num_grdbs)]
        self.up = TransposedConvLayer(g0, g0, 4, stride=2, padding=1, rng=rng, dtype=dt)
        self.cbam = Cbam(g0, cfg.cbam_reduction, rng=rng, dtype=dt) if cfg.cbam else None
        self.tail = ConvLayer(g0, cfg.out_channels, 3, rng=rng, dtype=dt)
        self.tail.weight.data[:] = 0.0
        self.skip_every_2 = cfg.skip_every_2

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected (N,{self.config.in_channels},H,W), got {x.shape}")
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"H and W must be even for down/up-sampling, got {x.shape}")
        h = self.down(self.head(x))
        pair_input = None
        for i, grdb in enumerate(self.grdbs):
            if self.skip_every_2 and i % 2 == 0:
                pair_input = h
            h = grdb(h)
            if self.skip_every_2 and i % 2 == 1:
                h = h + pair_input
        h = self.up(h)
        if self.cbam is not None:
            h = self.cbam(h)
        return self.tail(h) + x


class RdnModel(Module):
    """Flat cascade baseline: two head convs, dense blocks, one global
    concat-and-fuse, feature residual, image-level global residual."""

    def __init__(self, cfg: ModelConfig):
        rng = np.random.default_rng(cfg.seed)
        g0, dt = cfg.base_filters, cfg.np_dtype
        self.config = cfg
        n_rdbs = cfg.num_grdbs * cfg.rdbs_per_grdb
        self.sfe1 = ConvLayer(cfg.in_channels, g0, 3, rng=rng, dtype=dt)
        self.sfe2 = ConvLayer(g0, g0, 3, rng=rng, dtype=dt)
        self.rdbs = [RdbBlock(cfg, rng) for _ in range(n_rdbs)]
        self.gff1 = ConvLayer(n_rdbs * g0, g0, 1, rng=rng, dtype=dt)
        self.gff1.weight.data *= FUSION_INIT_SCALE
        self.gff2 = ConvLayer(g0, g0, 3, rng=rng, dtype=dt)
        self.tail = ConvLayer(g0, cfg.out_channels, 3, rng=rng, dtype=dt)
        self.tail.weight.data[:] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected (N,{self.config.in_channels},H,W), got {x.shape}")
        f0 = self.sfe1(x)
        h = self.sfe2(f0)
        outs = []
        for rdb in self.rdbs:
            h = rdb(h)
            outs.append(h)
        fused = self.gff2(self.gff1(T.concat_channels(outs))) + f0
        return self.tail(fused) + x


def build_rdb(cfg: ModelConfig, rng=None) -> RdbBlock:
    return RdbBlock(cfg, rng or np.random.default_rng(cfg.seed))


def build_grdb(cfg: ModelConfig, rng=None) -> GrdbBlock:
    return GrdbBlock(cfg, rng or np.random.default_rng(cfg.seed))


def build_grdn(cfg: ModelConfig) -> GrdnModel:
    return GrdnModel(cfg)


def build_rdn_baseline(cfg: ModelConfig) -> RdnModel:
    return RdnModel(cfg)


def forward_denoise(model: Module, noisy: Tensor) -> Tensor:
    """Denoised estimate, same shape; values are not clamped here."""
    return model(noisy)
