"""Conditioned relativistic GAN for camera-noise synthesis.

The generator maps a conditioning stack (three replicated-constant metadata
planes, the noise-free patch, and a Gaussian latent map) to a signed noise
patch. The discriminator receives the conditioning stack together with BOTH
noise patches and scores which ordering looks more realistic, so real and
fake are compared explicitly rather than through batch averages.

A heteroscedastic Gaussian sampler (variance affine in the clean intensity)
stands in for real camera noise at desk scale.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, GraphError, ShapeError
from .layers import BatchNormLayer, ConvLayer, Module, SNConvLayer
from .tensor import Tensor

# metadata plane scaling: five camera models, ISO ceiling, and a log mapping
# that puts 1e-4 s at 0 and 10 s at 1
CAMERA_CODE_DIVISOR = 4.0
ISO_MAX = 3200.0
SHUTTER_LOG10_MIN = -4.0
SHUTTER_LOG10_SPAN = 5.0


@dataclass
class GanConfig:
    num_resblocks: int = 8
    width: int = 64
    alpha: float = 0.1           # residual branch scaling
    latent_channels: int = 3
    multiplicative_head: bool = True  # noise = head(features) * white latent
    disc_stages: int = 4
    disc_width: int = 64
    disc_head_convs: int = 1     # stride-1 convs before the strided stack
    disc_lr_scale: float = 1.0   # discriminator lr = schedule lr * this
    sn_iterations: int = 1
    image_channels: int = 3
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.num_resblocks < 1 or self.width < 1 or self.disc_stages < 1:
            raise ConfigError("generator/discriminator sizes must be >= 1")
        if self.multiplicative_head and self.latent_channels < self.image_channels:
            raise ConfigError(
                f"multiplicative head needs latent_channels >= image_channels, "
                f"got {self.latent_channels} < {self.image_channels}"
            )

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def conditioning_channels(self):
        return 3 + self.image_channels

    @classmethod
    def tiny(cls, **overrides):
        base = dict(num_resblocks=3, width=16, disc_stages=3, disc_width=32)
        base.update(overrides)
        return cls(**base)


def normalize_camera(code: float) -> float:
    return float(code) / CAMERA_CODE_DIVISOR


def normalize_iso(iso: float) -> float:
    return float(np.clip(iso / ISO_MAX, 0.0, 1.0))


def normalize_shutter(seconds: float) -> float:
    return float(np.clip((np.log10(seconds) - SHUTTER_LOG10_MIN) / SHUTTER_LOG10_SPAN, 0.0, 1.0))


@dataclass
class ConditioningSignal:
    """Per-sample metadata replicated into patch-sized planes plus the clean patch."""

    camera_plane: np.ndarray   # (N,1,H,W), spatially constant
    iso_plane: np.ndarray
    shutter_plane: np.ndarray
    clean: np.ndarray          # (N,C,H,W)

    def as_tensor(self) -> Tensor:
        stacked = np.concatenate(
            [self.camera_plane, self.iso_plane, self.shutter_plane, self.clean], axis=1
        )
        return T.constant(stacked)


def build_conditioning(camera_codes, isos, shutters, clean: np.ndarray) -> ConditioningSignal:
    """Replicate per-sample scalars into constant planes matching the patch."""
    clean = np.asarray(clean)
    if clean.ndim != 4:
        raise ShapeError(f"clean patch batch must be (N,C,H,W), got {clean.shape}")
    n, _, h, w = clean.shape
    camera_codes = np.broadcast_to(np.asarray(camera_codes, dtype=np.float64), (n,))
    isos = np.broadcast_to(np.asarray(isos, dtype=np.float64), (n,))
    shutters = np.broadcast_to(np.asarray(shutters, dtype=np.float64), (n,))

    def plane(values):
        return np.broadcast_to(
            values.reshape(n, 1, 1, 1), (n, 1, h, w)
        ).astype(clean.dtype).copy()

    return ConditioningSignal(
        camera_plane=plane(np.array([normalize_camera(c) for c in camera_codes])),
        iso_plane=plane(np.array([normalize_iso(i) for i in isos])),
        shutter_plane=plane(np.array([normalize_shutter(s) for s in shutters])),
        clean=clean,
    )


@dataclass
class GanBatch:
    x_r: Tensor          # real noise: noisy - clean, signed
    x_f: Tensor          # generated noise
    x_c: ConditioningSignal


class ResBlockG(Module):
    """Two spectrally normalized conv units with batch norm; the branch is
    scaled by alpha before the residual add."""

    def __init__(self, width, alpha, sn_iterations, rng, dtype):
        self.alpha = alpha
        self.conv1 = SNConvLayer(width, width, 3, n_iterations=sn_iterations, rng=rng, dtype=dtype)
        self.bn1 = BatchNormLayer(width, dtype=dtype)
        self.conv2 = SNConvLayer(width, width, 3, n_iterations=sn_iterations, rng=rng, dtype=dtype)
        self.bn2 = BatchNormLayer(width, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return x + self.alpha * h


class NoiseGenerator(Module):
    def __init__(self, cfg: GanConfig):
        rng = np.random.default_rng(cfg.seed)
        dt = cfg.np_dtype
        self.config = cfg
        in_ch = cfg.conditioning_channels + cfg.latent_channels
        self.head = ConvLayer(in_ch, cfg.width, 3, rng=rng, dtype=dt)
        self.blocks = [
            ResBlockG(cfg.width, cfg.alpha, cfg.sn_iterations, rng, dt)
            for _ in range(cfg.num_resblocks)
        ]
        self.out_head = ConvLayer(cfg.width, cfg.image_channels, 3, rng=rng, dtype=dt)
        # start near the magnitude of realistic camera noise so training is
        # spent on the conditional structure, not on global scale
        self.out_head.weight.data *= 0.2

    def forward(self, x_c: ConditioningSignal, latent: Tensor) -> Tensor:
        cond = x_c.as_tensor()
        if latent.shape[0] != cond.shape[0] or latent.shape[2:] != cond.shape[2:]:
            raise ShapeError(f"latent {latent.shape} does not match conditioning {cond.shape}")
        h = self.head(T.concat_channels([cond, latent]))
        for block in self.blocks:
            h = block(h)
        out = self.out_head(h)
        if self.config.multiplicative_head:
            # signed per-pixel scale times the white latent: the output is
            # spatially white by construction and the trunk only has to learn
            # the variance map
            white = T.constant(latent.data[:, : self.config.image_channels])
            out = out * white
        return out

    def latent_like(self, x_c: ConditioningSignal, seed) -> Tensor:
        n, _, h, w = x_c.clean.shape
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, self.config.latent_channels, h, w))
        return T.constant(z.astype(self.config.np_dtype))


class NoiseDiscriminator(Module):
    """Strided spectrally normalized conv stack over (x_c, first, second);
    emits one non-transformed score per sample."""

    def __init__(self, cfg: GanConfig):
        rng = np.random.default_rng(cfg.seed + 1)
        dt = cfg.np_dtype
        self.config = cfg
        in_ch = cfg.conditioning_channels + 2 * cfg.image_channels
        self.head = SNConvLayer(in_ch, cfg.disc_width, 3,
                                n_iterations=cfg.sn_iterations, rng=rng, dtype=dt)
        self.head_convs = [
            SNConvLayer(cfg.disc_width, cfg.disc_width, 3,
                        n_iterations=cfg.sn_iterations, rng=rng, dtype=dt)
            for _ in range(cfg.disc_head_convs - 1)
        ]
        self.stages = [
            SNConvLayer(cfg.disc_width, cfg.disc_width, 4, stride=2, padding=1,
                        n_iterations=cfg.sn_iterations, rng=rng, dtype=dt)
            for _ in range(cfg.disc_stages)
        ]
        self.score = ConvLayer(cfg.disc_width, 1, 1, rng=rng, dtype=dt)
        # a fresh score head starts at zero so an untrained pair sits at the
        # degenerate point D = 0.5
        self.score.weight.data[:] = 0.0

    def forward(self, x_c: ConditioningSignal, first: Tensor, second: Tensor) -> Tensor:
        cond = x_c.as_tensor()
        if first.shape != second.shape or first.shape != (cond.shape[0], self.config.image_channels) + tuple(cond.shape[2:]):
            raise ShapeError(
                f"discriminator inputs disagree: conditioning {cond.shape}, "
                f"first {first.shape}, second {second.shape}"
            )
        h = T.leaky_relu(self.head(T.concat_channels([cond, first, second])))
        for conv in self.head_convs:
            h = T.leaky_relu(conv(h))
        for stage in self.stages:
            h = T.leaky_relu(stage(h))
        pooled = T.pool_global("avg", h)
        return T.reshape(self.score(pooled), (cond.shape[0], 1))


def build_generator(cfg: GanConfig) -> NoiseGenerator:
    return NoiseGenerator(cfg)


def build_discriminator(cfg: GanConfig) -> NoiseDiscriminator:
    return NoiseDiscriminator(cfg)


# ---------------------------------------------------------------------------
# adversarial objectives


def ragan_d(c_r: Tensor, c_f: Tensor):
    """Relativistic average pair: sigma(C(x) - mean(C(other batch)))."""
    if c_r.size == 0 or c_f.size == 0:
        raise DataError("ragan_d on an empty batch of scores")
    d_rf = T.sigmoid(c_r - T.reduce_mean(c_f))
    d_fr = T.sigmoid(c_f - T.reduce_mean(c_r))
    return d_rf, d_fr


def cergan_d(disc: NoiseDiscriminator, x_c: ConditioningSignal, a: Tensor, b: Tensor) -> Tensor:
    """Probability that the first patch is the more realistic of the pair."""
    return T.sigmoid(disc(x_c, a, b))


def cergan_losses(disc: NoiseDiscriminator, batch: GanBatch, require_graph: bool = True):
    """Least-squares objectives over both argument orderings.

    The generator loss sees the full graph through ``x_f``; the discriminator
    loss uses ``x_f`` detached so its gradients never reach the generator.
    """
    loss_g, loss_d, _ = _cergan_losses_with_scores(disc, batch, require_graph)
    return loss_g, loss_d


def _cergan_losses_with_scores(disc, batch: GanBatch, require_graph: bool = True):
    if require_graph and not batch.x_f.requires_grad:
        raise GraphError("x_f carries no graph linkage; generator loss cannot backprop")
    d_rf = cergan_d(disc, batch.x_c, batch.x_r, batch.x_f)
    d_fr = cergan_d(disc, batch.x_c, batch.x_f, batch.x_r)
    loss_g = 0.5 * T.reduce_mean(d_rf ** 2) + 0.5 * T.reduce_mean((d_fr - 1.0) ** 2)

    x_f = batch.x_f.detach()
    d_rf_d = cergan_d(disc, batch.x_c, batch.x_r, x_f)
    d_fr_d = cergan_d(disc, batch.x_c, x_f, batch.x_r)
    loss_d = 0.5 * T.reduce_mean((d_rf_d - 1.0) ** 2) + 0.5 * T.reduce_mean(d_fr_d ** 2)
    scores = (float(d_rf_d.data.mean()), float(d_fr_d.data.mean()))
    return loss_g, loss_d, scores


# ---------------------------------------------------------------------------
# noise sources


def heteroscedastic_noise(clean: Tensor, a: float, b: float, seed) -> Tensor:
    """clean + n with n ~ Normal(0, a*clean + b) per pixel."""
    if a < 0 or b < 0:
        raise DataError(f"variance coefficients must be non-negative, got a={a}, b={b}")
    data = clean.data if isinstance(clean, Tensor) else np.asarray(clean)
    rng = np.random.default_rng(seed)
    std = np.sqrt(a * data + b)
    noisy = data + rng.standard_normal(data.shape) * std
    return T.constant(noisy.astype(data.dtype))


def sample_noise(generator: NoiseGenerator, x_c: ConditioningSignal, seed) -> Tensor:
    """One generated noise patch per conditioning sample, deterministic in seed."""
    was_training = generator.training
    generator.eval()
    try:
        z = generator.latent_like(x_c, seed)
        out = generator(x_c, z)
    finally:
        generator.train(was_training)
    return out.detach()
