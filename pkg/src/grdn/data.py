"""Desk-scale dataset substitute.

Procedurally generated clean scenes with synthetic camera metadata stand in
for a curated denoising corpus. Patches are sampled with an 8-pixel border
exclusion and no augmentation; training batches mix samples from several
noise sources with configured probabilities, drawn i.i.d. per sample.

On disk a dataset is a directory of paired PNGs plus two text files:

* ``metadata.txt`` - one ``key=value`` record per line
  (``pair=<name> camera=<int> iso=<float> shutter=<float> a=<float> b=<float> source=<word>``)
* ``manifest.txt``  - one ``<clean relpath> <noisy relpath>`` line per pair
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import tensor as T
from .errors import DataError
from .tensor import Tensor

SCENE_KINDS = ("gradients", "checkers", "filtered_noise", "shapes")

BORDER_MARGIN = 8


@dataclass
class SceneSpec:
    kind: str
    size: tuple = (96, 96)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise DataError(f"unknown scene kind {self.kind!r}, expected one of {SCENE_KINDS}")


def generate_scene(spec: SceneSpec) -> Tensor:
    """Clean (3,H,W) image in [0,1], deterministic under the spec seed."""
    h, w = spec.size
    rng = np.random.default_rng(spec.seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    if spec.kind == "gradients":
        img = np.empty((3, h, w))
        for c in range(3):
            a, b = rng.uniform(-1, 1, 2)
            offset = rng.uniform(0.2, 0.8)
            img[c] = offset + 0.5 * (a * (xx - 0.5) + b * (yy - 0.5))
    elif spec.kind == "checkers":
        cell = int(rng.integers(4, 17))
        grid = ((np.arange(h)[:, None] // cell + np.arange(w)[None, :] // cell) % 2)
        lo, hi = np.sort(rng.uniform(0, 1, (2, 3)), axis=0)
        img = np.where(grid[None], hi[:, None, None], lo[:, None, None])
    elif spec.kind == "filtered_noise":
        img = rng.random((3, h, w))
        radius = int(rng.integers(2, 6))
        kernel = np.ones(2 * radius + 1) / (2 * radius + 1)
        for c in range(3):
            for axis in (0, 1):
                img[c] = np.apply_along_axis(
                    lambda m: np.convolve(m, kernel, mode="same"), axis, img[c]
                )
        lo = img.min(axis=(1, 2), keepdims=True)
        hi = img.max(axis=(1, 2), keepdims=True)
        img = (img - lo) / np.maximum(hi - lo, 1e-9)
    else:  # shapes
        img = np.broadcast_to(rng.uniform(0.1, 0.9, (3, 1, 1)), (3, h, w)).copy()
        for _ in range(int(rng.integers(4, 9))):
            color = rng.uniform(0, 1, 3)
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            if rng.random() < 0.5:
                hh, ww = rng.uniform(h / 8, h / 2), rng.uniform(w / 8, w / 2)
                mask = (np.abs(yy * h - cy) < hh / 2) & (np.abs(xx * w - cx) < ww / 2)
            else:
                r = rng.uniform(min(h, w) / 10, min(h, w) / 3)
                mask = (yy * h - cy) ** 2 + (xx * w - cx) ** 2 < r * r
            img[:, mask] = color[:, None]
    return T.constant(np.clip(img, 0.0, 1.0))


@dataclass
class PatchSampler:
    """Uniform patch positions that never touch the excluded image border."""

    patch_size: int = 48
    margin: int = BORDER_MARGIN
    seed: int = 0

    def offsets(self, height: int, width: int, n: int, rng=None):
        lo = self.margin
        hi_r = height - self.margin - self.patch_size
        hi_c = width - self.margin - self.patch_size
        if hi_r < lo or hi_c < lo:
            raise DataError(
                f"image {height}x{width} too small for patch {self.patch_size} "
                f"with margin {self.margin}"
            )
        rng = rng or np.random.default_rng(self.seed)
        rows = rng.integers(lo, hi_r + 1, size=n)
        cols = rng.integers(lo, hi_c + 1, size=n)
        return list(zip(rows.tolist(), cols.tolist()))

    def sample_patch_pairs(self, clean: Tensor, noisy: Tensor, n: int, rng=None):
        """n aligned raw crops (no augmentation) from inside the margins."""
        cd = clean.data if isinstance(clean, Tensor) else np.asarray(clean)
        nd = noisy.data if isinstance(noisy, Tensor) else np.asarray(noisy)
        if cd.shape != nd.shape:
            raise DataError(f"clean {cd.shape} and noisy {nd.shape} differ")
        p = self.patch_size
        pairs = []
        for r, c in self.offsets(cd.shape[-2], cd.shape[-1], n, rng):
            pairs.append((T.constant(cd[..., r : r + p, c : c + p].copy()),
                          T.constant(nd[..., r : r + p, c : c + p].copy())))
        return pairs


def sample_patch_pairs(sampler: PatchSampler, clean, noisy, n: int, rng=None):
    return sampler.sample_patch_pairs(clean, noisy, n, rng)


@dataclass
class MixSpec:
    """Source mixing probabilities (real stand-in, statistical, generated)."""

    weights: tuple = (0.90, 0.05, 0.05)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0):
            raise DataError(f"mix weights must be non-negative, got {self.weights}")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise DataError(f"mix weights must sum to 1, got sum={w.sum()!r}")


@dataclass
class PairRecord:
    """One clean/noisy image pair with its capture metadata."""

    name: str
    clean: np.ndarray
    noisy: np.ndarray
    camera: int = 0
    iso: float = 100.0
    shutter: float = 0.01
    noise_a: float = 0.0
    noise_b: float = 0.0
    source: str = "real"


def batch_at(mix: MixSpec, sources, sampler: PatchSampler, batch_size: int, seed, t: int):
    """The batch for iteration ``t``: a pure function of (seed, t), so streams
    are resumable and bitwise reproducible."""
    weights = np.asarray(mix.weights, dtype=np.float64)
    for i, source in enumerate(sources):
        if weights[i] > 0 and len(source) == 0:
            raise DataError(f"source {i} is empty but has weight {weights[i]}")
    rng = np.random.default_rng((seed, t))
    clean_patches, noisy_patches, records = [], [], []
    p = sampler.patch_size
    for _ in range(batch_size):
        src = int(rng.choice(len(sources), p=weights))
        rec = sources[src][int(rng.integers(len(sources[src])))]
        (r, c), = sampler.offsets(rec.clean.shape[-2], rec.clean.shape[-1], 1, rng)
        clean_patches.append(rec.clean[..., r : r + p, c : c + p])
        noisy_patches.append(rec.noisy[..., r : r + p, c : c + p])
        records.append(rec)
    return np.stack(clean_patches), np.stack(noisy_patches), records


def make_training_stream(mix: MixSpec, sources, sampler: PatchSampler, batch_size: int,
                         seed, start: int = 0):
    """Endless iterator of (clean, noisy, records) batches; per-sample source
    choice is i.i.d. with the mix probabilities."""
    t = start
    while True:
        yield batch_at(mix, sources, sampler, batch_size, seed, t)
        t += 1


# ---------------------------------------------------------------------------
# image and sidecar I/O


def load_image(path) -> Tensor:
    """8-bit RGB PNG to a (3,H,W) tensor in [0,1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return T.constant(arr.transpose(2, 0, 1) / 255.0)


def save_image(path, image: Tensor):
    """Clamp to [0,1] and quantize with round-half-away-from-zero."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim != 3 or data.shape[0] != 3:
        raise DataError(f"save_image expects (3,H,W), got {data.shape}")
    clamped = np.clip(data, 0.0, 1.0)
    quantized = np.floor(clamped * 255.0 + 0.5).astype(np.uint8)
    try:
        Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise DataError(f"cannot write image {path}: {exc}") from exc


def quantize(image: Tensor) -> Tensor:
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    return T.constant(np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5) / 255.0)


def write_dataset(out_dir, records):
    """Paired PNGs plus metadata sidecar and manifest."""
    os.makedirs(out_dir, exist_ok=True)
    manifest, metadata = [], []
    for rec in records:
        clean_rel = f"{rec.name}_clean.png"
        noisy_rel = f"{rec.name}_noisy.png"
        save_image(os.path.join(out_dir, clean_rel), T.constant(rec.clean))
        save_image(os.path.join(out_dir, noisy_rel), T.constant(rec.noisy))
        manifest.append(f"{clean_rel} {noisy_rel}")
        metadata.append(
            f"pair={rec.name} camera={rec.camera} iso={rec.iso:g} "
            f"shutter={rec.shutter:g} a={rec.noise_a:g} b={rec.noise_b:g} source={rec.source}"
        )
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(manifest) + "\n")
    with open(os.path.join(out_dir, "metadata.txt"), "w") as fh:
        fh.write("\n".join(metadata) + "\n")


def read_metadata(path):
    """Parse the key=value sidecar into one dict per record."""
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fields = {}
            for token in line.split():
                if "=" not in token:
                    raise DataError(f"malformed metadata token {token!r} in {path}")
                key, value = token.split("=", 1)
                fields[key] = value
            records.append(fields)
    return records


def load_dataset(in_dir):
    """Read a paired-PNG dataset back into PairRecords."""
    manifest_path = os.path.join(in_dir, "manifest.txt")
    try:
        with open(manifest_path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    meta = {m["pair"]: m for m in read_metadata(os.path.join(in_dir, "metadata.txt"))}
    records = []
    for line in lines:
        clean_rel, noisy_rel = line.split()
        name = clean_rel.replace("_clean.png", "")
        m = meta.get(name, {})
        records.append(PairRecord(
            name=name,
            clean=load_image(os.path.join(in_dir, clean_rel)).data,
            noisy=load_image(os.path.join(in_dir, noisy_rel)).data,
            camera=int(m.get("camera", 0)),
            iso=float(m.get("iso", 100.0)),
            shutter=float(m.get("shutter", 0.01)),
            noise_a=float(m.get("a", 0.0)),
            noise_b=float(m.get("b", 0.0)),
            source=m.get("source", "real"),
        ))
    return records
