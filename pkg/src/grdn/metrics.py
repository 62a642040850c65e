"""Quality metrics and evaluation reports.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5) with K1=0.01,
K2=0.03 on the channel-mean grayscale image; PSNR is computed per image and
averaged. Both choices are echoed in the report header so scores are
comparable across runs.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .kernels import _forward_padded_im2col
from .layers import Module
from .tensor import Tensor

SSIM_HEADER = "# ssim: 11x11 gaussian sigma=1.5 K1=0.01 K2=0.03 grayscale=channel-mean"


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) in dB; +inf for identical images."""
    ad, bd = _as_array(a), _as_array(b)
    if ad.shape != bd.shape:
        raise ShapeError(f"psnr: shapes {ad.shape} and {bd.shape} differ")
    mse = float(np.mean((ad.astype(np.float64) - bd.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g1 = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g1, g1)
    return win / win.sum()


def _grayscale(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        return img.mean(axis=0)
    if img.ndim == 2:
        return img
    raise ShapeError(f"expected (C,H,W) or (H,W) image, got {img.shape}")


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean local structural similarity in [-1, 1]; exactly 1 for x vs x."""
    ad, bd = _as_array(a).astype(np.float64), _as_array(b).astype(np.float64)
    if ad.shape != bd.shape:
        raise ShapeError(f"ssim: shapes {ad.shape} and {bd.shape} differ")
    ga, gb = _grayscale(ad), _grayscale(bd)
    win = _gaussian_window()
    if ga.shape[0] < win.shape[0] or ga.shape[1] < win.shape[1]:
        raise ShapeError(f"image {ga.shape} smaller than the {win.shape} ssim window")
    w4 = win.reshape(1, 1, *win.shape)

    def filt(img):
        h_out = img.shape[0] - win.shape[0] + 1
        w_out = img.shape[1] - win.shape[1] + 1
        return _forward_padded_im2col(img.reshape(1, 1, *img.shape), w4, 1, h_out, w_out)[0, 0]

    mu_a = filt(ga)
    mu_b = filt(gb)
    var_a = filt(ga * ga) - mu_a * mu_a
    var_b = filt(gb * gb) - mu_b * mu_b
    cov = filt(ga * gb) - mu_a * mu_b
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def count_parameters(model: Module) -> int:
    """Exact number of optimizable scalars."""
    return sum(p.size for _, p in model.named_parameters())


@dataclass
class EvalReport:
    entries: list = field(default_factory=list)  # (name, psnr_db, ssim)
    model_fingerprint: str = ""
    config_echo: str = ""

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([e[1] for e in self.entries])) if self.entries else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([e[2] for e in self.entries])) if self.entries else math.nan

    def to_csv(self) -> str:
        lines = [SSIM_HEADER, "image,psnr_db,ssim"]
        for name, p, s in self.entries:
            lines.append(f"{name},{p:.6f},{s:.6f}")
        lines.append(f"mean,{self.mean_psnr:.6f},{self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"


def pad_to_even(img: np.ndarray):
    """Reflect-pad H and W up to even sizes; returns (padded, (H, W))."""
    h, w = img.shape[-2:]
    ph, pw = h % 2, w % 2
    if ph == 0 and pw == 0:
        return img, (h, w)
    pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(img, pad, mode="reflect"), (h, w)


def evaluate(model: Module, dataset, fingerprint: str = "", config_echo: str = "") -> EvalReport:
    """Per-image metrics over (name, clean, noisy) triples on full images."""
    model.eval()
    report = EvalReport(model_fingerprint=fingerprint, config_echo=config_echo)
    for name, clean, noisy in dataset:
        cd, nd = _as_array(clean), _as_array(noisy)
        padded, (h, w) = pad_to_even(nd)
        out = model(Tensor(padded[None] if padded.ndim == 3 else padded))
        denoised = out.data[0, :, :h, :w]
        report.entries.append((name, psnr(cd, denoised), ssim(cd, denoised)))
    return report
