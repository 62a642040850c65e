"""Differentiable-tensor library with a grouped residual dense denoiser and a
conditioned relativistic GAN for camera-noise synthesis."""

from .tensor import Tensor

__all__ = ["Tensor"]
__version__ = "0.1.0"
