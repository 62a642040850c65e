"""Hot convolution kernels.

Three primitives cover conv2d forward, its input/weight gradients, and (by
reuse) transposed convolution:

* ``conv2d_forward``      y[n,co,i,j] = sum_ci,u,v x[n,ci,i*s-p+u, j*s-p+v] * w[co,ci,u,v]
* ``conv2d_input_grad``   adjoint of the above w.r.t. x
* ``conv2d_weight_grad``  adjoint w.r.t. w

Each primitive has a numba implementation (zero-padded up front so the inner
loops are branch-free and auto-vectorize; parallel over disjoint output tiles,
so results are bitwise independent of thread count) and a pure numpy im2col
implementation. The input gradient is computed as a stride-1 forward pass
over a zero-stuffed gradient with the channel-swapped, rotated kernel on both
backends. Dispatch follows :mod:`grdn.backend`.
"""

import numpy as np

from . import backend
from .errors import ShapeError

if backend.HAS_NUMBA:
    from numba import njit, prange
else:  # pragma: no cover - exercised only where numba is absent
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap

    prange = range


# Above this many multiply-accumulates (or for strided inner loops, which do
# not auto-vectorize) the BLAS-backed im2col path overtakes the direct loops;
# measured on the benchmark in benchmarks/bench_kernels.py.
DIRECT_MAC_LIMIT = 32_000_000


def _use_direct(macs: int, stride: int) -> bool:
    return stride == 1 and macs <= DIRECT_MAC_LIMIT


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv_transpose_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + k


def _pad_hw(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


# ---------------------------------------------------------------------------
# numba paths (input already padded, accumulation rows are contiguous)


@njit(parallel=True, cache=True)
def _forward_padded_direct(xp, w, stride, out):
    n_b, c_in = xp.shape[0], xp.shape[1]
    c_out, k = w.shape[0], w.shape[2]
    h_out, w_out = out.shape[2], out.shape[3]
    for tile in prange(n_b * c_out):
        n = tile // c_out
        co = tile % c_out
        for ci in range(c_in):
            for u in range(k):
                for v in range(k):
                    wval = w[co, ci, u, v]
                    for i in range(h_out):
                        xrow = xp[n, ci, i * stride + u]
                        orow = out[n, co, i]
                        if stride == 1:
                            for j in range(w_out):
                                orow[j] += wval * xrow[j + v]
                        else:
                            for j in range(w_out):
                                orow[j] += wval * xrow[j * stride + v]
    return out


@njit(parallel=True, cache=True)
def _weight_grad_padded_direct(xp, gy, stride, gw):
    c_in = xp.shape[1]
    n_b, c_out, h_out, w_out = gy.shape
    k = gw.shape[2]
    for tile in prange(c_out * c_in):
        co = tile // c_in
        ci = tile % c_in
        partial = np.zeros(w_out, dtype=gw.dtype)
        for u in range(k):
            for v in range(k):
                partial[:] = 0.0
                for n in range(n_b):
                    for i in range(h_out):
                        grow = gy[n, co, i]
                        xrow = xp[n, ci, i * stride + u]
                        if stride == 1:
                            for j in range(w_out):
                                partial[j] += grow[j] * xrow[j + v]
                        else:
                            for j in range(w_out):
                                partial[j] += grow[j] * xrow[j * stride + v]
                acc = 0.0
                for j in range(w_out):
                    acc += partial[j]
                gw[co, ci, u, v] = acc
    return gw


# ---------------------------------------------------------------------------
# numpy im2col paths


def _windows(x_padded, h_out, w_out, k, stride):
    n, c, _, _ = x_padded.shape
    sn, sc, sh, sw = x_padded.strides
    return np.lib.stride_tricks.as_strided(
        x_padded,
        (n, c, h_out, w_out, k, k),
        (sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def _forward_padded_im2col(xp, w, stride, h_out, w_out):
    win = _windows(xp, h_out, w_out, w.shape[2], stride)
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def _weight_grad_padded_im2col(xp, gy, stride, k):
    win = _windows(xp, gy.shape[2], gy.shape[3], k, stride)
    gw = np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))
    return np.ascontiguousarray(gw)


# ---------------------------------------------------------------------------
# shared preprocessing


def _input_grad_as_forward(gy, w, stride, pad, h, w_in):
    """Re-express the input gradient as a stride-1 forward pass.

    The output gradient is zero-stuffed by the stride and framed with
    k-1-pad zeros (plus the pixels the strided forward dropped on the
    right/bottom); the kernel is channel-swapped and rotated 180 degrees.
    """
    n, c_out, h_out, w_out = gy.shape
    k = w.shape[2]
    rh = (h + 2 * pad - k) % stride
    rw = (w_in + 2 * pad - k) % stride
    edge = k - 1 - pad
    buf_h = (h_out - 1) * stride + 1 + 2 * edge + rh
    buf_w = (w_out - 1) * stride + 1 + 2 * edge + rw
    buf = np.zeros((n, c_out, buf_h, buf_w), dtype=gy.dtype)
    buf[:, :, edge : edge + (h_out - 1) * stride + 1 : stride,
        edge : edge + (w_out - 1) * stride + 1 : stride] = gy
    w_t = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return buf, w_t


# ---------------------------------------------------------------------------
# dispatchers


def _check_conv_args(x, w, stride, pad):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d kernel must be square, got {w.shape}")
    if stride < 1 or pad < 0:
        raise ValueError(f"invalid stride={stride} or padding={pad}")
    if pad > w.shape[2] - 1:
        raise ValueError(f"padding {pad} exceeds kernel size {w.shape[2]} - 1")


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Cross-correlation of (N,Ci,H,W) with (Co,Ci,k,k), zero padding."""
    _check_conv_args(x, w, stride, pad)
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[1]} channels, weight expects {w.shape[1]}"
        )
    h_out = conv_output_size(x.shape[2], w.shape[2], stride, pad)
    w_out = conv_output_size(x.shape[3], w.shape[2], stride, pad)
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"non-positive conv output {h_out}x{w_out} for input {x.shape} and weight {w.shape}"
        )
    xp = _pad_hw(x, pad)
    macs = x.shape[0] * w.shape[0] * h_out * w_out * w.shape[1] * w.shape[2] ** 2
    if backend.get_backend() == "numba" and _use_direct(macs, stride):
        out = np.zeros((x.shape[0], w.shape[0], h_out, w_out), dtype=x.dtype)
        return _forward_padded_direct(xp, w, stride, out)
    return _forward_padded_im2col(xp, w, stride, h_out, w_out)


def conv2d_input_grad(
    gy: np.ndarray, w: np.ndarray, stride: int, pad: int, h: int, w_in: int
) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. its input of spatial size (h, w_in)."""
    _check_conv_args(gy, w, stride, pad)
    if gy.shape[1] != w.shape[0]:
        raise ShapeError(
            f"channel mismatch: grad has {gy.shape[1]} channels, weight produces {w.shape[0]}"
        )
    buf, w_t = _input_grad_as_forward(gy, w, stride, pad, h, w_in)
    macs = gy.shape[0] * w.shape[1] * h * w_in * w.shape[0] * w.shape[2] ** 2
    if backend.get_backend() == "numba" and _use_direct(macs, 1):
        gx = np.zeros((gy.shape[0], w.shape[1], h, w_in), dtype=gy.dtype)
        return _forward_padded_direct(buf, w_t, 1, gx)
    return _forward_padded_im2col(buf, w_t, 1, h, w_in)


def conv2d_weight_grad(
    x: np.ndarray, gy: np.ndarray, stride: int, pad: int, k: int
) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. a (Co,Ci,k,k) weight."""
    if x.shape[0] != gy.shape[0]:
        raise ShapeError(f"batch mismatch between {x.shape} and {gy.shape}")
    xp = _pad_hw(x, pad)
    gy = np.ascontiguousarray(gy)
    macs = gy.shape[0] * gy.shape[1] * gy.shape[2] * gy.shape[3] * x.shape[1] * k * k
    if backend.get_backend() == "numba" and _use_direct(macs, stride):
        gw = np.empty((gy.shape[1], x.shape[1], k, k), dtype=x.dtype)
        return _weight_grad_padded_direct(xp, gy, stride, gw)
    return _weight_grad_padded_im2col(xp, gy, stride, k)
