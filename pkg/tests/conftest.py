import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def conv2d_oracle(x, w, b, stride, pad):
    """Direct 7-loop summation reference, independent of the kernel paths."""
    n_b, c_in, h, w_in = x.shape
    c_out, _, k, _ = w.shape
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (w_in + 2 * pad - k) // stride + 1
    out = np.zeros((n_b, c_out, h_out, w_out), dtype=x.dtype)
    for n in range(n_b):
        for co in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    acc = 0.0
                    for ci in range(c_in):
                        for u in range(k):
                            for v in range(k):
                                hi = i * stride - pad + u
                                wi = j * stride - pad + v
                                if 0 <= hi < h and 0 <= wi < w_in:
                                    acc += x[n, ci, hi, wi] * w[co, ci, u, v]
                    out[n, co, i, j] = acc + (b[co] if b is not None else 0.0)
    return out
