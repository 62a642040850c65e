"""Benchmark the convolution kernels: numba direct loops vs numpy im2col.

Run as:  python benchmarks/bench_kernels.py [--reps N]

Prints per-shape timings for the three kernel primitives on both backends and
a small end-to-end training-step comparison. The crossover behind
``kernels.DIRECT_MAC_LIMIT`` (and the strided-loop exception) comes from this
table.
"""

import argparse
import time

import numpy as np

from grdn import backend, kernels
from grdn.config import TINY_CONFIG, parse_config
from grdn.training import default_sources, train_denoiser

SHAPES = [
    # n, c_in, hw, c_out, k, stride, pad, label
    (4, 8, 16, 8, 3, 1, 1, "tiny dense conv"),
    (4, 24, 16, 8, 3, 1, 1, "tiny dense conv (wide in)"),
    (4, 8, 32, 8, 4, 2, 1, "tiny down-conv s2"),
    (8, 16, 24, 16, 3, 1, 1, "gan resblock conv"),
    (8, 16, 24, 16, 4, 2, 1, "gan disc stage s2"),
    (1, 64, 48, 64, 3, 1, 1, "full-scale dense conv"),
    (16, 64, 24, 64, 3, 1, 1, "full-scale batch conv"),
]


def timeit(fn, *args, reps):
    fn(*args)  # warm up / compile
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps


def bench_kernels(reps):
    print(f"{'shape':28s} {'MACs':>12s} | {'numba':>9s} {'numpy':>9s} | winner")
    for n, ci, hw, co, k, s, p, label in SHAPES:
        x = np.random.standard_normal((n, ci, hw, hw)).astype(np.float32)
        w = np.random.standard_normal((co, ci, k, k)).astype(np.float32)
        ho = kernels.conv_output_size(hw, k, s, p)
        gy = np.random.standard_normal((n, co, ho, ho)).astype(np.float32)
        macs = n * co * ho * ho * ci * k * k
        rows = {}
        for name in ("numba", "numpy"):
            backend.set_backend(name)
            fwd = timeit(kernels.conv2d_forward, x, w, s, p, reps=reps)
            ig = timeit(kernels.conv2d_input_grad, gy, w, s, p, hw, hw, reps=reps)
            wg = timeit(kernels.conv2d_weight_grad, x, gy, s, p, k, reps=reps)
            rows[name] = fwd + ig + wg
        winner = min(rows, key=rows.get)
        print(f"{label:28s} {macs:>12,d} | {rows['numba']*1e6:8.0f}u {rows['numpy']*1e6:8.0f}u"
              f" | {winner}")
    backend.set_backend("auto")


def bench_training_step(iters):
    app = parse_config(
        TINY_CONFIG
        .replace("total_iterations = 5000", f"total_iterations = {iters}")
        .replace("val_every = 500", "val_every = 0")
        .replace("checkpoint_every = 2500", "checkpoint_every = 0")
    )
    train, val = default_sources(app)
    print(f"\nend-to-end denoiser training step ({iters} iterations):")
    for name in ("numba", "numpy"):
        backend.set_backend(name)
        t0 = time.perf_counter()
        train_denoiser(app, train, val, f"/tmp/grdn_bench_{name}")
        dt = (time.perf_counter() - t0) / iters
        print(f"  {name:6s} {dt * 1e3:7.1f} ms/iter")
    backend.set_backend("auto")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=50)
    parser.add_argument("--train-iters", type=int, default=40)
    args = parser.parse_args()
    if not backend.HAS_NUMBA:
        print("numba not importable; only the numpy path is available")
        return
    print(f"active backend by default: {backend.get_backend()}")
    bench_kernels(args.reps)
    bench_training_step(args.train_iters)


if __name__ == "__main__":
    main()
