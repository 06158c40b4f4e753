"""Time the numba kernels against the numpy fallback on toy-model shapes.

    python benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so the env flag is not needed here.
The last column is the numpy/numba time ratio (above 1 means numba wins).
"""
import argparse
import time

import numpy as np

from sparsefuse.kernels import _numba as nb
from sparsefuse.kernels import _numpy as npk


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile for numba)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, 48, 96))
    w = rng.normal(size=(16, 8, 3, 3))
    b = rng.normal(size=16)
    dy = rng.normal(size=(16, 24, 48))
    xd = rng.normal(size=(16, 24, 48))
    wd = rng.normal(size=(16, 1, 3, 3))
    depth = rng.uniform(1, 150, size=(48, 96))
    mask = rng.random((48, 96)) < 0.005
    yield "conv2d fwd 8->16 s1 48x96", lambda k: k.conv2d_forward(x, w, b, 1)
    yield "conv2d bwd 8->16 s2 48x96", lambda k: k.conv2d_backward(x, w, dy, 2)
    yield "dwconv fwd 16ch 24x48", lambda k: k.dwconv2d_forward(xd, wd, 1)
    yield "dwconv bwd 16ch 24x48", lambda k: k.dwconv2d_backward(xd, wd, xd, 1)
    yield "nn_fill r8 0.5%", lambda k: k.nn_fill(depth, mask, 8)
    yield "idw densify 0.5%", lambda k: k.idw_densify(depth, mask, 4, 2.0)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"{'kernel':30s} {'numpy ms':>10s} {'numba ms':>10s} {'ratio':>7s}")
    for name, call in cases():
        t_np = best_of(lambda: call(npk), args.repeat)
        t_nb = best_of(lambda: call(nb), args.repeat)
        print(f"{name:30s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:7.2f}")


if __name__ == "__main__":
    main()
