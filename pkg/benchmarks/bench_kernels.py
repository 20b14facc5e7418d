"""Compare the compiled and numpy conv gather/scatter backends.

Run:  python3 benchmarks/bench_kernels.py [--repeat N]

Times im2col/col2im alone and one full conv2d forward+backward at the
training shape (B=16, 64 channels, 40x40), for each available backend.
"""

import argparse
import time

import numpy as np

from despeckle.autodiff import kernels, ops
from despeckle.autodiff.tensor import Tensor


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def conv_step(x, w, b):
    y = ops.conv2d(Tensor(x, requires_grad=True), Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))
    ops.sum_squares(y).backward()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--size", type=int, default=40)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    B, C, S = args.batch, args.channels, args.size
    x = rng.standard_normal((B, C, S, S))
    cols = rng.standard_normal((B, C * 9, S, S))
    w = rng.standard_normal((C, C, 3, 3)) * 0.05
    b = np.zeros(C)

    backends = [("numpy", kernels.fallback)]
    if kernels.compiled is not None:
        backends.insert(0, ("compiled", kernels.compiled))
    initial = kernels.BACKEND
    print(f"shape B={B} C={C} {S}x{S}, best of {args.repeat}")
    print(f"{'backend':<10}{'im2col s':>12}{'col2im s':>12}{'conv fwd+bwd s':>18}")
    results = {}
    for name, mod in backends:
        kernels.use(name)
        t1 = best_of(lambda: mod.im2col3x3(x), args.repeat)
        t2 = best_of(lambda: mod.col2im3x3(cols, C), args.repeat)
        t3 = best_of(lambda: conv_step(x, w, b), args.repeat)
        results[name] = (t1, t2, t3)
        print(f"{name:<10}{t1:>12.4f}{t2:>12.4f}{t3:>18.4f}")
    kernels.use(initial)
    if len(results) == 2:
        c, n = results["compiled"], results["numpy"]
        print("speedup   " + "".join(f"{n[k] / c[k]:>{wd}.2f}x" for k, wd in ((0, 11), (1, 11), (2, 17))))
        same = np.array_equal(kernels.compiled.im2col3x3(x), kernels.fallback.im2col3x3(x)) and np.array_equal(
            kernels.compiled.col2im3x3(cols, C), kernels.fallback.col2im3x3(cols, C)
        )
        print(f"bitwise identical outputs: {same}")


if __name__ == "__main__":
    main()
