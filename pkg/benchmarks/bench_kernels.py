"""Time the compiled and numpy log-einsum kernels on the same inputs.

    python benchmarks/bench_kernels.py --batch 200 --partitions 16 --K 10
"""

import argparse
import time

import numpy as np

from spanpc import kernels


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=200)
    ap.add_argument("--partitions", type=int, default=16)
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    B, P, K = args.batch, args.partitions, args.K
    left = rng.normal(size=(B, P, K)) - 5
    right = rng.normal(size=(B, P, K)) - 5
    shared = rng.random((P, K, K, K))
    shared /= shared.sum(axis=(-2, -1), keepdims=True)
    per_sample = np.broadcast_to(shared, (B,) + shared.shape).copy()
    grad = rng.normal(size=(B, P, K))

    print(f"batch={B} partitions={P} K={K} (best of {args.repeats})")
    print(f"{'backend':8s} {'weights':8s} {'forward ms':>11s} {'backward ms':>12s}")
    results = {}
    for name in kernels.available_backends():
        with kernels.using(name):
            for label, w in (("shared", shared), ("sample", per_sample)):
                out, a, c, s = kernels.log_einsum_forward(left, right, w)
                fwd = best_of(lambda: kernels.log_einsum_forward(left, right, w), args.repeats)
                bwd = best_of(lambda: kernels.log_einsum_backward(grad, a, c, s, w), args.repeats)
                results[name, label] = out
                print(f"{name:8s} {label:8s} {1e3 * fwd:11.3f} {1e3 * bwd:12.3f}")
    if len(kernels.available_backends()) > 1:
        for label in ("shared", "sample"):
            diff = np.max(np.abs(results["cython", label] - results["numpy", label]))
            print(f"max |cython - numpy| ({label}): {diff:.2e}")
    else:
        print("compiled backend unavailable; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
