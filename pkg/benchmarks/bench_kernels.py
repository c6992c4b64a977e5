"""Time the compiled kernels against the numpy fallback on the hot loops.

Run with ``python3 benchmarks/bench_kernels.py [--n 20000] [--K 10] [--repeat 5]``.
"""

import argparse
import timeit

import numpy as np

from evidential_alignment import _fallback

try:
    from evidential_alignment import _kernels
except ImportError:
    _kernels = None


def cases(n, K, seed=0):
    rng = np.random.default_rng(seed)
    logits = rng.normal(0.0, 2.0, size=(n, K))
    y = rng.integers(0, K, size=n)
    w = rng.uniform(0.0, 1.0, size=n)
    z = rng.uniform(0.1, 50.0, size=n * K)
    alpha = 1.0 + rng.exponential(3.0, size=(n, K))
    return {
        "lgamma": lambda m: m.lgamma(z),
        "digamma": lambda m: m.digamma(z),
        "trigamma": lambda m: m.trigamma(z),
        "kl_uniform_grad": lambda m: m.kl_uniform_grad(alpha),
        "stage1_batch": lambda m: m.stage1_batch(logits, y, 0.5, 0, 0),
        "stage2_batch": lambda m: m.stage2_batch(logits, y, w, 0),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is timed")
    print(f"n={args.n} K={args.K}, best of {args.repeat} (ms)")
    print(f"{'kernel':<16} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for name, fn in cases(args.n, args.K).items():
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:<16} {t_py:10.2f} {'-':>10} {'-':>8}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16} {t_py:10.2f} {t_c:10.2f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
