"""Time the compiled kernels against the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py``; prints the median wall time of each
kernel per backend and the speedup. Sizes match one pool-mode iteration on a
50 x 50 pool with K = 30 samples and 1000 features.
"""
import argparse
import math
import timeit

import numpy as np

from bljes import _pykernels

try:
    from bljes import _ckernels
except ImportError:
    _ckernels = None


def cases(rng, n_points, n_features):
    Z = rng.random((n_points, 2))
    W = rng.standard_normal((n_features, 2)) * 4
    b = rng.uniform(0, 2 * math.pi, n_features)
    w = rng.standard_normal(n_features)
    rff_args = (Z, W, b, w, math.sqrt(2 / n_features), 0.0)
    z = rng.normal(0, 6, n_points)
    n = n_points
    trunc_args = (rng.normal(size=n), rng.normal(size=n), rng.uniform(0.01, 2, n), rng.normal(size=n),
                  rng.uniform(0.01, 2, n), rng.normal(size=n), rng.uniform(0.01, 2, n), rng.normal(size=n),
                  rng.uniform(0.5, 2, n), rng.normal(size=n) * 5, rng.random(n) < 0.02)
    return {
        "rff_eval": rff_args,
        "rff_eval_grad": rff_args,
        "log_ndtr": (z,),
        "trunc_log_ratio": trunc_args,
    }


def bench(fn, args, repeat):
    times = timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)
    return float(np.median(times))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=2500)
    parser.add_argument("--features", type=int, default=1000)
    parser.add_argument("--repeat", type=int, default=15)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; only the fallback can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}")
    for name, fargs in cases(rng, args.points, args.features).items():
        t_py = bench(getattr(_pykernels, name), fargs, args.repeat)
        if _ckernels is None:
            print(f"{name:<16}{1e3 * t_py:>14.3f}{'-':>14}{'-':>10}")
            continue
        t_c = bench(getattr(_ckernels, name), fargs, args.repeat)
        print(f"{name:<16}{1e3 * t_py:>14.3f}{1e3 * t_c:>14.3f}{t_py / t_c:>9.2f}x")


if __name__ == "__main__":
    main()
