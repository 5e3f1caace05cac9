"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one CSV row per (kernel, S, D) with the median wall time of each
backend and the speed-up. Both backends are checked to agree first.
"""

import argparse
import sys
import timeit

import numpy as np

from ccopt import _matern_py

try:
    from ccopt import _matern_ext
except ImportError:
    _matern_ext = None

SIZES = [(50, 9), (200, 9), (200, 24), (500, 27)]


def cases(S, D, rng):
    X = rng.random((S, D))
    Y = rng.random((64, D))
    y = rng.standard_normal(S)
    inv_ls = 1.0 / rng.uniform(0.2, 2.0, D)
    theta = np.concatenate([np.log(1.0 / inv_ls), [0.0, np.log(1e-2)]])
    W = np.outer(y, y) - np.eye(S)
    return {
        "cov_sym": lambda m: m.cov_sym(X, inv_ls, 1.0),
        "cov": lambda m: m.cov(Y, X, inv_ls, 1.0),
        "lengthscale_grad": lambda m: m.lengthscale_grad(X, inv_ls, 1.0, W),
        "lml_grad": lambda m: m.lml_grad(X, y, theta, 1e-10, 1e-4),
    }


def median_time(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-6)))
    return float(np.median(timeit.repeat(fn, number=number, repeat=repeat))) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _matern_ext is None:
        print("compiled backend not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print("kernel,S,D,python_ms,cython_ms,speedup")
    for S, D in SIZES:
        for name, call in cases(S, D, rng).items():
            a, b = call(_matern_py), call(_matern_ext)
            pairs = zip(a, b) if name == "lml_grad" else [(a, b)]
            for u, v in pairs:
                np.testing.assert_allclose(u, v, rtol=1e-8, atol=1e-9)
            tp = median_time(lambda: call(_matern_py), args.repeat)
            tc = median_time(lambda: call(_matern_ext), args.repeat)
            print(f"{name},{S},{D},{tp * 1e3:.4g},{tc * 1e3:.4g},{tp / tc:.3g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
