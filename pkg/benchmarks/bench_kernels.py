"""Time the numba kernels against their numpy twins on typical problem sizes.

    python benchmarks/bench_kernels.py [--repeat 5]

The numba path is what ``mrfsig.kernels`` uses by default; setting
``MRFSIG_DISABLE_NUMBA=1`` switches the package to the numpy path.
"""
import argparse
import timeit

import numpy as np

from mrfsig.gibbs_core import ParamVector
from mrfsig.kernels import _numba, _numpy


def problem(d, n, pair_prob, seed=0):
    rng = np.random.default_rng(seed)
    pairs = [(s, t) for s in range(d) for t in range(s + 1, d) if rng.random() < pair_prob]
    theta = ParamVector(d, rng.uniform(-0.5, 0.5, d), tuple(pairs), rng.uniform(-0.5, 0.5, len(pairs)))
    X = np.unique(rng.integers(0, 2, (n, d)).astype(np.uint8), axis=0)
    w = np.full(X.shape[0], 1.0 / X.shape[0])
    pi, pj = theta.pair_arrays()
    return X, w, theta.flat, pi, pj


def cases(d, n, pair_prob):
    X, w, T, pi, pj = problem(d, n, pair_prob)
    active = np.ones(T.size, dtype=bool)
    x0 = np.zeros(d, dtype=np.uint8)
    U = np.random.default_rng(1).random((100 + 200 * 5, d))
    return {
        "pl_value_grad": lambda m: m.pl_value_grad(X, w, T, pi, pj),
        "pl_hessian": lambda m: m.pl_hessian(X, w, T, pi, pj),
        "ascent x200": lambda m: m.ascent(X, w, np.zeros_like(T), active, pi, pj, 0.05, 200, 0.0),
        "gibbs n=200": lambda m: m.gibbs(T, pi, pj, x0, U, 100, 5, 200),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    sizes = [(8, 200, 0.3), (18, 200, 0.1), (30, 200, 1.0)]
    print(f"{'kernel':<14} {'d':>3} {'pairs':>5} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for d, n, pp in sizes:
        for name, call in cases(d, n, pp).items():
            call(_numba)  # compile
            t_np = min(timeit.repeat(lambda: call(_numpy), number=1, repeat=args.repeat))
            t_nb = min(timeit.repeat(lambda: call(_numba), number=1, repeat=args.repeat))
            k = problem(d, n, pp)[2].size - d
            print(f"{name:<14} {d:>3} {k:>5} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
