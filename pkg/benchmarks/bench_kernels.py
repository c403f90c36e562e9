"""Time one recommender SGD epoch on the compiled and the pure-Python backend.

    python benchmarks/bench_kernels.py [--users 600] [--items 800] [--repeat 3]
"""
import argparse
import time

import numpy as np

from shillab.kernels import BACKENDS
from shillab.recsys import sample_triples
from shillab.synthetic import synthetic_ratings


def time_backend(fn, data, d, eps, weight, repeat, seed):
    best = float("inf")
    for _ in range(repeat):
        rng = np.random.default_rng(seed)
        P = rng.normal(0, 0.1, (data.n_users, d))
        Q = rng.normal(0, 0.1, (data.n_items, d))
        u, i, j = sample_triples(data, 1, rng)
        t0 = time.perf_counter()
        fn(P, Q, u, i, j, 0.05, 1e-4, eps, weight, None)
        best = min(best, time.perf_counter() - t0)
    return best, P, Q


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=600)
    ap.add_argument("--items", type=int, default=800)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    data = synthetic_ratings(args.users, args.items, seed=args.seed)
    print(f"{len(data)} triples per epoch, d={args.d}")
    if "cython" not in BACKENDS:
        print("compiled backend unavailable; only the fallback is timed")
    for label, eps, weight in (("BPR", 0.0, 0.0), ("APR", 0.5, 1.0)):
        results = {}
        for name, fn in BACKENDS.items():
            t, P, Q = time_backend(fn, data, args.d, eps, weight, args.repeat, args.seed)
            results[name] = (t, P, Q)
            print(f"{label:4s} {name:7s} {t * 1e3:10.2f} ms/epoch")
        if len(results) == 2:
            (tc, Pc, Qc), (tp, Pp, Qp) = results["cython"], results["python"]
            same = np.array_equal(Pc, Pp) and np.array_equal(Qc, Qp)
            print(f"{label:4s} speedup {tp / tc:7.1f}x, identical parameters: {same}")


if __name__ == "__main__":
    main()
