"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--sizes 50 200 800] [--repeat 5]

JIT compilation happens in a warm-up call and is not timed.  Both backends
must return identical results before any timing is reported.
"""

import argparse
import timeit

import numpy as np

from tvgossip import _kernels
from tvgossip.graphs import random_connected_graph


def cases(n, rng):
    g = random_connected_graph(n, rng, 4.0 / n)
    indptr, indices = g.csr
    dist, pred = _kernels.numpy_impl.all_pairs_bfs(indptr, indices, n)
    k = 8
    q = rng.random((k, k))
    cum = np.cumsum(q / q.sum(axis=1, keepdims=True), axis=1)
    cum[:, -1] = 1.0
    u = rng.random(200 * n)
    held = rng.random((n, 64)) < 0.05
    return {
        "all_pairs_bfs": lambda impl: impl.all_pairs_bfs(indptr, indices, n),
        "path_edge_counts": lambda impl: impl.path_edge_counts(dist, pred),
        "markov_walk": lambda impl: impl.markov_walk(cum, 0, u),
        "neighborhood_union": lambda impl: impl.neighborhood_union(indptr, indices, held),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def best_time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 200, 800])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _kernels.numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20} {'n':>6} {'numpy [ms]':>12} {'numba [ms]':>12} {'speedup':>9}")
    for n in args.sizes:
        for name, call in cases(n, rng).items():
            ref = call(_kernels.numpy_impl)
            if not same(ref, call(_kernels.numba_impl)):  # also compiles
                raise SystemExit(f"{name} backends disagree at n={n}")
            t_np = best_time(lambda: call(_kernels.numpy_impl), args.repeat)
            t_nb = best_time(lambda: call(_kernels.numba_impl), args.repeat)
            print(f"{name:<20} {n:>6} {1e3 * t_np:>12.3f} {1e3 * t_nb:>12.3f} {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
