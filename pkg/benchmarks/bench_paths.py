"""Compare the compiled and pure-Python path-enumeration kernels.

Usage: python3 benchmarks/bench_paths.py [--pairs N] [--max-nodes L] [--repeat R]

Both backends run on the same synthetic graph and pairs; the script checks
that they return identical path sets and reports the best-of-R wall time.
"""

import argparse
import time

import numpy as np

from kprn import synth
from kprn._backend import get
from kprn.graph import build_enriched_graph, split_interactions
from kprn.paths import extract_paths


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--max-nodes", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = synth.generate(users=100, items=100, attributes=10, per_user=8, noise_tags=2, seed=args.seed)
    split = split_interactions(data.interactions, 0.8, args.seed)
    graph = build_enriched_graph(data.triplets, data.interactions, data.entity_types, withhold=split.test_pairs())
    rng = np.random.default_rng(args.seed)
    users = rng.choice(graph.users, size=args.pairs)
    items = rng.choice(graph.items, size=args.pairs)
    pairs = list(zip(users.tolist(), items.tolist()))

    try:
        get("cython")
        backends = ["cython", "python"]
    except ImportError:
        print("compiled extension not built; timing the Python fallback only")
        backends = ["python"]

    results, timings = {}, {}
    for name in backends:
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            out = [extract_paths(graph, u, i, max_nodes=args.max_nodes, min_nodes=3, backend=name) for u, i in pairs]
            best = min(best, time.perf_counter() - t0)
        results[name], timings[name] = out, best

    n_paths = sum(len(ps) for ps in results[backends[0]])
    print(f"{len(pairs)} pairs, max_nodes={args.max_nodes}, {n_paths} paths")
    for name in backends:
        print(f"{name:>7}: {timings[name]:.4f} s  ({n_paths / timings[name]:.0f} paths/s)")
    if len(backends) == 2:
        same = all(a.same_as(b) for a, b in zip(results["cython"], results["python"]))
        print(f"speedup: {timings['python'] / timings['cython']:.1f}x, identical output: {same}")


if __name__ == "__main__":
    main()
