"""Time the compiled and pure-Python node2vec kernels on the same SBM graph.

    python benchmarks/bench_kernels.py [--nodes-per-block N] [--repeat R]
"""

import argparse
import time

import numpy as np

from gsrefine import kernels
from gsrefine.harness import generate_sbm
from gsrefine.node2vec import generate_walks, train_skipgram


def best_of(repeat, fn):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes-per-block", type=int, default=100)
    ap.add_argument("--walk-length", type=int, default=40)
    ap.add_argument("--walks-per-node", type=int, default=10)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    bundle = generate_sbm(2, args.nodes_per_block, 0.1, 0.002, seed=0)
    print(f"graph: {bundle.num_nodes} nodes, {bundle.num_edges} edges; backends: {sorted(kernels.BACKENDS)}")
    results = {}
    for name in sorted(kernels.BACKENDS):
        t_walk, corpus = best_of(args.repeat, lambda: generate_walks(
            bundle, 1.0, 0.5, args.walk_length, args.walks_per_node, seed=1, backend=name))
        t_sgns, emb = best_of(args.repeat, lambda: train_skipgram(
            corpus, args.dim, 5, 5, 1, 0.025, seed=1, backend=name))
        results[name] = (t_walk, t_sgns, emb.vectors)
        print(f"{name:>7}: walks {t_walk * 1e3:9.1f} ms   skip-gram {t_sgns * 1e3:9.1f} ms")
    if len(results) == 2:
        (wc, sc, vc), (wp, sp, vp) = results["cython"], results["python"]
        print(f"speed-up: walks x{wp / wc:.1f}, skip-gram x{sp / sc:.1f}; "
              f"max |embedding difference| {np.abs(vc - vp).max():.1e}")


if __name__ == "__main__":
    main()
