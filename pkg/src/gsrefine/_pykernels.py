"""Pure-Python kernels. Reference behaviour for the compiled ``_ckernels``.

Both implementations consume the same SplitMix64 streams in the same order,
so walks agree exactly and skip-gram embeddings agree to float rounding.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right

import numpy as np

from .rng import SplitMixStream, derive_seed

BACKEND = "python"


def _has_edge(indices, indptr, a, b):
    lo, hi = indptr[a], indptr[a + 1]
    k = bisect_left(indices, b, lo, hi)
    return k < hi and indices[k] == b


def random_walks(indptr, indices, starts, walk_ids, seed, p, q, walk_length):
    indptr_l = np.asarray(indptr).tolist()
    indices_l = np.asarray(indices).tolist()
    inv_p = 1.0 / p
    inv_q = 1.0 / q
    out = np.empty((len(starts), walk_length), dtype=np.int64)
    for row, (start, wid) in enumerate(zip(np.asarray(starts).tolist(), np.asarray(walk_ids).tolist())):
        rng = SplitMixStream(derive_seed(seed, start, wid))
        walk = [start]
        lo, hi = indptr_l[start], indptr_l[start + 1]
        walk.append(indices_l[lo + rng.below(hi - lo)])
        while len(walk) < walk_length:
            t, v = walk[-2], walk[-1]
            lo, hi = indptr_l[v], indptr_l[v + 1]
            weights = []
            total = 0.0
            for k in range(lo, hi):
                x = indices_l[k]
                if x == t:
                    w = inv_p
                elif _has_edge(indices_l, indptr_l, x, t):
                    w = 1.0
                else:
                    w = inv_q
                weights.append(w)
                total += w
            r = rng.uniform() * total
            acc = 0.0
            chosen = hi - 1
            for k in range(lo, hi):
                acc += weights[k - lo]
                if r < acc:
                    chosen = k
                    break
            walk.append(indices_l[chosen])
        out[row] = walk
    return out


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def pairs_per_walk(walk_length, window):
    return sum(min(walk_length - 1, i + window) - max(0, i - window) for i in range(walk_length))


def sgns_train(walks, syn0, syn1, neg_cdf, window, negatives, epochs, lr0, stream_seed):
    """Skip-gram with negative sampling, in place on ``syn0`` / ``syn1``."""
    walks = np.asarray(walks)
    n_walks, length = walks.shape
    total = max(1, epochs * n_walks * pairs_per_walk(length, window))
    cdf = np.asarray(neg_cdf).tolist()
    last = len(cdf) - 1
    rng = SplitMixStream(stream_seed)
    done = 0
    for _ in range(epochs):
        for walk in walks.tolist():
            for i, center in enumerate(walk):
                for j in range(max(0, i - window), min(length - 1, i + window) + 1):
                    if j == i:
                        continue
                    context = walk[j]
                    lr = lr0 * max(1e-4, 1.0 - done / total)
                    done += 1
                    u = syn0[center]
                    neu1e = np.zeros_like(u)
                    for k in range(negatives + 1):
                        if k == 0:
                            target, label = context, 1.0
                        else:
                            target = min(bisect_right(cdf, rng.uniform()), last)
                            if target == context:
                                continue
                            label = 0.0
                        v = syn1[target]
                        g = (label - _sigmoid(float(u @ v))) * lr
                        neu1e += g * v
                        syn1[target] = v + g * u
                    syn0[center] = u + neu1e
