"""Class-homophily filtered augmentation of the extracted sub-graph."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .extract import KnnCandidates
from .graph import edge_union

PROB_TOL = 1e-6


class EvalCounter:
    """Counts JSD evaluations; read by the complexity checks."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


jsd_counter = EvalCounter()


def _check_prob(p: np.ndarray, name: str):
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    s = p.sum(axis=-1)
    if np.any(np.abs(s - 1.0) > PROB_TOL):
        raise ValueError(f"{name} does not sum to 1 (sum={s})")


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in bits, so the result lies in [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError("p and q must be probability vectors of equal length")
    _check_prob(p, "p")
    _check_prob(q, "q")
    jsd_counter.count += 1
    return float(_jsd_rows(p[None, :], q[None, :])[0])


def _kl_to_mid(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    safe_a = np.where(a > 0, a, 1.0)
    safe_m = np.where(a > 0, m, 1.0)
    return np.sum(np.where(a > 0, a * np.log2(safe_a / safe_m), 0.0), axis=-1)


def _jsd_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    m = 0.5 * (p + q)
    return np.clip(0.5 * _kl_to_mid(p, m) + 0.5 * _kl_to_mid(q, m), 0.0, 1.0)


def pair_jsd(probs: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """JSD between the probability rows of each (i, j) in ``pairs``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    jsd_counter.count += len(pairs)
    if len(pairs) == 0:
        return np.zeros(0)
    return _jsd_rows(probs[pairs[:, 0]], probs[pairs[:, 1]])


@dataclass(frozen=True, eq=False)
class AugmentedEdgeSet:
    base: np.ndarray
    added_fs: np.ndarray
    added_sp: np.ndarray
    union: np.ndarray
    jsd_evaluations: int


def select_smallest(scores: np.ndarray, count: int) -> np.ndarray:
    order = np.argsort(scores, kind="stable")
    return np.sort(order[:count])


def augment_subgraph(
    base: np.ndarray,
    probs: np.ndarray,
    candidates: KnnCandidates,
    lambda_aug: float,
    num_nodes: int | None = None,
) -> AugmentedEdgeSet:
    """Add the ``floor(|base| * lambda_aug)`` lowest-JSD pairs from each kNN
    candidate set to ``base``.

    ``probs`` holds one class-probability row per node id. JSD is evaluated
    only on candidate pairs.
    """
    if not 0.0 <= lambda_aug <= 1.0:
        raise ValueError("lambda_aug must lie in [0, 1]")
    probs = np.asarray(probs, dtype=np.float64)
    num_nodes = probs.shape[0] if num_nodes is None else num_nodes
    n_add = math.floor(len(base) * lambda_aug)
    empty = np.zeros((0, 2), dtype=np.int64)
    if n_add == 0:
        return AugmentedEdgeSet(base, empty, empty, np.asarray(base, dtype=np.int64), 0)

    before = jsd_counter.count
    fs, sp = candidates.e_fs_k, candidates.e_sp_k
    added_fs = fs[select_smallest(pair_jsd(probs, fs), n_add)] if len(fs) else empty
    added_sp = sp[select_smallest(pair_jsd(probs, sp), n_add)] if len(sp) else empty
    union = edge_union(num_nodes, base, added_fs, added_sp)
    return AugmentedEdgeSet(base, added_fs, added_sp, union, jsd_counter.count - before)
