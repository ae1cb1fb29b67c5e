"""Clean sub-graph extraction and kNN candidate construction (run once,
before training)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .graph import GraphBundle, canonical_edges, edge_isin
from .node2vec import EmbeddingMatrix, normalize_rows, pair_cosine


@dataclass(frozen=True, eq=False)
class ScoredEdgeSet:
    edges: np.ndarray
    s_sp: np.ndarray
    s_fs: np.ndarray


@dataclass(frozen=True, eq=False)
class KnnCandidates:
    e_fs_k: np.ndarray
    e_sp_k: np.ndarray
    k: int


def score_edges(bundle: GraphBundle, h_sp: EmbeddingMatrix) -> ScoredEdgeSet:
    if len(h_sp) != bundle.num_nodes:
        raise ValueError(f"need {bundle.num_nodes} embedding rows, got {len(h_sp)}")
    return ScoredEdgeSet(
        edges=bundle.edges,
        s_sp=pair_cosine(h_sp.vectors, bundle.edges),
        s_fs=pair_cosine(bundle.features, bundle.edges),
    )


def top_fraction(scores: np.ndarray, fraction: float) -> np.ndarray:
    """Indices of the floor(len * fraction) highest scores.

    Ties go to the lower index (edges are kept in canonical order)."""
    count = math.floor(len(scores) * fraction)
    order = np.argsort(-np.asarray(scores), kind="stable")
    return np.sort(order[:count])


def extract_subgraph(scored: ScoredEdgeSet, lambda_sp: float, lambda_fs: float) -> np.ndarray:
    """Edges among the top-``lambda_sp`` by structural proximity *and* the
    top-``lambda_fs`` by feature similarity."""
    for name, lam in (("lambda_sp", lambda_sp), ("lambda_fs", lambda_fs)):
        if not 0.0 < lam <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1], got {lam}")
    keep_sp = top_fraction(scored.s_sp, lambda_sp)
    keep_fs = top_fraction(scored.s_fs, lambda_fs)
    keep = np.intersect1d(keep_sp, keep_fs, assume_unique=True)
    if len(keep) == 0:
        raise ValueError(
            f"extracted sub-graph is empty (|E|={len(scored.edges)}, top-sp={len(keep_sp)}, "
            f"top-fs={len(keep_fs)}); increase lambda_sp / lambda_fs"
        )
    return scored.edges[keep]


def subgraph_nodes(edges: np.ndarray) -> np.ndarray:
    return np.unique(np.asarray(edges, dtype=np.int64).ravel())


def knn_pairs(vectors: np.ndarray, node_set: np.ndarray, k: int, block: int = 1024) -> np.ndarray:
    """Canonical pairs linking each node to its k most cosine-similar peers
    within ``node_set``. Ties go to the lower node id."""
    node_set = np.asarray(node_set, dtype=np.int64)
    unit = normalize_rows(vectors[node_set])
    pairs = []
    for lo in range(0, len(node_set), block):
        sims = unit[lo:lo + block] @ unit.T
        rows = np.arange(sims.shape[0])
        sims[rows, lo + rows] = -np.inf
        nn = np.argsort(-sims, axis=1, kind="stable")[:, :k]
        src = np.repeat(node_set[lo:lo + block], k)
        pairs.append(np.stack([src, node_set[nn.ravel()]], axis=1))
    return canonical_edges(np.concatenate(pairs)) if pairs else np.zeros((0, 2), dtype=np.int64)


def build_knn_candidates(
    bundle: GraphBundle,
    h_sp: EmbeddingMatrix,
    node_set,
    k: int,
    exclude: np.ndarray | None = None,
) -> KnnCandidates:
    """Feature and structural kNN graphs over ``node_set``.

    Pairs listed in ``exclude`` (typically the extracted sub-graph, which the
    candidates are meant to supplement) are dropped after the kNN search.
    """
    node_set = np.unique(np.asarray(node_set, dtype=np.int64))
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(node_set) < 2:
        raise ValueError("need at least two nodes to build kNN candidates")
    if k >= len(node_set):
        warnings.warn(f"k={k} clamped to {len(node_set) - 1} (only {len(node_set)} nodes)", stacklevel=2)
        k = len(node_set) - 1
    fs = knn_pairs(bundle.features, node_set, k)
    sp = knn_pairs(h_sp.vectors, node_set, k)
    if exclude is not None and len(exclude):
        n = bundle.num_nodes
        fs = fs[~edge_isin(fs, exclude, n)]
        sp = sp[~edge_isin(sp, exclude, n)]
    return KnnCandidates(e_fs_k=fs, e_sp_k=sp, k=k)

