"""Structural node embeddings from biased second-order random walks and
skip-gram with negative sampling."""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .graph import GraphBundle
from .rng import derive_seed, generator

EMBED_MAGIC = b"N2VEMB01"


@dataclass(frozen=True, eq=False)
class WalkCorpus:
    walks: np.ndarray  # (num_walks, walk_length) node ids
    walk_length: int
    walks_per_node: int
    p: float
    q: float
    num_nodes: int
    degrees: np.ndarray


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class Node2VecConfig:
    p: float = 1.0
    q: float = 1.0
    dim: int = 128
    walk_length: int = 80
    walks_per_node: int = 10
    window: int = 10
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025


def transition_probs(indptr, indices, prev: int, cur: int, p: float, q: float) -> np.ndarray:
    """Second-order transition distribution over the neighbors of ``cur``.

    Weight 1/p back to ``prev``, 1 to neighbors shared with ``prev``, 1/q to
    everything else, normalized over the neighbors of ``cur`` (CSR order).
    """
    nbrs = indices[indptr[cur]:indptr[cur + 1]]
    prev_nbrs = indices[indptr[prev]:indptr[prev + 1]]
    w = np.where(nbrs == prev, 1.0 / p, np.where(np.isin(nbrs, prev_nbrs), 1.0, 1.0 / q))
    return w / w.sum()


def generate_walks(
    bundle: GraphBundle,
    p: float = 1.0,
    q: float = 1.0,
    walk_length: int = 80,
    walks_per_node: int = 10,
    seed: int = 0,
    workers: int = 1,
    backend: str | None = None,
) -> WalkCorpus:
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    if walk_length < 2:
        raise ValueError("walk_length must be at least 2")
    indptr, indices = bundle.csr
    degrees = np.diff(indptr)
    active = np.flatnonzero(degrees > 0)
    starts = np.tile(active, walks_per_node)
    walk_ids = np.repeat(np.arange(walks_per_node, dtype=np.int64), len(active))
    kern = kernels.get(backend)
    walk_seed = derive_seed(seed, "node2vec-walks")

    if workers <= 1 or len(starts) < 2:
        walks = kern.random_walks(indptr, indices, starts, walk_ids, walk_seed, p, q, walk_length)
    else:
        # per-walk streams make the result independent of chunking
        chunks = np.array_split(np.arange(len(starts)), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    lambda idx: kern.random_walks(
                        indptr, indices, starts[idx], walk_ids[idx], walk_seed, p, q, walk_length
                    ),
                    chunks,
                )
            )
        walks = np.concatenate(parts, axis=0)
    return WalkCorpus(
        walks=walks.reshape(len(starts), walk_length),
        walk_length=walk_length,
        walks_per_node=walks_per_node,
        p=p,
        q=q,
        num_nodes=bundle.num_nodes,
        degrees=degrees,
    )


def init_embeddings(num_nodes: int, dim: int, seed: int) -> np.ndarray:
    rng = generator(seed, "sgns-init")
    return rng.uniform(-0.5 / dim, 0.5 / dim, size=(num_nodes, dim))


def negative_cdf(degrees: np.ndarray) -> np.ndarray:
    weights = np.asarray(degrees, dtype=np.float64) ** 0.75
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


def train_skipgram(
    corpus: WalkCorpus,
    dim: int = 128,
    window: int = 10,
    negatives_per_positive: int = 5,
    epochs: int = 5,
    learning_rate: float = 0.025,
    seed: int = 0,
    backend: str | None = None,
) -> EmbeddingMatrix:
    """Train input vectors with the sigmoid skip-gram objective.

    The learning rate decays linearly to 1e-4 of its start value over all
    center/context pairs. Nodes that never appear in a walk keep their
    initialization vector.
    """
    syn0 = init_embeddings(corpus.num_nodes, dim, seed)
    if epochs == 0 or len(corpus.walks) == 0:
        return EmbeddingMatrix(syn0)
    syn1 = np.zeros_like(syn0)
    kernels.get(backend).sgns_train(
        np.ascontiguousarray(corpus.walks, dtype=np.int64),
        syn0,
        syn1,
        negative_cdf(corpus.degrees),
        window,
        negatives_per_positive,
        epochs,
        learning_rate,
        derive_seed(seed, "sgns-negatives"),
    )
    if not np.all(np.isfinite(syn0)):
        raise FloatingPointError("skip-gram training produced non-finite embeddings")
    return EmbeddingMatrix(syn0)


def sgns_pair_update(center, context, negatives, lr):
    """One skip-gram update for a single (center, context) pair.

    Returns the updated ``(center, context, negatives)``; inputs are not
    modified. Gradient step on ``-log s(c.x) - sum log s(-c.n)``.
    """
    center = np.array(center, dtype=np.float64)
    targets = [np.array(context, dtype=np.float64)] + [np.array(n, dtype=np.float64) for n in negatives]
    labels = [1.0] + [0.0] * (len(targets) - 1)
    neu1e = np.zeros_like(center)
    for t, label in zip(targets, labels):
        g = (label - 1.0 / (1.0 + np.exp(-(center @ t)))) * lr
        neu1e += g * t
        t += g * center
    return center + neu1e, targets[0], targets[1:]


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


def pair_cosine(mat: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity for each (i, j) in ``pairs``; 0 for zero rows."""
    unit = normalize_rows(mat)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    sims = np.einsum("ij,ij->i", unit[pairs[:, 0]], unit[pairs[:, 1]])
    return np.clip(sims, -1.0, 1.0)


def embed(bundle: GraphBundle, config: Node2VecConfig = Node2VecConfig(), seed: int = 0,
          workers: int = 1, backend: str | None = None) -> EmbeddingMatrix:
    corpus = generate_walks(bundle, config.p, config.q, config.walk_length, config.walks_per_node,
                            seed=seed, workers=workers, backend=backend)
    return train_skipgram(corpus, config.dim, config.window, config.negatives, config.epochs,
                          config.learning_rate, seed=seed, backend=backend)


def save_embeddings(emb: EmbeddingMatrix, path) -> None:
    n, dim = emb.vectors.shape
    with open(os.fspath(path), "wb") as fh:
        fh.write(EMBED_MAGIC + struct.pack("<II", n, dim))
        fh.write(np.ascontiguousarray(emb.vectors, dtype="<f4").tobytes())


def load_embeddings(path) -> EmbeddingMatrix:
    with open(os.fspath(path), "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:8] != EMBED_MAGIC:
            raise ValueError(f"{path}: not an embeddings.f32 file")
        n, dim = struct.unpack("<II", header[8:])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != n * dim:
        raise ValueError(f"{path}: expected {n * dim} values, found {data.size}")
    return EmbeddingMatrix(data.reshape(n, dim).astype(np.float64))
