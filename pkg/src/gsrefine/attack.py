"""Poisoned-graph generation with ground-truth edge provenance.

Three generators: label-aware random edge injection (a stand-in for
gradient-based structure attacks), additive Gaussian feature noise, and an
e-commerce fraud simulator that adds co-review cliques and copies reviews.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import ADVERSARIAL, CLEAN, GraphBundle, edge_keys, keys_to_edges
from .rng import generator

INTER_CLASS_PROB = 0.9


@dataclass(frozen=True)
class AttackConfig:
    ptb_rate: float = 0.0
    gamma: float = 0.0
    noisy_node_frac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.ptb_rate < 0:
            raise ValueError("ptb_rate must be non-negative")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0.0 <= self.noisy_node_frac <= 1.0:
            raise ValueError("noisy_node_frac must lie in [0, 1]")


@dataclass(frozen=True)
class FraudConfig:
    num_fraudsters: int = 100
    reviews_per_fraudster: int = 100
    seed: int = 0
    blend: float = 0.5

    def __post_init__(self):
        if self.num_fraudsters < 1 or self.reviews_per_fraudster < 1:
            raise ValueError("fraudster and review counts must be at least 1")


def _base_provenance(bundle: GraphBundle) -> np.ndarray:
    if bundle.provenance is not None:
        return bundle.provenance
    return np.full(bundle.num_edges, CLEAN, dtype=np.int8)


def inject_structure_attack(bundle: GraphBundle, config: AttackConfig) -> GraphBundle:
    """Add ``floor(ptb_rate * |E|)`` new edges, mostly between differently
    labeled nodes, and tag them adversarial. Original edges are tagged clean."""
    n = bundle.num_nodes
    n_add = math.floor(config.ptb_rate * bundle.num_edges)
    clean_prov = np.full(bundle.num_edges, CLEAN, dtype=np.int8)
    if n_add == 0:
        return bundle.replace(provenance=clean_prov)

    free = n * (n - 1) // 2 - bundle.num_edges
    if n_add > free:
        raise ValueError(f"cannot place {n_add} new edges: only {free} non-edges remain")

    labels = bundle.labels
    labeled = np.flatnonzero(labels >= 0)
    counts = np.bincount(labels[labeled]) if len(labeled) else np.zeros(0, dtype=np.int64)
    inter_total = (len(labeled) ** 2 - int((counts**2).sum())) // 2
    existing = set(edge_keys(bundle.edges, n).tolist())
    inter_existing = int(np.sum(
        (labels[bundle.edges[:, 0]] >= 0)
        & (labels[bundle.edges[:, 1]] >= 0)
        & (labels[bundle.edges[:, 0]] != labels[bundle.edges[:, 1]])
    )) if bundle.num_edges else 0
    inter_free = inter_total - inter_existing

    rng = generator(config.seed, "structure-attack")
    added: list[int] = []
    while len(added) < n_add:
        if inter_free > 0 and rng.random() < INTER_CLASS_PROB:
            u, v = labeled[rng.integers(0, len(labeled), size=2)]
            if labels[u] == labels[v]:
                continue
        else:
            u, v = rng.integers(0, n, size=2)
            if u == v:
                continue
        key = int(min(u, v)) * n + int(max(u, v))
        if key in existing:
            continue
        existing.add(key)
        added.append(key)
        if labels[u] >= 0 and labels[v] >= 0 and labels[u] != labels[v]:
            inter_free -= 1

    new_edges = keys_to_edges(np.array(added, dtype=np.int64), n)
    edges = np.concatenate([bundle.edges, new_edges])
    prov = np.concatenate([clean_prov, np.full(len(new_edges), ADVERSARIAL, dtype=np.int8)])
    return bundle.replace(edges=edges, provenance=prov)


def inject_feature_noise(bundle: GraphBundle, config: AttackConfig) -> GraphBundle:
    """x_i <- x_i + gamma * m_i, m_i ~ N(0, I), on floor(frac * N) random rows."""
    if config.gamma <= 0:
        raise ValueError("feature noise requires gamma > 0")
    k = math.floor(config.noisy_node_frac * bundle.num_nodes)
    if k == 0:
        return bundle
    rng = generator(config.seed, "feature-noise")
    rows = np.sort(rng.choice(bundle.num_nodes, size=k, replace=False))
    features = bundle.features.copy()
    features[rows] += config.gamma * rng.standard_normal((k, bundle.num_features))
    return bundle.replace(features=features)


def fraudster_products(seed: int, fraudster: int, num_nodes: int, reviews: int) -> np.ndarray:
    """Products reviewed by one fraudster (sorted, distinct)."""
    rng = generator(seed, "fraudster", fraudster)
    return np.sort(rng.choice(num_nodes, size=reviews, replace=False))


def generate_fraud_graph(base: GraphBundle, config: FraudConfig) -> GraphBundle:
    """Simulate fraudsters writing fake reviews on random products.

    Each fraudster's product set becomes a co-review clique; pairs that are
    not already edges are tagged adversarial. Every attacked product's
    feature row is blended with the original row of one other random product.
    """
    n = base.num_nodes
    m = config.reviews_per_fraudster
    if m > n:
        raise ValueError(f"reviews_per_fraudster={m} exceeds the number of products {n}")

    new_keys = []
    attacked = set()
    for f in range(config.num_fraudsters):
        prods = fraudster_products(config.seed, f, n, m)
        attacked.update(prods.tolist())
        iu, ju = np.triu_indices(len(prods), k=1)
        new_keys.append(prods[iu] * np.int64(n) + prods[ju])
    keys = np.unique(np.concatenate(new_keys)) if new_keys else np.zeros(0, dtype=np.int64)
    keys = keys[~np.isin(keys, edge_keys(base.edges, n))]
    new_edges = keys_to_edges(keys, n)

    features = base.features.copy()
    if n > 1:
        for prod in sorted(attacked):
            donor = int(generator(config.seed, "fraud-donor", prod).integers(0, n - 1))
            donor += donor >= prod  # skip the product itself
            features[prod] = (1.0 - config.blend) * base.features[prod] + config.blend * base.features[donor]

    edges = np.concatenate([base.edges, new_edges])
    prov = np.concatenate([_base_provenance(base), np.full(len(new_edges), ADVERSARIAL, dtype=np.int8)])
    return base.replace(edges=edges, features=features, provenance=prov)
