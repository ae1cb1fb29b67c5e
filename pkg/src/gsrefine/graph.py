"""Graph bundles: immutable undirected graphs with features, labels, splits
and optional per-edge provenance, plus the degree statistics used for
group training."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

CLEAN = 0
ADVERSARIAL = 1
TAG_NAMES = {CLEAN: "clean", ADVERSARIAL: "adversarial"}
TAG_CODES = {v: k for k, v in TAG_NAMES.items()}
SPLIT_NAMES = ("train", "val", "test")


class BundleError(ValueError):
    """Malformed bundle contents or a violated bundle invariant."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{os.fspath(path)}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


def canonical_edges(edges) -> np.ndarray:
    """Return edges as a sorted, deduplicated (M, 2) int64 array with u < v.

    Self-loops are not removed here; callers that accept raw input reject them.
    """
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.sort(arr, axis=1)
    arr = np.unique(arr, axis=0)
    return np.ascontiguousarray(arr)


def edge_keys(edges: np.ndarray, num_nodes: int) -> np.ndarray:
    """Scalar key per undirected edge (either orientation), ordered like the
    canonical edge order."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lo, hi = np.minimum(edges[:, 0], edges[:, 1]), np.maximum(edges[:, 0], edges[:, 1])
    return lo * np.int64(num_nodes) + hi


def keys_to_edges(keys: np.ndarray, num_nodes: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    return np.stack([keys // num_nodes, keys % num_nodes], axis=1).astype(np.int64)


def edge_union(num_nodes: int, *edge_sets) -> np.ndarray:
    keys = [edge_keys(e, num_nodes) for e in edge_sets if len(e)]
    if not keys:
        return np.zeros((0, 2), dtype=np.int64)
    return keys_to_edges(np.unique(np.concatenate(keys)), num_nodes)


def edge_isin(edges: np.ndarray, reference: np.ndarray, num_nodes: int) -> np.ndarray:
    """Boolean mask: which rows of ``edges`` occur in ``reference``."""
    return np.isin(edge_keys(edges, num_nodes), edge_keys(reference, num_nodes))


@dataclass(frozen=True, eq=False)
class GraphBundle:
    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray  # -1 marks an unlabeled node
    splits: Mapping[str, np.ndarray] = field(default_factory=dict)
    provenance: np.ndarray | None = None  # aligned with ``edges``

    def __post_init__(self):
        n = int(self.num_nodes)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        splits = {k: np.asarray(self.splits.get(k, []), dtype=np.int64) for k in SPLIT_NAMES}
        object.__setattr__(self, "splits", splits)

        if len(edges):
            if np.any(edges < 0) or np.any(edges >= n):
                raise BundleError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise BundleError("self-loop in edge set")
        canon = canonical_edges(edges)
        prov = self.provenance
        if prov is not None:
            prov = np.asarray(prov, dtype=np.int8)
            if len(prov) != len(edges):
                raise BundleError("provenance must cover every edge exactly once")
            if len(canon) != len(edges):
                raise BundleError("duplicate edge in provenance-tagged edge set")
            pairs = np.sort(edges, axis=1)
            prov = prov[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        object.__setattr__(self, "edges", canon)
        object.__setattr__(self, "provenance", prov)

        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise BundleError(f"feature matrix must have {n} rows, got shape {self.features.shape}")
        if self.labels.shape != (n,):
            raise BundleError(f"labels must have length {n}")
        seen: set[int] = set()
        for name in SPLIT_NAMES:
            ids = splits[name]
            if len(ids) and (ids.min() < 0 or ids.max() >= n):
                raise BundleError(f"split {name!r} references a node out of range")
            if len(set(ids.tolist())) != len(ids):
                raise BundleError(f"split {name!r} contains duplicates")
            overlap = seen.intersection(ids.tolist())
            if overlap:
                raise BundleError(f"split {name!r} overlaps another split at node {min(overlap)}")
            seen.update(ids.tolist())
            if len(ids) and np.any(self.labels[ids] < 0):
                raise BundleError(f"split {name!r} contains an unlabeled node")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        lab = self.labels[self.labels >= 0]
        return int(lab.max()) + 1 if len(lab) else 0

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        return csr_adjacency(self.num_nodes, self.edges)

    def degrees(self) -> np.ndarray:
        return node_degrees(self.num_nodes, self.edges)

    def provenance_map(self) -> dict[tuple[int, int], str]:
        if self.provenance is None:
            raise BundleError("bundle carries no provenance")
        return {
            (int(u), int(v)): TAG_NAMES[int(t)]
            for (u, v), t in zip(self.edges.tolist(), self.provenance.tolist())
        }

    def replace(self, **changes) -> "GraphBundle":
        return dataclasses.replace(self, **changes)

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.int64(self.num_nodes).tobytes())
        h.update(self.edges.tobytes())
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(self.labels.tobytes())
        for name in SPLIT_NAMES:
            h.update(name.encode())
            h.update(self.splits[name].tobytes())
        if self.provenance is not None:
            h.update(self.provenance.tobytes())
        return h.hexdigest()


def csr_adjacency(num_nodes: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric CSR (indptr, indices) with sorted neighbor lists."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, np.ascontiguousarray(dst, dtype=np.int64)


def node_degrees(num_nodes: int, edges: np.ndarray) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return np.bincount(edges.ravel(), minlength=num_nodes).astype(np.int64)


@dataclass(frozen=True, eq=False)
class DegreeProfile:
    degrees: np.ndarray
    median: float
    imbalance_ratio: float


def degree_profile(bundle, edge_subset=None) -> DegreeProfile:
    """Degree counts, median and imbalance ratio (max / min nonzero degree).

    ``bundle`` may be a :class:`GraphBundle` or a plain node count. The median
    is taken over nodes incident to at least one edge of the chosen set.
    """
    num_nodes = bundle.num_nodes if isinstance(bundle, GraphBundle) else int(bundle)
    if edge_subset is None:
        if not isinstance(bundle, GraphBundle):
            raise ValueError("edge_subset is required when no bundle is given")
        edge_subset = bundle.edges
    edges = np.asarray(edge_subset, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        raise ValueError("imbalance ratio is undefined on an empty edge set")
    if edges.min() < 0 or edges.max() >= num_nodes:
        raise ValueError("edge endpoint out of range")
    deg = node_degrees(num_nodes, edges)
    nz = deg[deg > 0]
    return DegreeProfile(
        degrees=deg,
        median=float(np.median(nz)),
        imbalance_ratio=float(nz.max()) / float(nz.min()),
    )


def clean_rate(edge_subset, provenance) -> float:
    """Fraction of ``edge_subset`` tagged clean.

    ``provenance`` is a mapping ``(u, v) -> "clean" | "adversarial"`` or a
    provenance-tagged :class:`GraphBundle`.
    """
    if isinstance(provenance, GraphBundle):
        provenance = provenance.provenance_map()
    edges = np.asarray(edge_subset, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        raise ValueError("clean rate of an empty edge set is undefined")
    clean = 0
    for u, v in edges.tolist():
        key = (u, v) if u < v else (v, u)
        try:
            tag = provenance[key]
        except KeyError:
            raise ValueError(f"edge {key} has no provenance tag") from None
        clean += tag == "clean"
    return clean / len(edges)


# --------------------------------------------------------------------------
# bundle directory I/O


def _parse_int(token, path, line, what):
    try:
        return int(token)
    except ValueError:
        raise BundleError(f"malformed {what} {token!r}", path, line) from None


def load_bundle(path) -> GraphBundle:
    path = os.fspath(path)
    files = {
        name: os.path.join(path, name)
        for name in ("edges.tsv", "features.csv", "labels.tsv", "splits.json")
    }
    for name, fp in files.items():
        if not os.path.isfile(fp):
            raise BundleError(f"missing bundle file {name}", fp)

    fp = files["features.csv"]
    rows: dict[int, list[float]] = {}
    with open(fp) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "node_id":
            raise BundleError("features.csv header must start with node_id", fp, 1)
        width = len(header) - 1
        for lineno, raw in enumerate(fh, start=2):
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split(",")
            if len(parts) != width + 1:
                raise BundleError(f"expected {width + 1} columns, got {len(parts)}", fp, lineno)
            node = _parse_int(parts[0], fp, lineno, "node id")
            if node in rows:
                raise BundleError(f"duplicate feature row for node {node}", fp, lineno)
            try:
                rows[node] = [float(x) for x in parts[1:]]
            except ValueError:
                raise BundleError("malformed feature value", fp, lineno) from None
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise BundleError("feature rows must cover node ids 0..N-1", fp)
    features = np.array([rows[i] for i in range(n)], dtype=np.float64).reshape(n, width)

    fp = files["edges.tsv"]
    edge_list = []
    with open(fp) as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise BundleError("edge row must hold two node ids", fp, lineno)
            u = _parse_int(parts[0], fp, lineno, "node id")
            v = _parse_int(parts[1], fp, lineno, "node id")
            if not (0 <= u < n and 0 <= v < n):
                raise BundleError(f"endpoint out of range in edge ({u}, {v})", fp, lineno)
            if u == v:
                raise BundleError(f"self-loop on node {u}", fp, lineno)
            edge_list.append((u, v))
    edges = canonical_edges(edge_list)

    fp = files["labels.tsv"]
    labels = np.full(n, -1, dtype=np.int64)
    with open(fp) as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise BundleError("label row must be node_id<TAB>class", fp, lineno)
            node = _parse_int(parts[0], fp, lineno, "node id")
            cls = _parse_int(parts[1], fp, lineno, "class")
            if not 0 <= node < n:
                raise BundleError(f"node {node} out of range", fp, lineno)
            if cls < 0:
                raise BundleError(f"negative class {cls}", fp, lineno)
            labels[node] = cls

    fp = files["splits.json"]
    try:
        with open(fp) as fh:
            raw_splits = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BundleError(f"malformed JSON: {exc.msg}", fp, exc.lineno) from None
    splits = {}
    for name in SPLIT_NAMES:
        ids = raw_splits.get(name, [])
        if not isinstance(ids, list) or not all(isinstance(i, int) for i in ids):
            raise BundleError(f"split {name!r} must be an integer array", fp)
        splits[name] = np.array(ids, dtype=np.int64)

    provenance = None
    fp = os.path.join(path, "provenance.tsv")
    if os.path.isfile(fp):
        tags: dict[tuple[int, int], int] = {}
        with open(fp) as fh:
            for lineno, raw in enumerate(fh, start=1):
                parts = raw.split()
                if not parts:
                    continue
                if len(parts) != 3 or parts[2] not in TAG_CODES:
                    raise BundleError("provenance row must be u<TAB>v<TAB>clean|adversarial", fp, lineno)
                u = _parse_int(parts[0], fp, lineno, "node id")
                v = _parse_int(parts[1], fp, lineno, "node id")
                key = (min(u, v), max(u, v))
                if key in tags:
                    raise BundleError(f"duplicate provenance for edge {key}", fp, lineno)
                tags[key] = TAG_CODES[parts[2]]
        missing = [e for e in map(tuple, edges.tolist()) if e not in tags]
        if missing or len(tags) != len(edges):
            raise BundleError("provenance must cover every edge exactly once", fp)
        provenance = np.array([tags[e] for e in map(tuple, edges.tolist())], dtype=np.int8)

    try:
        return GraphBundle(n, edges, features, labels, splits, provenance)
    except BundleError as exc:
        raise BundleError(str(exc), path) from None


def save_bundle(bundle: GraphBundle, path) -> None:
    path = os.fspath(path)
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "edges.tsv"), "w") as fh:
        for u, v in bundle.edges.tolist():
            fh.write(f"{u}\t{v}\n")
    with open(os.path.join(path, "features.csv"), "w") as fh:
        fh.write(",".join(["node_id"] + [f"f{j}" for j in range(bundle.num_features)]) + "\n")
        for i, row in enumerate(bundle.features.tolist()):
            fh.write(",".join([str(i)] + [repr(x) for x in row]) + "\n")
    with open(os.path.join(path, "labels.tsv"), "w") as fh:
        for i, c in enumerate(bundle.labels.tolist()):
            if c >= 0:
                fh.write(f"{i}\t{c}\n")
    with open(os.path.join(path, "splits.json"), "w") as fh:
        json.dump({k: bundle.splits[k].tolist() for k in SPLIT_NAMES}, fh)
        fh.write("\n")
    prov_path = os.path.join(path, "provenance.tsv")
    if bundle.provenance is not None:
        with open(prov_path, "w") as fh:
            for (u, v), t in zip(bundle.edges.tolist(), bundle.provenance.tolist()):
                fh.write(f"{u}\t{v}\t{TAG_NAMES[t]}\n")
    elif os.path.exists(prov_path):
        os.remove(prov_path)
