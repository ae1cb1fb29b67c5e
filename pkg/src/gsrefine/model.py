"""Dot-product attention GNN with per-layer link prediction, written against
numpy with a hand-derived backward pass.

Layer l, head h, for node i over j in N(i) + {i}:

    z_j   = W[h] @ h_j
    e_ij  = z_i . z_j / sqrt(F_out)
    alpha = softmax_j(leaky_relu(e_ij))
    out_i = sum_j alpha_ij z_j

Hidden layers concatenate heads and apply leaky ReLU; the last layer
averages heads and returns the result as class logits. The link predictor
reads phi_ij = sigmoid(mean_h e_ij) on arbitrary node pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import DegreeProfile
from .rng import generator

SLOPE = 0.2
GROUP_LABELS = {
    "none": ("ALL",),
    "L-H": ("LL", "HL", "HH"),
    "L-M-H": ("LL", "ML", "MM", "HL", "HM", "HH"),
}
_BAND_NAMES = {"L-H": "LH", "L-M-H": "LMH"}


class StaleCacheError(RuntimeError):
    pass


@dataclass(eq=False)
class ModelParams:
    weights: list  # per layer: (heads, F_out, F_in)
    num_heads: int
    hidden_dim: int
    version: int = 0

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[2]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], self.num_heads, self.hidden_dim, self.version)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams([w.astype(dtype) for w in self.weights], self.num_heads, self.hidden_dim, self.version)


def init_params(in_dim, num_classes, hidden_dim=16, num_heads=8, num_layers=2, seed=0, dtype=np.float32):
    """Glorot-uniform weights; the last layer maps to ``num_classes``."""
    if num_layers < 1:
        raise ValueError("need at least one layer")
    rng = generator(seed, "model-init")
    weights = []
    fan_in = in_dim
    for layer in range(num_layers):
        fan_out = num_classes if layer == num_layers - 1 else hidden_dim
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(num_heads, fan_out, fan_in)).astype(dtype))
        fan_in = fan_out * num_heads
    return ModelParams(weights, num_heads, hidden_dim)


def leaky_relu(x):
    return np.where(x > 0, x, SLOPE * x)


def leaky_grad(x):
    return np.where(x > 0, 1.0, SLOPE).astype(x.dtype)


def message_structure(num_nodes: int, edges: np.ndarray):
    """Directed messages (both directions + self-loops), sorted by destination.

    Returns ``(dst, src, starts)`` where ``starts[i]`` is the first message
    into node i; every node has at least its self-loop."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    loops = np.arange(num_nodes, dtype=np.int64)
    dst = np.concatenate([edges[:, 0], edges[:, 1], loops])
    src = np.concatenate([edges[:, 1], edges[:, 0], loops])
    order = np.lexsort((src, dst))
    dst, src = dst[order], src[order]
    starts = np.searchsorted(dst, np.arange(num_nodes))
    return dst, src, starts


@dataclass(eq=False)
class LayerCache:
    h_in: np.ndarray
    mask: np.ndarray | None
    h_drop: np.ndarray
    z: np.ndarray  # (heads, N, F_out)
    e: np.ndarray  # (heads, M)
    alpha: np.ndarray  # (heads, M)
    pre: np.ndarray | None  # hidden pre-activation (N, heads * F_out)
    pair_e: np.ndarray | None  # (heads, P)


@dataclass(eq=False)
class ForwardResult:
    logits: np.ndarray
    dst: np.ndarray
    src: np.ndarray
    starts: np.ndarray
    layers: list = field(default_factory=list)
    pairs: np.ndarray | None = None
    params_version: int = -1
    dropout: float = 0.0

    @property
    def alphas(self):
        """Per layer, head-averaged attention per directed message."""
        return [c.alpha.mean(axis=0) for c in self.layers]

    @property
    def e_scores(self):
        """Per layer, head-averaged attention logits per directed message."""
        return [c.e.mean(axis=0) for c in self.layers]

    @property
    def pair_scores(self):
        """Per layer, head-averaged e on the requested link pairs."""
        return [c.pair_e.mean(axis=0) for c in self.layers]


def _segment_softmax(a: np.ndarray, dst: np.ndarray, starts: np.ndarray) -> np.ndarray:
    amax = np.maximum.reduceat(a, starts, axis=1)
    ex = np.exp(a - amax[:, dst])
    den = np.add.reduceat(ex, starts, axis=1)
    return ex / den[:, dst]


def _csr(values, dst, src, starts, n):
    indptr = np.append(starts, len(dst))
    return sp.csr_matrix((values, src, indptr), shape=(n, n))


def forward(
    params: ModelParams,
    features: np.ndarray,
    edges: np.ndarray,
    dropout: float = 0.0,
    seed: int | None = None,
    pairs: np.ndarray | None = None,
    messages=None,
) -> ForwardResult:
    """Run the network on ``edges``; optionally score link ``pairs``.

    Dropout (inverted, on every layer input) is active when ``dropout > 0``;
    masks are drawn from ``seed``.
    """
    dtype = params.dtype
    h = np.asarray(features, dtype=dtype)
    n = h.shape[0]
    if h.shape[1] != params.in_dim:
        raise ValueError(f"feature dimension {h.shape[1]} does not match model input {params.in_dim}")
    dst, src, starts = messages if messages is not None else message_structure(n, edges)
    if pairs is not None:
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    rng = generator(seed if seed is not None else 0, "dropout") if dropout > 0 else None
    result = ForwardResult(None, dst, src, starts, pairs=pairs, params_version=params.version, dropout=dropout)
    last = params.num_layers - 1
    # overflow is reported per layer below instead of as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for layer, w in enumerate(params.weights):
            if rng is not None:
                mask = (rng.random(h.shape) >= dropout).astype(dtype) / dtype.type(1.0 - dropout)
                h_drop = h * mask
            else:
                mask, h_drop = None, h
            heads, f_out, _ = w.shape
            scale = dtype.type(1.0 / math.sqrt(f_out))
            z = np.einsum("nf,hof->hno", h_drop, w)
            e = np.einsum("hmo,hmo->hm", z[:, dst], z[:, src]) * scale
            alpha = _segment_softmax(leaky_relu(e), dst, starts)
            out = np.stack([_csr(alpha[k], dst, src, starts, n) @ z[k] for k in range(heads)])
            pair_e = None
            if pairs is not None:
                pair_e = np.einsum("hpo,hpo->hp", z[:, pairs[:, 0]], z[:, pairs[:, 1]]) * scale
            if layer < last:
                pre = out.transpose(1, 0, 2).reshape(n, heads * f_out)
                h_next = leaky_relu(pre)
            else:
                pre = None
                h_next = out.mean(axis=0)
            if not np.all(np.isfinite(h_next)) or not np.all(np.isfinite(e)):
                raise FloatingPointError(f"non-finite activations in layer {layer}")
            result.layers.append(LayerCache(h, mask, h_drop, z, e, alpha, pre, pair_e))
            h = h_next
    result.logits = h
    return result


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def loss_node(logits: np.ndarray, labels: np.ndarray, mask) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over ``mask`` and its gradient w.r.t. logits."""
    mask = np.asarray(mask, dtype=np.int64)
    if len(mask) == 0:
        raise ValueError("classification mask is empty")
    y = np.asarray(labels)[mask]
    if np.any(y < 0):
        raise ValueError("classification mask references an unlabeled node")
    logits64 = np.asarray(logits, dtype=np.float64)
    shifted = logits64[mask] - logits64[mask].max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(len(mask)), y]))
    grad = np.zeros_like(logits64)
    prob = np.exp(shifted - logz[:, None])
    prob[np.arange(len(mask)), y] -= 1.0
    grad[mask] = prob / len(mask)
    return loss, grad.astype(logits.dtype)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def link_loss(e_pos, e_neg, pos_groups, neg_groups) -> tuple[float, np.ndarray, np.ndarray]:
    """Grouped logistic link loss on head-averaged scores.

    Per group g: mean over positives of -log s(e) plus mean over negatives
    of -log(1 - s(e)); groups are summed. Returns the loss and its gradients
    w.r.t. ``e_pos`` and ``e_neg``.
    """
    e_pos = np.asarray(e_pos, dtype=np.float64)
    e_neg = np.asarray(e_neg, dtype=np.float64)
    total = 0.0
    g_pos = np.zeros_like(e_pos)
    g_neg = np.zeros_like(e_neg)
    for gp, gn in zip(pos_groups, neg_groups):
        if len(gp) == 0:
            continue
        if len(gn) == 0:
            raise ValueError("link-loss group has positives but no negatives")
        total += float(np.mean(_softplus(-e_pos[gp])) + np.mean(_softplus(e_neg[gn])))
        g_pos[gp] += (_sigmoid(e_pos[gp]) - 1.0) / len(gp)
        g_neg[gn] += _sigmoid(e_neg[gn]) / len(gn)
    return total, g_pos, g_neg


@dataclass(frozen=True, eq=False)
class GroupPartition:
    scheme: str
    groups: dict  # label -> index array into the edge list
    thresholds: tuple
    bands: np.ndarray  # per-node band index

    def edge_sets(self, edges: np.ndarray) -> dict:
        return {label: edges[idx] for label, idx in self.groups.items()}


def node_bands(degrees: np.ndarray, scheme: str, median: float | None = None):
    """Band index per node (0 = low) and the cut points used."""
    degrees = np.asarray(degrees)
    nz = degrees[degrees > 0]
    if scheme == "none":
        return np.zeros(len(degrees), dtype=np.int64), ()
    if len(nz) == 0:
        raise ValueError("cannot form degree bands without any incident node")
    if scheme == "L-H":
        cut = float(np.median(nz)) if median is None else float(median)
        return (degrees >= cut).astype(np.int64), (cut,)
    if scheme == "L-M-H":
        c1, c2 = (float(x) for x in np.percentile(nz, [100.0 / 3.0, 200.0 / 3.0]))
        return (degrees >= c1).astype(np.int64) + (degrees >= c2).astype(np.int64), (c1, c2)
    raise ValueError(f"unknown grouping scheme {scheme!r}")


def split_groups(edges: np.ndarray, degrees, scheme: str = "L-H") -> GroupPartition:
    """Partition edges by the degree bands of their endpoints.

    ``degrees`` is a :class:`DegreeProfile` or a per-node degree array. Under
    L-H a node is low-degree when its degree is below the median; under
    L-M-H the cuts are the 1/3 and 2/3 percentiles of incident-node degrees.
    """
    if isinstance(degrees, DegreeProfile):
        deg, median = degrees.degrees, degrees.median
    else:
        deg, median = np.asarray(degrees), None
    if scheme not in GROUP_LABELS:
        raise ValueError(f"unknown grouping scheme {scheme!r}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    bands, cuts = node_bands(deg, scheme, median)
    if scheme == "none":
        return GroupPartition(scheme, {"ALL": np.arange(len(edges))}, cuts, bands)
    names = _BAND_NAMES[scheme]
    b = np.sort(bands[edges], axis=1)
    labels = np.array([names[hi] + names[lo] for lo, hi in b.tolist()], dtype=object) if len(edges) else np.array([], dtype=object)
    groups = {label: np.flatnonzero(labels == label) for label in GROUP_LABELS[scheme]}
    return GroupPartition(scheme, groups, cuts, bands)


def apportion(sizes, total: int) -> list[int]:
    """Split ``total`` across groups proportionally to ``sizes``.

    Every nonempty group gets at least one; the rest follows the largest
    remainder rule."""
    sizes = np.asarray(sizes, dtype=np.int64)
    nonempty = sizes > 0
    k = int(nonempty.sum())
    if k == 0:
        return [0] * len(sizes)
    if total < k:
        raise ValueError(f"{total} negatives cannot cover {k} nonempty groups")
    out = nonempty.astype(np.int64)
    rest = total - k
    quota = rest * sizes / sizes.sum()
    base = np.floor(quota).astype(np.int64)
    out += base
    left = rest - int(base.sum())
    frac = quota - base
    for idx in np.argsort(-frac, kind="stable")[:left]:
        out[idx] += 1
    return out.tolist()


def sample_negatives(edges: np.ndarray, p_n: float, num_nodes: int, seed: int, epoch: int = 0) -> np.ndarray:
    """floor(p_n * |edges|) distinct node pairs absent from ``edges``."""
    if p_n <= 0:
        raise ValueError("p_n must be positive")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    count = math.floor(p_n * len(edges))
    taken = edges[:, 0] * num_nodes + edges[:, 1]
    available = num_nodes * (num_nodes - 1) // 2 - len(taken)
    if count > available:
        raise ValueError(f"requested {count} negatives but only {available} non-edges exist")
    rng = generator(seed, "negatives", epoch)
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if 4 * count > available and num_nodes <= 4096:
        iu, ju = np.triu_indices(num_nodes, k=1)
        keys = iu * num_nodes + ju
        keys = keys[~np.isin(keys, taken)]
        chosen = np.sort(rng.choice(len(keys), size=count, replace=False))
        keys = keys[chosen]
        return np.stack([keys // num_nodes, keys % num_nodes], axis=1)
    taken_set = set(taken.tolist())
    picked: dict[int, None] = {}
    while len(picked) < count:
        draw = rng.integers(0, num_nodes, size=(2 * (count - len(picked)) + 16, 2))
        for u, v in draw.tolist():
            if u == v:
                continue
            key = min(u, v) * num_nodes + max(u, v)
            if key in taken_set or key in picked:
                continue
            picked[key] = None
            if len(picked) == count:
                break
    keys = np.fromiter(picked, dtype=np.int64, count=count)
    return np.stack([keys // num_nodes, keys % num_nodes], axis=1)


def negative_groups(partition: GroupPartition, num_neg: int) -> list[np.ndarray]:
    """Consecutive slices of the negative list, sized by :func:`apportion`."""
    sizes = [len(idx) for idx in partition.groups.values()]
    counts = apportion(sizes, num_neg)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    return [np.arange(bounds[i], bounds[i + 1]) for i in range(len(counts))]


def backward(params: ModelParams, cache: ForwardResult, dlogits: np.ndarray, dpair=None) -> list:
    """Gradients w.r.t. every weight tensor.

    ``dlogits`` is dL/dlogits; ``dpair`` (optional) holds, per layer, dL/d of
    the head-averaged pair score for each pair passed to :func:`forward`.
    """
    if cache.params_version != params.version:
        raise StaleCacheError("forward cache was computed with different parameters")
    dst, src, starts = cache.dst, cache.src, cache.starts
    pairs = cache.pairs
    dtype = params.dtype
    n = dlogits.shape[0]
    grads = [None] * params.num_layers
    dh = None
    for layer in range(params.num_layers - 1, -1, -1):
        c = cache.layers[layer]
        w = params.weights[layer]
        heads, f_out, _ = w.shape
        scale = dtype.type(1.0 / math.sqrt(f_out))
        if layer == params.num_layers - 1:
            dout = np.broadcast_to(np.asarray(dlogits, dtype=dtype) / dtype.type(heads), (heads, n, f_out))
        else:
            dpre = dh * leaky_grad(c.pre)
            dout = dpre.reshape(n, heads, f_out).transpose(1, 0, 2)
        z = c.z
        dz = np.empty_like(z)
        dalpha = np.einsum("hmo,hmo->hm", dout[:, dst], z[:, src])
        seg = np.add.reduceat(c.alpha * dalpha, starts, axis=1)
        de = c.alpha * (dalpha - seg[:, dst]) * leaky_grad(c.e) * scale
        for k in range(heads):
            a_mat = _csr(c.alpha[k], dst, src, starts, n)
            e_mat = _csr(de[k], dst, src, starts, n)
            dz[k] = a_mat.T @ dout[k] + e_mat @ z[k] + e_mat.T @ z[k]
        if dpair is not None and dpair[layer] is not None and pairs is not None and len(pairs):
            gp = np.asarray(dpair[layer], dtype=dtype) * (scale / dtype.type(heads))
            p_mat = sp.csr_matrix((gp, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
            for k in range(heads):
                dz[k] += p_mat @ z[k] + p_mat.T @ z[k]
        grads[layer] = np.einsum("hno,nf->hof", dz, c.h_drop)
        if layer > 0:
            dh_drop = np.einsum("hno,hof->nf", dz, w)
            dh = dh_drop * c.mask if c.mask is not None else dh_drop
    return grads


@dataclass(eq=False)
class LossBreakdown:
    total: float
    node: float
    link: list  # per layer grouped link loss


def objective(
    params: ModelParams,
    features: np.ndarray,
    message_edges: np.ndarray,
    labels: np.ndarray,
    train_mask,
    pos_edges: np.ndarray,
    neg_edges: np.ndarray,
    pos_groups,
    neg_groups,
    lambda_e: float,
    dropout: float = 0.0,
    seed: int | None = None,
    messages=None,
    include_node: bool = True,
    with_grad: bool = True,
):
    """L_final = L_node + lambda_e * sum_l L_link^l and (optionally) its gradients."""
    pos_edges = np.asarray(pos_edges, dtype=np.int64).reshape(-1, 2)
    neg_edges = np.asarray(neg_edges, dtype=np.int64).reshape(-1, 2)
    pairs = np.concatenate([pos_edges, neg_edges])
    fw = forward(params, features, message_edges, dropout=dropout, seed=seed, pairs=pairs, messages=messages)
    n_pos = len(pos_edges)
    if include_node:
        l_node, dlogits = loss_node(fw.logits, labels, train_mask)
    else:
        l_node, dlogits = 0.0, np.zeros_like(fw.logits)
    link_losses, dpair = [], []
    for pe in fw.pair_scores:
        if lambda_e == 0:
            link_losses.append(0.0)
            dpair.append(None)
            continue
        loss, g_pos, g_neg = link_loss(pe[:n_pos], pe[n_pos:], pos_groups, neg_groups)
        link_losses.append(loss)
        dpair.append(lambda_e * np.concatenate([g_pos, g_neg]))
    total = l_node + lambda_e * sum(link_losses)
    if not math.isfinite(total):
        raise FloatingPointError("non-finite training loss")
    parts = LossBreakdown(total, l_node, link_losses)
    if not with_grad:
        return parts, None, fw
    grads = backward(params, fw, dlogits, dpair)
    return parts, grads, fw
