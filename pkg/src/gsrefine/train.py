"""Training loop (augment -> group -> grouped link + node loss -> Adam step)
and refined inference on the attacked graph."""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .augment import augment_subgraph
from .extract import KnnCandidates
from .graph import GraphBundle, degree_profile
from .rng import derive_seed

log = logging.getLogger(__name__)

MODEL_MAGIC = b"GSRMODEL"
MODEL_FORMAT_VERSION = 1
AUGMENTED_TAG = "augmented"  # diagnostics tag for edges added by augmentation


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    dropout: float = 0.6
    weight_decay: float = 5e-4
    lambda_e: float = 3.0
    p_n: float = 0.5
    epochs: int = 1000
    patience: int = 200
    seed: int = 0
    lambda_aug: float = 0.9
    scheme: str = "L-M-H"
    hidden_dim: int = 16
    num_heads: int = 8
    num_layers: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.p_n <= 0:
            raise ValueError("p_n must be positive")
        if not 0.0 <= self.lambda_aug <= 1.0:
            raise ValueError("lambda_aug must lie in [0, 1]")
        if self.scheme not in M.GROUP_LABELS:
            raise ValueError(f"scheme must be one of {sorted(M.GROUP_LABELS)}")
        if self.epochs < 0 or self.patience < 1:
            raise ValueError("epochs must be >= 0 and patience >= 1")


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch, history):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch
        self.history = history


class Adam:
    def __init__(self, params: M.ModelParams, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(w) for w in params.weights]
        self.v = [np.zeros_like(w) for w in params.weights]

    def step(self, params: M.ModelParams, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for w, g, m, v in zip(params.weights, grads, self.m, self.v):
            g = g + self.weight_decay * w
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            w -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(w.dtype)
        params.version += 1


@dataclass(eq=False)
class EpochState:
    augmented: np.ndarray
    partition: M.GroupPartition
    negatives: np.ndarray
    jsd_evaluations: int


@dataclass(eq=False)
class TrainResult:
    params: M.ModelParams
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = 0.0
    last_state: EpochState | None = None


def accuracy(pred, labels, idx) -> float:
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) == 0:
        return float("nan")
    return float(np.mean(pred[idx] == labels[idx]))


def class_probs(params: M.ModelParams, features, edges) -> np.ndarray:
    logits = M.forward(params, features, edges).logits.astype(np.float64)
    return M.softmax(logits)


def epoch_edges(subgraph, candidates, probs, config: TrainConfig, num_nodes, group_degrees, epoch):
    """Augmented edge set, its degree-group partition and this epoch's negatives."""
    if candidates is not None and config.lambda_aug > 0:
        aug = augment_subgraph(subgraph, probs, candidates, config.lambda_aug, num_nodes)
        union, evals = aug.union, aug.jsd_evaluations
    else:
        union, evals = subgraph, 0
    partition = M.split_groups(union, group_degrees, config.scheme)
    negatives = M.sample_negatives(union, config.p_n, num_nodes, config.seed, epoch)
    return EpochState(union, partition, negatives, evals)


def train(
    bundle: GraphBundle,
    subgraph: np.ndarray,
    candidates: KnnCandidates | None,
    config: TrainConfig,
    dump_augment: str | None = None,
) -> TrainResult:
    """Fit the attention GNN on the (augmented) extracted sub-graph.

    Validation accuracy is measured on the full attacked graph, where the
    model is used at inference time. Returns the best-validation weights.
    """
    dtype = np.dtype(config.dtype)
    n = bundle.num_nodes
    features = bundle.features.astype(dtype)
    labels = bundle.labels
    train_idx, val_idx = bundle.splits["train"], bundle.splits["val"]
    subgraph = np.asarray(subgraph, dtype=np.int64).reshape(-1, 2)
    if len(subgraph) == 0:
        raise ValueError("cannot train on an empty sub-graph")
    params = M.init_params(
        bundle.num_features, bundle.num_classes, config.hidden_dim, config.num_heads,
        config.num_layers, seed=config.seed, dtype=dtype,
    )
    opt = Adam(params, config.lr, config.weight_decay)
    group_degrees = degree_profile(n, subgraph)
    full_messages = M.message_structure(n, bundle.edges)
    sub_messages = M.message_structure(n, subgraph)
    uniform = np.full((n, max(bundle.num_classes, 1)), 1.0 / max(bundle.num_classes, 1))
    if dump_augment:
        os.makedirs(dump_augment, exist_ok=True)

    result = TrainResult(params.copy())
    best_val, best_loss, since_best = -1.0, float("inf"), 0
    for epoch in range(config.epochs):
        probs = uniform if epoch == 0 else M.softmax(
            M.forward(params, features, subgraph, messages=sub_messages).logits.astype(np.float64)
        )
        state = epoch_edges(subgraph, candidates, probs, config, n, group_degrees, epoch)
        pos_groups = list(state.partition.groups.values())
        neg_groups = M.negative_groups(state.partition, len(state.negatives))
        try:
            parts, grads, _ = M.objective(
                params, features, state.augmented, labels, train_idx,
                state.augmented, state.negatives, pos_groups, neg_groups, config.lambda_e,
                dropout=config.dropout, seed=derive_seed(config.seed, "dropout", epoch),
            )
        except FloatingPointError:
            raise TrainingDiverged(epoch, result.history) from None
        opt.step(params, grads)
        if not all(np.all(np.isfinite(w)) for w in params.weights):
            raise TrainingDiverged(epoch, result.history)

        logits = M.forward(params, features, bundle.edges, messages=full_messages).logits
        pred = logits.argmax(axis=1)
        val_acc = accuracy(pred, labels, val_idx)
        val_loss = M.loss_node(logits, labels, val_idx)[0] if len(val_idx) else 0.0
        result.history.append({
            "epoch": epoch,
            "loss": parts.total,
            "node_loss": parts.node,
            "link_loss": parts.link,
            "val_acc": val_acc,
            "val_loss": val_loss,
            "train_acc": accuracy(pred, labels, train_idx),
            "num_aug_edges": int(len(state.augmented)),
            "num_negatives": int(len(state.negatives)),
            "jsd_evaluations": state.jsd_evaluations,
            "group_sizes": {k: int(len(v)) for k, v in state.partition.groups.items()},
        })
        result.last_state = state
        if dump_augment:
            added = state.augmented[~np.isin(
                state.augmented[:, 0] * n + state.augmented[:, 1], subgraph[:, 0] * n + subgraph[:, 1]
            )]
            with open(os.path.join(dump_augment, f"epoch_{epoch:04d}.tsv"), "w") as fh:
                fh.writelines(f"{u}\t{v}\t{AUGMENTED_TAG}\n" for u, v in added.tolist())
        # ties on the (small) validation set are broken by validation loss
        if val_acc > best_val or (val_acc == best_val and val_loss < best_loss):
            best_val, best_loss, since_best = val_acc, val_loss, 0
            result.params = params.copy()
            result.best_epoch, result.best_val_acc = epoch, val_acc
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return result


@dataclass(eq=False)
class Inference:
    predictions: np.ndarray
    probs: np.ndarray
    edge_alpha: np.ndarray  # per undirected edge of E, mean over both directions
    alpha_forward: np.ndarray  # message v -> u for edge (u, v), at u
    alpha_backward: np.ndarray  # message u -> v, at v


def infer_refined(params: M.ModelParams, bundle: GraphBundle) -> Inference:
    """Forward over the full attacked edge set with dropout off."""
    if bundle.num_features != params.in_dim:
        raise ValueError(
            f"bundle has {bundle.num_features} features but the model expects {params.in_dim}"
        )
    fw = M.forward(params, bundle.features.astype(params.dtype), bundle.edges)
    alpha = fw.alphas[-1].astype(np.float64)
    n = bundle.num_nodes
    msg_key = fw.dst * n + fw.src
    order = np.argsort(msg_key)
    sorted_keys = msg_key[order]
    u, v = bundle.edges[:, 0], bundle.edges[:, 1]
    fwd = alpha[order[np.searchsorted(sorted_keys, u * n + v)]]
    bwd = alpha[order[np.searchsorted(sorted_keys, v * n + u)]]
    logits = fw.logits.astype(np.float64)
    return Inference(logits.argmax(axis=1), M.softmax(logits), 0.5 * (fwd + bwd), fwd, bwd)


def save_model(params: M.ModelParams, path) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IIII", MODEL_FORMAT_VERSION, params.num_layers, params.num_heads, params.hidden_dim))
        for w in params.weights:
            fh.write(struct.pack("<III", *w.shape))
        for w in params.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())


def load_model(path) -> M.ModelParams:
    with open(os.fspath(path), "rb") as fh:
        if fh.read(8) != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model.bin file")
        version, layers, heads, hidden = struct.unpack("<IIII", fh.read(16))
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format version {version}")
        shapes = [struct.unpack("<III", fh.read(12)) for _ in range(layers)]
        weights = []
        for shape in shapes:
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            if data.size != count:
                raise ValueError(f"{path}: truncated weights")
            weights.append(data.reshape(shape).astype(np.float32))
    return M.ModelParams(weights, heads, hidden)


def write_train_log(history, path) -> None:
    with open(os.fspath(path), "w") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


