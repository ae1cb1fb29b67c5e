"""End-to-end experiment runner, synthetic graph generation and the
diagnostic metrics reported for every run."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import attack as atk
from .extract import KnnCandidates, build_knn_candidates, extract_subgraph, score_edges, subgraph_nodes
from .graph import (
    ADVERSARIAL,
    CLEAN,
    GraphBundle,
    clean_rate,
    degree_profile,
    load_bundle,
)
from .model import split_groups
from .node2vec import EmbeddingMatrix, Node2VecConfig, embed, save_embeddings
from .rng import derive_seed, generator
from .train import TrainConfig, accuracy, infer_refined, save_model, train, write_train_log

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
ABLATIONS = ("no-SE", "SE", "SE+GA", "SE+GA+GT")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# --------------------------------------------------------------------------
# synthetic graphs


def generate_sbm(
    blocks: int = 2,
    nodes_per_block: int = 100,
    p_in: float = 0.1,
    p_out: float = 0.002,
    feature_dim: int = 16,
    feature_shift: float = 1.0,
    seed: int = 0,
    max_tries: int = 10,
) -> GraphBundle:
    """Stochastic block model with Gaussian features and a 1:1:8 split.

    Block b's feature mean is ``feature_shift`` along axis ``b mod feature_dim``.
    A draw whose training split misses a class is regenerated from the next
    sub-stream, up to ``max_tries`` times.
    """
    if blocks < 2:
        raise ValueError("need at least two blocks")
    if not p_in > p_out:
        raise ValueError("p_in must exceed p_out")
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks), nodes_per_block)
    iu, ju = np.triu_indices(n, k=1)
    probs = np.where(labels[iu] == labels[ju], p_in, p_out)
    for attempt in range(max_tries):
        rng = generator(seed, "sbm", attempt)
        keep = rng.random(len(iu)) < probs
        edges = np.stack([iu[keep], ju[keep]], axis=1)
        means = np.zeros((blocks, feature_dim))
        means[np.arange(blocks), np.arange(blocks) % feature_dim] = feature_shift
        features = means[labels] + rng.standard_normal((n, feature_dim))
        perm = rng.permutation(n)
        n_train = round(0.1 * n)
        n_val = round(0.1 * n)
        splits = {
            "train": np.sort(perm[:n_train]),
            "val": np.sort(perm[n_train:n_train + n_val]),
            "test": np.sort(perm[n_train + n_val:]),
        }
        if len(np.unique(labels[splits["train"]])) == blocks:
            return GraphBundle(n, edges, features, labels, splits)
    raise RuntimeError(f"no SBM draw covered every class in the training split after {max_tries} tries")


def inter_class_edge_ratio(bundle: GraphBundle, edge_subset=None, labels=None) -> float:
    """Fraction of edges whose endpoints carry different labels.

    ``labels`` may supply pseudo-labels (e.g. model predictions) for nodes
    the bundle leaves unlabeled.
    """
    edges = bundle.edges if edge_subset is None else np.asarray(edge_subset, dtype=np.int64).reshape(-1, 2)
    lab = bundle.labels if labels is None else np.where(bundle.labels >= 0, bundle.labels, labels)
    if len(edges) == 0:
        raise ValueError("inter-class ratio of an empty edge set is undefined")
    lu, lv = lab[edges[:, 0]], lab[edges[:, 1]]
    if np.any(lu < 0) or np.any(lv < 0):
        raise ValueError("edge endpoint has neither a label nor a pseudo-label")
    return float(np.mean(lu != lv))


def weighted_inter_class_ratio(bundle: GraphBundle, edge_weight: np.ndarray, labels=None) -> float:
    """Inter-class share of total attention mass over the edges of ``bundle``."""
    lab = bundle.labels if labels is None else np.where(bundle.labels >= 0, bundle.labels, labels)
    inter = lab[bundle.edges[:, 0]] != lab[bundle.edges[:, 1]]
    total = float(np.sum(edge_weight))
    return float(np.sum(edge_weight[inter]) / total) if total > 0 else 0.0


def summarize(values) -> dict | None:
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return None
    q25, q50, q75 = np.percentile(values, [25, 50, 75])
    return {"count": int(len(values)), "mean": float(values.mean()), "q25": float(q25),
            "median": float(q50), "q75": float(q75)}


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SbmSpec:
    blocks: int = 2
    nodes_per_block: int = 100
    p_in: float = 0.1
    p_out: float = 0.002
    feature_dim: int = 16
    feature_shift: float = 1.0

    def __post_init__(self):
        if self.blocks < 2 or self.nodes_per_block < 1:
            raise ConfigError("sbm needs at least two non-empty blocks")
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise ConfigError("sbm needs 0 <= p_out < p_in <= 1")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"  # none | structure | feature | structure+feature | fraud
    ptb_rate: float = 0.0
    gamma: float = 0.5
    noisy_node_frac: float = 0.5
    num_fraudsters: int = 100
    reviews_per_fraudster: int = 100

    def __post_init__(self):
        if self.kind not in ("none", "structure", "feature", "structure+feature", "fraud"):
            raise ConfigError(f"unknown attack kind {self.kind!r}")


@dataclass(frozen=True)
class ExtractionSpec:
    lambda_sp: float = 1.0
    lambda_fs: float = 1.0
    k: int = 5

    def __post_init__(self):
        for name in ("lambda_sp", "lambda_fs"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1]")
        if self.k < 1:
            raise ConfigError("k must be at least 1")


@dataclass(frozen=True)
class ExperimentConfig:
    bundle: str | None = None
    sbm: SbmSpec | None = None
    attack: AttackSpec = AttackSpec()
    node2vec: Node2VecConfig = Node2VecConfig()
    extraction: ExtractionSpec = ExtractionSpec()
    training: TrainConfig = TrainConfig()
    seed: int = 0
    cache_dir: str | None = None

    def __post_init__(self):
        if (self.bundle is None) == (self.sbm is None):
            raise ConfigError("exactly one of 'bundle' and 'sbm' must be given")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        sections = {
            "sbm": SbmSpec, "attack": AttackSpec, "node2vec": Node2VecConfig,
            "extraction": ExtractionSpec, "training": TrainConfig,
        }
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in raw.items():
            if key in sections and value is not None:
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be an object")
                try:
                    kwargs[key] = sections[key](**value)
                except TypeError as exc:
                    raise ConfigError(f"section {key!r}: {exc}") from None
                except ValueError as exc:
                    raise ConfigError(f"section {key!r}: {exc}") from None
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def ablation_variant(config: ExperimentConfig, name: str) -> ExperimentConfig:
    """Config with components switched off: extraction (SE), augmentation
    (GA) and group training (GT)."""
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")
    tr = config.training
    if name == "no-SE":
        return config.replace(
            extraction=dataclasses.replace(config.extraction, lambda_sp=1.0, lambda_fs=1.0),
            training=dataclasses.replace(tr, lambda_aug=0.0, scheme="none"),
        )
    if name == "SE":
        return config.replace(training=dataclasses.replace(tr, lambda_aug=0.0, scheme="none"))
    if name == "SE+GA":
        return config.replace(training=dataclasses.replace(tr, scheme="none"))
    return config


# --------------------------------------------------------------------------
# pipeline stages


def prepare_bundle(config: ExperimentConfig) -> tuple[GraphBundle, GraphBundle]:
    """(clean bundle, attacked bundle with provenance)."""
    if config.bundle is not None:
        clean = load_bundle(config.bundle)
    else:
        s = config.sbm
        clean = generate_sbm(s.blocks, s.nodes_per_block, s.p_in, s.p_out, s.feature_dim,
                             s.feature_shift, seed=derive_seed(config.seed, "sbm"))
    a = config.attack
    attack_seed = derive_seed(config.seed, "attack")
    attacked = clean
    if a.kind in ("structure", "structure+feature"):
        attacked = atk.inject_structure_attack(attacked, atk.AttackConfig(ptb_rate=a.ptb_rate, seed=attack_seed))
    if a.kind in ("feature", "structure+feature"):
        cfg = atk.AttackConfig(gamma=a.gamma, noisy_node_frac=a.noisy_node_frac, seed=attack_seed)
        attacked = atk.inject_feature_noise(attacked, cfg)
    if a.kind == "fraud":
        cfg = atk.FraudConfig(a.num_fraudsters, a.reviews_per_fraudster, seed=attack_seed)
        attacked = atk.generate_fraud_graph(attacked, cfg)
    if attacked.provenance is None:
        attacked = attacked.replace(provenance=np.full(attacked.num_edges, CLEAN, dtype=np.int8))
    return clean, attacked


@dataclass(eq=False)
class Phase1:
    subgraph: np.ndarray
    candidates: KnnCandidates | None
    embeddings: EmbeddingMatrix | None
    key: str
    cache_hit: bool = False


_PHASE1_MEMO: dict[str, Phase1] = {}


def phase1_key(bundle: GraphBundle, config: ExperimentConfig, need_candidates: bool) -> str:
    payload = json.dumps({
        "bundle": bundle.content_hash(),
        "node2vec": dataclasses.asdict(config.node2vec),
        "extraction": dataclasses.asdict(config.extraction),
        "candidates": need_candidates,
        "seed": derive_seed(config.seed, "node2vec"),
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def run_phase1(bundle: GraphBundle, config: ExperimentConfig) -> Phase1:
    """node2vec, edge scoring, extraction and kNN candidates (cached)."""
    ex = config.extraction
    need_candidates = config.training.lambda_aug > 0
    key = phase1_key(bundle, config, need_candidates)
    if key in _PHASE1_MEMO:
        hit = _PHASE1_MEMO[key]
        return dataclasses.replace(hit, cache_hit=True)
    disk = os.path.join(config.cache_dir, f"phase1-{key}.npz") if config.cache_dir else None
    if disk and os.path.exists(disk):
        with np.load(disk) as z:
            cands = KnnCandidates(z["knn_fs"], z["knn_sp"], int(z["k"])) if need_candidates else None
            emb = EmbeddingMatrix(z["embeddings"]) if z["embeddings"].size else None
            res = Phase1(z["subgraph"], cands, emb, key, cache_hit=True)
        _PHASE1_MEMO[key] = res
        return res

    needs_embedding = ex.lambda_sp < 1.0 or ex.lambda_fs < 1.0 or need_candidates
    emb = None
    if needs_embedding:
        emb = embed(bundle, config.node2vec, seed=derive_seed(config.seed, "node2vec"))
    if ex.lambda_sp < 1.0 or ex.lambda_fs < 1.0:
        subgraph = extract_subgraph(score_edges(bundle, emb), ex.lambda_sp, ex.lambda_fs)
    else:
        subgraph = bundle.edges
    cands = None
    if need_candidates:
        cands = build_knn_candidates(bundle, emb, subgraph_nodes(subgraph), ex.k, exclude=subgraph)
    res = Phase1(subgraph, cands, emb, key)
    _PHASE1_MEMO[key] = res
    if disk:
        os.makedirs(config.cache_dir, exist_ok=True)
        empty = np.zeros((0, 2), dtype=np.int64)
        np.savez(
            disk, subgraph=subgraph,
            knn_fs=cands.e_fs_k if cands else empty, knn_sp=cands.e_sp_k if cands else empty,
            k=np.int64(cands.k if cands else ex.k),
            embeddings=emb.vectors if emb is not None else np.zeros((0, 0)),
        )
    return res


def clear_phase1_cache():
    _PHASE1_MEMO.clear()


def degree_band_accuracy(bundle: GraphBundle, pred: np.ndarray) -> dict:
    """Test accuracy split at the median attacked-graph degree of test nodes."""
    test = bundle.splits["test"]
    deg = bundle.degrees()[test]
    cut = float(np.median(deg)) if len(test) else 0.0
    low, high = test[deg < cut], test[deg >= cut]
    return {"cut": cut, "low": accuracy(pred, bundle.labels, low), "high": accuracy(pred, bundle.labels, high),
            "num_low": int(len(low)), "num_high": int(len(high))}


def _safe_ratio(num_nodes, edges):
    return degree_profile(num_nodes, edges).imbalance_ratio if len(edges) else None


def _finite_or_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def run_experiment(config: ExperimentConfig, out_dir: str | None = None, dump_augment: bool = False) -> dict:
    """Attack, Phase 1, training and refined inference; returns the report.

    With ``out_dir`` the report, per-edge attention, model and training log
    are written there. Wall-clock and cache information lives under the
    ``runtime`` key; everything else is a deterministic function of the
    config.
    """
    timings: dict[str, float] = {}
    stage = "setup"

    def timed(name, fn, *args, **kwargs):
        nonlocal stage
        stage = name
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            timings[name] = time.perf_counter() - t0

    try:
        clean, attacked = timed("attack", prepare_bundle, config)
        p1 = timed("phase1", run_phase1, attacked, config)
        tcfg = dataclasses.replace(config.training, seed=derive_seed(config.seed, "train") & 0x7FFFFFFF)
        dump_dir = os.path.join(out_dir, "augment") if (dump_augment and out_dir) else None
        tr = timed("train", train, attacked, p1.subgraph, p1.candidates, tcfg, dump_augment=dump_dir)
        inf = timed("infer", infer_refined, tr.params, attacked)
    except Exception as exc:
        if isinstance(exc, (ConfigError, StageError)):
            raise
        raise StageError(stage, exc) from exc

    prov = attacked.provenance
    adv = prov == ADVERSARIAL
    labels = attacked.labels
    state = tr.last_state
    groups = state.partition.edge_sets(state.augmented) if state is not None else {}
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "seed": config.seed,
        "num_nodes": attacked.num_nodes,
        "num_edges": attacked.num_edges,
        "num_adversarial_edges": int(adv.sum()),
        "test_accuracy": accuracy(inf.predictions, labels, attacked.splits["test"]),
        "val_accuracy": tr.best_val_acc,
        "best_epoch": tr.best_epoch,
        "epochs_run": len(tr.history),
        "degree_band_accuracy": degree_band_accuracy(attacked, inf.predictions),
        "subgraph": {
            "num_edges": int(len(p1.subgraph)),
            "clean_rate": clean_rate(p1.subgraph, attacked),
            "attacked_clean_rate": clean_rate(attacked.edges, attacked),
        },
        "imbalance_ratio": {
            "augmented": _safe_ratio(attacked.num_nodes, state.augmented) if state else None,
            "groups": {k: _safe_ratio(attacked.num_nodes, v) for k, v in groups.items()},
        },
        "inter_class_edge_ratio": {
            "clean": inter_class_edge_ratio(clean) if clean.num_edges else None,
            "attacked": inter_class_edge_ratio(attacked),
            "attention_weighted": weighted_inter_class_ratio(attacked, inf.edge_alpha),
        },
        "attention": {
            "clean": summarize(inf.edge_alpha[~adv]),
            "adversarial": summarize(inf.edge_alpha[adv]),
        },
        "phase1_key": p1.key,
        "runtime": {"seconds": timings, "phase1_cache_hit": p1.cache_hit},
    }
    report["degree_band_accuracy"] = {k: _finite_or_none(v) for k, v in report["degree_band_accuracy"].items()}

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_report(report, os.path.join(out_dir, "report.json"))
        save_model(tr.params, os.path.join(out_dir, "model.bin"))
        write_train_log(tr.history, os.path.join(out_dir, "train_log.jsonl"))
        write_attention_csv(attacked, inf, os.path.join(out_dir, "attention.csv"))
        np.savetxt(os.path.join(out_dir, "subgraph.tsv"), p1.subgraph, fmt="%d", delimiter="\t")
        if p1.embeddings is not None:
            save_embeddings(p1.embeddings, os.path.join(out_dir, "embeddings.f32"))
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
    return report


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_attention_csv(bundle: GraphBundle, inf, path) -> None:
    tags = bundle.provenance if bundle.provenance is not None else np.zeros(bundle.num_edges, dtype=np.int8)
    with open(path, "w") as fh:
        fh.write("u,v,provenance,alpha_uv,alpha_vu,alpha_mean\n")
        for (u, v), t, a, b, m in zip(bundle.edges.tolist(), tags.tolist(), inf.alpha_forward.tolist(),
                                      inf.alpha_backward.tolist(), inf.edge_alpha.tolist()):
            fh.write(f"{u},{v},{'adversarial' if t == ADVERSARIAL else 'clean'},{a!r},{b!r},{m!r}\n")


def strip_runtime(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "runtime"}


def group_imbalance(num_nodes: int, edges: np.ndarray, degrees, scheme: str = "L-H") -> dict:
    """Imbalance ratio of ``edges`` and of each degree group."""
    part = split_groups(edges, degrees, scheme)
    out = {"all": degree_profile(num_nodes, edges).imbalance_ratio}
    for label, sub in part.edge_sets(edges).items():
        out[label] = degree_profile(num_nodes, sub).imbalance_ratio if len(sub) else None
    return out

