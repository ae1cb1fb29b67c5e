"""Command-line entry point: ``gsrefine <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure,
1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import attack as atk
from .extract import build_knn_candidates, extract_subgraph, score_edges, subgraph_nodes
from .graph import ADVERSARIAL, BundleError, load_bundle, save_bundle
from .harness import (
    ConfigError,
    ExperimentConfig,
    ExtractionSpec,
    StageError,
    SbmSpec,
    generate_sbm,
    run_phase1,
    summarize,
    weighted_inter_class_ratio,
    write_attention_csv,
    write_report,
)
from .node2vec import Node2VecConfig, embed, load_embeddings, save_embeddings
from .rng import derive_seed
from .train import TrainConfig, accuracy, infer_refined, load_model, save_model, train, write_train_log

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("gsrefine")


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def _build(cls, raw: dict, what: str):
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _require_out(args) -> str:
    if not args.out:
        raise ConfigError(f"'{args.command}' needs --out")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _seed(args, raw: dict) -> int:
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return seed


def _node2vec_config(raw: dict) -> Node2VecConfig:
    return _build(Node2VecConfig, raw.get("node2vec", {}), "node2vec")


# flat `train` configs: TrainConfig fields plus these extras
_FLAT_EXTRAS = {"lambda_sp", "lambda_fs", "k", "p", "q", "node2vec", "seed"}


def train_config(raw: dict, bundle_path: str, seed: int) -> ExperimentConfig:
    """ExperimentConfig for `train`, from either the flat or the sectioned form."""
    if any(key in raw for key in ("training", "extraction", "attack", "sbm")):
        raw = {**raw, "bundle": bundle_path, "seed": seed}
        raw.pop("sbm", None)
        return ExperimentConfig.from_dict(raw)
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - train_fields - _FLAT_EXTRAS
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    n2v = dict(raw.get("node2vec", {}))
    for key in ("p", "q"):
        if key in raw:
            n2v[key] = raw[key]
    extraction = {k: raw[k] for k in ("lambda_sp", "lambda_fs", "k") if k in raw}
    return ExperimentConfig(
        bundle=bundle_path,
        node2vec=_build(Node2VecConfig, n2v, "node2vec"),
        extraction=_build(ExtractionSpec, extraction, "extraction"),
        training=_build(TrainConfig, {k: v for k, v in raw.items() if k in train_fields}, "training"),
        seed=seed,
    )


# --------------------------------------------------------------------------
# subcommands


def cmd_sbm(args) -> int:
    raw = _read_json(args.config)
    spec = dict(raw.get("sbm", {}))
    for key in ("blocks", "nodes_per_block", "p_in", "p_out", "feature_dim", "feature_shift"):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    s = _build(SbmSpec, spec, "sbm")
    try:
        bundle = generate_sbm(s.blocks, s.nodes_per_block, s.p_in, s.p_out, s.feature_dim,
                              s.feature_shift, seed=derive_seed(_seed(args, raw), "sbm"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    save_bundle(bundle, _require_out(args))
    print(f"wrote {bundle.num_nodes} nodes, {bundle.num_edges} edges to {args.out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    raw = _read_json(args.config)
    spec = dict(raw.get("attack", {}))
    spec.pop("kind", None)
    for key in ("ptb_rate", "gamma", "noisy_node_frac"):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    known = {"ptb_rate", "gamma", "noisy_node_frac"}
    spec = {k: v for k, v in spec.items() if k in known}
    bundle = load_bundle(args.bundle)
    cfg = _build(atk.AttackConfig, {**spec, "seed": derive_seed(_seed(args, raw), "attack")}, "attack")
    out = atk.inject_structure_attack(bundle, cfg)
    if cfg.gamma > 0 and cfg.noisy_node_frac > 0:
        out = atk.inject_feature_noise(out, cfg)
    save_bundle(out, _require_out(args))
    print(f"added {int((out.provenance == ADVERSARIAL).sum())} adversarial edges; wrote {args.out}")
    return EXIT_OK


def cmd_fraudgen(args) -> int:
    raw = _read_json(args.config)
    spec = {k: v for k, v in raw.get("attack", {}).items() if k in ("num_fraudsters", "reviews_per_fraudster")}
    if args.fraudsters is not None:
        spec["num_fraudsters"] = args.fraudsters
    if args.reviews is not None:
        spec["reviews_per_fraudster"] = args.reviews
    bundle = load_bundle(args.bundle)
    cfg = _build(atk.FraudConfig, {**spec, "seed": derive_seed(_seed(args, raw), "attack")}, "fraud")
    try:
        out = atk.generate_fraud_graph(bundle, cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    save_bundle(out, _require_out(args))
    print(f"added {int((out.provenance == ADVERSARIAL).sum())} adversarial edges; wrote {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    raw = _read_json(args.config)
    bundle = load_bundle(args.bundle)
    emb = embed(bundle, _node2vec_config(raw), seed=derive_seed(_seed(args, raw), "node2vec"),
                workers=args.workers)
    path = os.path.join(_require_out(args), "embeddings.f32")
    save_embeddings(emb, path)
    print(f"wrote {path} ({len(emb)} x {emb.dim})")
    return EXIT_OK


def cmd_extract(args) -> int:
    raw = _read_json(args.config)
    spec = dict(raw.get("extraction", {}))
    for key in ("lambda_sp", "lambda_fs", "k"):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    ex = _build(ExtractionSpec, spec, "extraction")
    bundle = load_bundle(args.bundle)
    if args.embeddings:
        emb = load_embeddings(args.embeddings)
    else:
        emb = embed(bundle, _node2vec_config(raw), seed=derive_seed(_seed(args, raw), "node2vec"))
    try:
        sub = extract_subgraph(score_edges(bundle, emb), ex.lambda_sp, ex.lambda_fs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cands = build_knn_candidates(bundle, emb, subgraph_nodes(sub), ex.k, exclude=sub)
    out = _require_out(args)
    for name, edges in (("subgraph.tsv", sub), ("knn_fs.tsv", cands.e_fs_k), ("knn_sp.tsv", cands.e_sp_k)):
        np.savetxt(os.path.join(out, name), edges, fmt="%d", delimiter="\t")
    print(f"sub-graph {len(sub)} edges, kNN candidates {len(cands.e_fs_k)} fs / {len(cands.e_sp_k)} sp")
    return EXIT_OK


def cmd_train(args) -> int:
    raw = _read_json(args.config)
    config = train_config(raw, args.bundle, _seed(args, raw))
    out = _require_out(args)
    bundle = load_bundle(args.bundle)
    p1 = run_phase1(bundle, config)
    tcfg = dataclasses.replace(config.training, seed=derive_seed(config.seed, "train") & 0x7FFFFFFF)
    dump = os.path.join(out, "augment") if args.dump_augment else None
    result = train(bundle, p1.subgraph, p1.candidates, tcfg, dump_augment=dump)
    save_model(result.params, os.path.join(out, "model.bin"))
    write_train_log(result.history, os.path.join(out, "train_log.jsonl"))
    np.savetxt(os.path.join(out, "subgraph.tsv"), p1.subgraph, fmt="%d", delimiter="\t")
    print(f"best epoch {result.best_epoch}, validation accuracy {result.best_val_acc:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = load_bundle(args.bundle)
    params = load_model(args.model)
    try:
        inf = infer_refined(params, bundle)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = {split: accuracy(inf.predictions, bundle.labels, idx) for split, idx in bundle.splits.items()}
    report = {f"{k}_accuracy": (None if np.isnan(v) else v) for k, v in report.items()}
    if bundle.provenance is not None:
        adv = bundle.provenance == ADVERSARIAL
        report["attention"] = {"clean": summarize(inf.edge_alpha[~adv]), "adversarial": summarize(inf.edge_alpha[adv])}
    if bundle.num_edges and np.all(bundle.labels >= 0):
        report["attention_weighted_inter_class_ratio"] = weighted_inter_class_ratio(bundle, inf.edge_alpha)
    if args.out:
        out = _require_out(args)
        write_report(report, os.path.join(out, "eval.json"))
        write_attention_csv(bundle, inf, os.path.join(out, "attention.csv"))
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    from .harness import run_experiment

    raw = _read_json(args.config)
    if not raw:
        raise ConfigError("'run' needs --config")
    raw = {**raw, "seed": _seed(args, raw)}
    config = ExperimentConfig.from_dict(raw)
    report = run_experiment(config, out_dir=_require_out(args), dump_augment=args.dump_augment)
    print(f"test accuracy {report['test_accuracy']:.4f}; report in {os.path.join(args.out, 'report.json')}")
    return EXIT_OK


def _flatten(prefix, value, rows):
    if isinstance(value, dict):
        for key in sorted(value):
            _flatten(f"{prefix}.{key}" if prefix else key, value[key], rows)
    elif isinstance(value, float):
        rows.append((prefix, f"{value:.6g}"))
    else:
        rows.append((prefix, json.dumps(value)))


def cmd_report(args) -> int:
    path = args.path
    if os.path.isdir(path):
        path = os.path.join(path, "report.json")
    report = _read_json(path)
    rows: list[tuple[str, str]] = []
    _flatten("", report, rows)
    width = max((len(k) for k, _ in rows), default=0)
    for key, value in rows:
        print(f"{key.ljust(width)}  {value}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress):
        # subcommand copies must not overwrite values given before the subcommand
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--config", help="JSON config file", **kw)
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)", **kw)
        p.add_argument("--out", help="output directory", **kw)
        p.add_argument("--dump-augment", action="store_true", help="write per-epoch augmented edges", **kw)
        p.add_argument("-v", "--verbose", action="store_true", **kw)
        return p

    common = global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="gsrefine", parents=[global_flags(suppress=False)],
                                     description="Graph structure refinement under poisoning attacks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sbm", parents=[common], help="generate a stochastic-block-model bundle")
    p.add_argument("--blocks", type=int)
    p.add_argument("--nodes-per-block", type=int)
    p.add_argument("--p-in", type=float)
    p.add_argument("--p-out", type=float)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--feature-shift", type=float)
    p.set_defaults(func=cmd_sbm)

    p = sub.add_parser("attack", parents=[common], help="poison a bundle (edge injection, feature noise)")
    p.add_argument("bundle")
    p.add_argument("--ptb-rate", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--noisy-node-frac", type=float)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("fraudgen", parents=[common], help="inject fraudster co-review cliques")
    p.add_argument("bundle")
    p.add_argument("--fraudsters", type=int)
    p.add_argument("--reviews", type=int)
    p.set_defaults(func=cmd_fraudgen)

    p = sub.add_parser("embed", parents=[common], help="node2vec embeddings")
    p.add_argument("bundle")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", parents=[common], help="clean sub-graph and kNN candidates")
    p.add_argument("bundle")
    p.add_argument("--embeddings", help="embeddings.f32 (computed when omitted)")
    p.add_argument("--lambda-sp", type=float)
    p.add_argument("--lambda-fs", type=float)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train the refinement model on a bundle")
    p.add_argument("bundle")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="refined inference with a trained model")
    p.add_argument("bundle")
    p.add_argument("model", help="model.bin")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", parents=[common], help="full pipeline from an experiment config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=[common], help="pretty-print a report.json")
    p.add_argument("path", help="report.json or a run directory")
    p.set_defaults(func=cmd_report)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (ConfigError, BundleError, FileNotFoundError)):
        return EXIT_CONFIG
    if isinstance(exc, FloatingPointError):
        return EXIT_NUMERIC
    return EXIT_ERROR


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, BundleError, StageError, FloatingPointError, FileNotFoundError, ValueError) as exc:
        code = _exit_code(exc)
        if isinstance(exc, ValueError) and code == EXIT_ERROR:
            code = EXIT_CONFIG
        print(f"gsrefine {args.command}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
