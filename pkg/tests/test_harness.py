import json

import numpy as np
import pytest

from conftest import make_bundle
from gsrefine.graph import ADVERSARIAL, GraphBundle, save_bundle
from gsrefine.harness import (
    ABLATIONS,
    AttackSpec,
    ConfigError,
    ExperimentConfig,
    ExtractionSpec,
    SbmSpec,
    StageError,
    ablation_variant,
    clear_phase1_cache,
    generate_sbm,
    group_imbalance,
    inter_class_edge_ratio,
    prepare_bundle,
    run_experiment,
    run_phase1,
    strip_runtime,
    weighted_inter_class_ratio,
)
from gsrefine.node2vec import Node2VecConfig
from gsrefine.train import TrainConfig

FAST_N2V = Node2VecConfig(dim=8, walk_length=10, walks_per_node=3, window=3, epochs=1)
FAST_TRAIN = TrainConfig(epochs=8, patience=8, hidden_dim=4, num_heads=2, scheme="L-H", lambda_aug=0.5)


def tiny_config(**kw):
    base = dict(
        sbm=SbmSpec(2, 20, 0.3, 0.02, feature_dim=4),
        attack=AttackSpec("structure", ptb_rate=0.2),
        node2vec=FAST_N2V,
        extraction=ExtractionSpec(0.7, 0.7, 3),
        training=FAST_TRAIN,
        seed=5,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_sbm_without_cross_edges():
    b = generate_sbm(2, 30, 0.2, 0.0, seed=1)
    assert inter_class_edge_ratio(b) == 0.0


def test_sbm_expected_edge_count():
    counts = []
    for seed in range(5):
        b = generate_sbm(2, 50, 0.2, 0.01, seed=seed)
        intra = b.labels[b.edges[:, 0]] == b.labels[b.edges[:, 1]]
        counts.append(intra.sum() / 2)
    mean, sd = 245.0, np.sqrt(1225 * 0.2 * 0.8)
    assert all(abs(c - mean) < 4 * sd for c in counts)


def test_sbm_split_sizes():
    b = generate_sbm(2, 50, 0.2, 0.01, seed=0)
    assert [len(b.splits[k]) for k in ("train", "val", "test")] == [10, 10, 80]
    assert len(np.unique(b.labels[b.splits["train"]])) == 2


def test_sbm_feature_means():
    b = generate_sbm(3, 400, 0.01, 0.001, feature_dim=5, feature_shift=2.0, seed=0)
    for block in range(3):
        mean = b.features[b.labels == block].mean(axis=0)
        expected = np.zeros(5)
        expected[block] = 2.0
        assert np.allclose(mean, expected, atol=0.2)


def test_sbm_argument_checks():
    with pytest.raises(ValueError):
        generate_sbm(1, 10, 0.2, 0.1)
    with pytest.raises(ValueError):
        generate_sbm(2, 10, 0.1, 0.2)
    with pytest.raises(ConfigError):
        SbmSpec(p_in=0.1, p_out=0.1)


def test_sbm_gives_up_after_max_tries():
    with pytest.raises(RuntimeError):
        generate_sbm(8, 1, 0.5, 0.1, seed=0, max_tries=2)


def test_inter_class_ratio_examples():
    n = 6
    labels = np.array([0, 0, 0, 1, 1, 1])
    bip = np.array([(i, j) for i in range(3) for j in range(3, 6)])
    b = GraphBundle(n, bip, np.zeros((n, 1)), labels)
    assert inter_class_edge_ratio(b) == 1.0
    assert inter_class_edge_ratio(b, np.array([[0, 1]])) == 0.0
    with pytest.raises(ValueError):
        inter_class_edge_ratio(b.replace(labels=np.array([0, 0, 0, 1, 1, -1])))
    partial = b.replace(labels=np.array([0, 0, 0, 1, 1, -1]))
    assert inter_class_edge_ratio(partial, labels=np.zeros(6, dtype=int)) == pytest.approx(6 / 9)
    assert inter_class_edge_ratio(partial, labels=np.ones(6, dtype=int)) == 1.0


def test_weighted_ratio():
    labels = np.array([0, 0, 1])
    b = GraphBundle(3, np.array([[0, 1], [1, 2]]), np.zeros((3, 1)), labels)
    assert weighted_inter_class_ratio(b, np.array([3.0, 1.0])) == pytest.approx(0.25)


def test_config_from_dict_and_errors(tmp_path):
    raw = {"sbm": {"nodes_per_block": 10}, "attack": {"kind": "structure", "ptb_rate": 0.1},
           "training": {"epochs": 3}, "seed": 9}
    cfg = ExperimentConfig.from_dict(raw)
    assert cfg.sbm.nodes_per_block == 10 and cfg.training.epochs == 3 and cfg.seed == 9
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    for bad in ({"sbm": {}, "bogus": 1}, {"sbm": {"nope": 1}}, {}, {"sbm": {}, "bundle": "x"},
                {"sbm": {}, "extraction": {"lambda_sp": 0.0}}, {"sbm": {}, "attack": {"kind": "meta"}},
                {"sbm": {}, "training": {"scheme": "X"}}):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(path)


def test_ablation_variants():
    cfg = tiny_config()
    no_se = ablation_variant(cfg, "no-SE")
    assert no_se.extraction.lambda_sp == 1.0 and no_se.training.lambda_aug == 0.0
    assert no_se.training.scheme == "none"
    se = ablation_variant(cfg, "SE")
    assert se.extraction == cfg.extraction and se.training.lambda_aug == 0.0
    assert ablation_variant(cfg, "SE+GA").training.scheme == "none"
    assert ablation_variant(cfg, "SE+GA+GT") == cfg
    with pytest.raises(ConfigError):
        ablation_variant(cfg, "GT")
    assert len(ABLATIONS) == 4


def test_prepare_bundle_tags_attack():
    clean, attacked = prepare_bundle(tiny_config())
    assert attacked.num_edges == clean.num_edges + int(0.2 * clean.num_edges)
    assert int((attacked.provenance == ADVERSARIAL).sum()) == int(0.2 * clean.num_edges)
    _, untouched = prepare_bundle(tiny_config(attack=AttackSpec("none")))
    assert np.all(untouched.provenance == 0)


def test_prepare_bundle_fraud_and_feature_kinds():
    _, fraud = prepare_bundle(tiny_config(attack=AttackSpec("fraud", num_fraudsters=2, reviews_per_fraudster=4)))
    assert (fraud.provenance == ADVERSARIAL).sum() > 0
    clean, noisy = prepare_bundle(tiny_config(attack=AttackSpec("feature", gamma=0.5, noisy_node_frac=0.5)))
    assert np.any(clean.features != noisy.features)


def test_phase1_cached_across_ablations():
    clear_phase1_cache()
    cfg = tiny_config()
    _, attacked = prepare_bundle(cfg)
    first = run_phase1(attacked, cfg)
    second = run_phase1(attacked, ablation_variant(cfg, "SE+GA"))
    assert not first.cache_hit and second.cache_hit
    assert np.array_equal(first.subgraph, second.subgraph)
    se = run_phase1(attacked, ablation_variant(cfg, "SE"))
    assert np.array_equal(se.subgraph, first.subgraph)


def test_phase1_disk_cache(tmp_path):
    clear_phase1_cache()
    cfg = tiny_config(cache_dir=str(tmp_path))
    _, attacked = prepare_bundle(cfg)
    first = run_phase1(attacked, cfg)
    clear_phase1_cache()
    again = run_phase1(attacked, cfg)
    assert again.cache_hit
    assert np.array_equal(first.subgraph, again.subgraph)
    assert np.array_equal(first.candidates.e_fs_k, again.candidates.e_fs_k)


def test_degenerate_config_skips_refinement():
    cfg = tiny_config(attack=AttackSpec("none"), extraction=ExtractionSpec(1.0, 1.0, 3),
                      training=TrainConfig(epochs=3, patience=3, hidden_dim=4, num_heads=2,
                                           lambda_aug=0.0, scheme="none"))
    clear_phase1_cache()
    clean, attacked = prepare_bundle(cfg)
    p1 = run_phase1(attacked, cfg)
    assert p1.embeddings is None and p1.candidates is None
    assert np.array_equal(p1.subgraph, clean.edges)


def test_run_experiment_report(tmp_path):
    report = run_experiment(tiny_config(), out_dir=str(tmp_path))
    for name in ("report.json", "model.bin", "train_log.jsonl", "attention.csv", "subgraph.tsv",
                 "embeddings.f32", "config.json"):
        assert (tmp_path / name).exists()
    on_disk = json.loads((tmp_path / "report.json").read_text())
    assert on_disk == json.loads(json.dumps(report))
    for key in ("test_accuracy", "val_accuracy"):
        assert 0.0 <= report[key] <= 1.0
    bands = report["degree_band_accuracy"]
    assert bands["num_low"] + bands["num_high"] == report["num_nodes"] - 8
    assert 0.0 <= report["subgraph"]["clean_rate"] <= 1.0
    assert report["attention"]["adversarial"]["count"] == report["num_adversarial_edges"]
    assert set(report["runtime"]["seconds"]) == {"attack", "phase1", "train", "infer"}
    rows = (tmp_path / "attention.csv").read_text().splitlines()
    assert rows[0] == "u,v,provenance,alpha_uv,alpha_vu,alpha_mean"
    assert len(rows) == report["num_edges"] + 1


def test_run_experiment_deterministic():
    clear_phase1_cache()
    a = run_experiment(tiny_config())
    clear_phase1_cache()
    b = run_experiment(tiny_config())
    assert strip_runtime(a) == strip_runtime(b)
    assert strip_runtime(a) != strip_runtime(run_experiment(tiny_config(seed=6)))


def test_run_experiment_on_bundle_path(tmp_path):
    b = make_bundle(n=30, m=60, seed=2)
    save_bundle(b, tmp_path / "b")
    cfg = ExperimentConfig(bundle=str(tmp_path / "b"), node2vec=FAST_N2V, training=FAST_TRAIN,
                           extraction=ExtractionSpec(0.8, 0.8, 3))
    report = run_experiment(cfg)
    assert report["num_adversarial_edges"] == 0
    assert report["attention"]["adversarial"] is None


def test_stage_error_names_stage(tmp_path):
    cfg = ExperimentConfig(bundle=str(tmp_path / "missing"), training=FAST_TRAIN)
    with pytest.raises(StageError) as info:
        run_experiment(cfg)
    assert info.value.stage == "attack"


def test_stage_error_preserves_partial_artifacts(tmp_path):
    cfg = tiny_config(extraction=ExtractionSpec(0.05, 0.05, 3))
    with pytest.raises(StageError) as info:
        run_experiment(cfg, out_dir=str(tmp_path))
    assert info.value.stage == "phase1"


def test_group_imbalance_on_scale_free_graph():
    import networkx as nx

    g = nx.barabasi_albert_graph(300, 2, seed=1)
    edges = np.array(sorted((min(u, v), max(u, v)) for u, v in g.edges()))
    deg = np.bincount(edges.ravel(), minlength=300)
    out = group_imbalance(300, edges, deg, "L-H")
    assert set(out) == {"all", "LL", "HL", "HH"}
    assert all(out[g] < out["all"] for g in ("LL", "HL", "HH") if out[g] is not None)
