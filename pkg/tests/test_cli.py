import json
import subprocess
import sys

import numpy as np
import pytest

from gsrefine.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from gsrefine.graph import ADVERSARIAL, load_bundle, save_bundle

TRAIN_FLAT = {"epochs": 4, "patience": 4, "hidden_dim": 4, "num_heads": 2, "lambda_aug": 0.5,
              "lambda_sp": 0.7, "lambda_fs": 0.7, "k": 3,
              "node2vec": {"dim": 8, "walk_length": 10, "walks_per_node": 3, "window": 3}}

RUN_CONFIG = {
    "sbm": {"blocks": 2, "nodes_per_block": 20, "p_in": 0.3, "p_out": 0.02, "feature_dim": 4},
    "attack": {"kind": "structure", "ptb_rate": 0.2},
    "node2vec": TRAIN_FLAT["node2vec"],
    "extraction": {"lambda_sp": 0.7, "lambda_fs": 0.7, "k": 3},
    "training": {"epochs": 4, "patience": 4, "hidden_dim": 4, "num_heads": 2, "lambda_aug": 0.5},
    "seed": 3,
}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def poisoned(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["sbm", "--blocks", "2", "--nodes-per-block", "20", "--p-in", "0.3", "--p-out", "0.02",
                 "--feature-dim", "4", "--seed", "1", "--out", str(root / "clean")]) == EXIT_OK
    assert main(["attack", str(root / "clean"), "--ptb-rate", "0.2", "--seed", "2",
                 "--out", str(root / "poisoned")]) == EXIT_OK
    return root


def test_sbm_and_attack_outputs(poisoned):
    clean = load_bundle(poisoned / "clean")
    attacked = load_bundle(poisoned / "poisoned")
    assert clean.num_nodes == 40
    assert int((attacked.provenance == ADVERSARIAL).sum()) == int(0.2 * clean.num_edges)


def test_seed_before_subcommand_is_kept(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "9", "sbm", "--out", str(a)]) == EXIT_OK
    assert main(["sbm", "--seed", "9", "--out", str(b)]) == EXIT_OK
    assert np.array_equal(load_bundle(a).edges, load_bundle(b).edges)


def test_fraudgen(tmp_path, poisoned):
    out = tmp_path / "fraud"
    assert main(["fraudgen", str(poisoned / "clean"), "--fraudsters", "2", "--reviews", "5",
                 "--seed", "4", "--out", str(out)]) == EXIT_OK
    assert (load_bundle(out).provenance == ADVERSARIAL).sum() > 0


def test_embed_extract_train_eval(tmp_path, poisoned):
    bundle = str(poisoned / "poisoned")
    cfg = write_json(tmp_path / "train.json", TRAIN_FLAT)
    assert main(["embed", bundle, "--config", cfg, "--out", str(tmp_path / "emb")]) == EXIT_OK
    emb = tmp_path / "emb" / "embeddings.f32"
    assert emb.exists()
    assert main(["extract", bundle, "--embeddings", str(emb), "--lambda-sp", "0.7", "--lambda-fs", "0.7",
                 "--k", "3", "--out", str(tmp_path / "ext")]) == EXIT_OK
    for name in ("subgraph.tsv", "knn_fs.tsv", "knn_sp.tsv"):
        assert (tmp_path / "ext" / name).exists()
    assert main(["train", bundle, "--config", cfg, "--seed", "5", "--dump-augment",
                 "--out", str(tmp_path / "tr")]) == EXIT_OK
    for name in ("model.bin", "train_log.jsonl", "subgraph.tsv"):
        assert (tmp_path / "tr" / name).exists()
    assert any((tmp_path / "tr" / "augment").iterdir())
    assert main(["eval", bundle, str(tmp_path / "tr" / "model.bin"), "--out", str(tmp_path / "ev")]) == EXIT_OK
    report = json.loads((tmp_path / "ev" / "eval.json").read_text())
    assert 0.0 <= report["test_accuracy"] <= 1.0
    assert report["attention"]["adversarial"]["count"] == int(0.2 * load_bundle(poisoned / "clean").num_edges)


def test_run_twice_is_identical_and_report_prints(tmp_path, capsys):
    cfg = write_json(tmp_path / "run.json", RUN_CONFIG)
    for name in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b" / "model.bin").read_bytes()
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    ra.pop("runtime"), rb.pop("runtime")
    assert ra == rb
    capsys.readouterr()
    assert main(["report", str(tmp_path / "a")]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("test_accuracy") for line in lines)


@pytest.mark.parametrize("argv", [
    ["run"],
    ["run", "--config", "/nonexistent.json", "--out", "x"],
    ["sbm", "--p-in", "0.01", "--p-out", "0.5", "--out", "{tmp}/s"],
    ["sbm", "--seed", "-1", "--out", "{tmp}/s"],
    ["train", "{tmp}/missing_bundle", "--out", "{tmp}/t"],
    ["eval", "{tmp}/missing_bundle", "{tmp}/model.bin"],
])
def test_configuration_errors_exit_2(argv, tmp_path):
    assert main([a.replace("{tmp}", str(tmp_path)) for a in argv]) == EXIT_CONFIG


def test_bad_config_keys_exit_2(tmp_path, poisoned):
    cfg = write_json(tmp_path / "bad.json", {"epochs": 2, "no_such_key": 1})
    assert main(["train", str(poisoned / "poisoned"), "--config", cfg, "--out", str(tmp_path / "t")]) == EXIT_CONFIG


def test_divergence_exits_3(tmp_path, poisoned):
    b = load_bundle(poisoned / "poisoned")
    save_bundle(b.replace(features=b.features * 1e30), tmp_path / "huge")
    cfg = write_json(tmp_path / "train.json", TRAIN_FLAT)
    code = main(["train", str(tmp_path / "huge"), "--config", cfg, "--out", str(tmp_path / "t")])
    assert code == EXIT_NUMERIC


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gsrefine", "sbm", "--out", str(tmp_path / "s")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "gsrefine", "run"], capture_output=True, text=True)
    assert proc.returncode == 2
