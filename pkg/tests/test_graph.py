import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_bundle, random_edges
from gsrefine.graph import (
    ADVERSARIAL,
    CLEAN,
    BundleError,
    GraphBundle,
    canonical_edges,
    clean_rate,
    csr_adjacency,
    degree_profile,
    edge_isin,
    edge_union,
    load_bundle,
    save_bundle,
)


def write_bundle(tmp_path, edges="0 1\n1 2\n", features=None, labels="0\t0\n1\t1\n2\t0\n", splits=None, prov=None):
    features = features or "node_id,f0,f1\n0,0.1,0.2\n1,0.3,0.4\n2,0.5,0.6\n"
    splits = splits or {"train": [0, 1], "val": [2], "test": []}
    (tmp_path / "edges.tsv").write_text(edges)
    (tmp_path / "features.csv").write_text(features)
    (tmp_path / "labels.tsv").write_text(labels)
    (tmp_path / "splits.json").write_text(json.dumps(splits))
    if prov is not None:
        (tmp_path / "provenance.tsv").write_text(prov)
    return tmp_path


def test_reversed_duplicate_rows_collapse(tmp_path):
    b = load_bundle(write_bundle(tmp_path, edges="0 1\n1 0\n"))
    assert b.edges.tolist() == [[0, 1]]


def test_self_loop_reported_with_line(tmp_path):
    with pytest.raises(BundleError, match=r"edges\.tsv:2.*self-loop"):
        load_bundle(write_bundle(tmp_path, edges="0 1\n0 0\n"))


def test_out_of_range_endpoint(tmp_path):
    with pytest.raises(BundleError, match=r"edges\.tsv:1"):
        load_bundle(write_bundle(tmp_path, edges="0 7\n"))


def test_malformed_feature_row(tmp_path):
    feats = "node_id,f0,f1\n0,0.1,0.2\n1,oops,0.4\n2,0.5,0.6\n"
    with pytest.raises(BundleError, match=r"features\.csv:3"):
        load_bundle(write_bundle(tmp_path, features=feats))


def test_overlapping_splits(tmp_path):
    with pytest.raises(BundleError, match="overlaps"):
        load_bundle(write_bundle(tmp_path, splits={"train": [0, 1], "val": [1], "test": []}))


def test_missing_file(tmp_path):
    write_bundle(tmp_path)
    os.remove(tmp_path / "labels.tsv")
    with pytest.raises(BundleError, match="labels.tsv"):
        load_bundle(tmp_path)


def test_split_with_unlabeled_node(tmp_path):
    with pytest.raises(BundleError, match="unlabeled"):
        load_bundle(write_bundle(tmp_path, labels="0\t0\n1\t1\n"))


def test_provenance_roundtrip_and_alignment(tmp_path):
    b = load_bundle(write_bundle(tmp_path, edges="2 1\n0 1\n", prov="1\t2\tadversarial\n0\t1\tclean\n"))
    assert b.provenance_map() == {(0, 1): "clean", (1, 2): "adversarial"}
    out = tmp_path / "copy"
    save_bundle(b, out)
    again = load_bundle(out)
    assert again.content_hash() == b.content_hash()


def test_save_is_canonical(tmp_path):
    b = make_bundle(n=15, m=25, seed=3, provenance=np.arange(25) % 2)
    save_bundle(b, tmp_path / "a")
    save_bundle(load_bundle(tmp_path / "a"), tmp_path / "b")
    for name in ("edges.tsv", "features.csv", "labels.tsv", "splits.json", "provenance.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert np.array_equal(load_bundle(tmp_path / "a").features, b.features)


def test_invariants_on_construction():
    with pytest.raises(BundleError):
        GraphBundle(3, np.array([[0, 3]]), np.zeros((3, 1)), np.zeros(3))
    with pytest.raises(BundleError):
        GraphBundle(3, np.array([[0, 1]]), np.zeros((3, 1)), np.zeros(3), provenance=np.array([0, 1]))
    with pytest.raises(BundleError):
        GraphBundle(3, np.array([[0, 1]]), np.zeros((2, 1)), np.zeros(3))


def test_star_graph_imbalance():
    edges = np.array([[0, i] for i in range(1, 6)])
    assert degree_profile(6, edges).imbalance_ratio == 5.0


def test_cycle_is_balanced():
    prof = degree_profile(3, np.array([[0, 1], [1, 2], [0, 2]]))
    assert prof.imbalance_ratio == 1.0
    assert prof.degrees.tolist() == [2, 2, 2]


def test_path_median_and_ratio():
    prof = degree_profile(4, np.array([[0, 1], [1, 2], [2, 3]]))
    assert prof.median == 1.5
    assert prof.imbalance_ratio == 2.0


def test_isolated_nodes_ignored():
    prof = degree_profile(10, np.array([[0, 1], [1, 2]]))
    assert prof.imbalance_ratio == 2.0


def test_empty_edge_set_rejected():
    with pytest.raises(ValueError):
        degree_profile(4, np.zeros((0, 2), dtype=np.int64))


def test_clean_rate_examples():
    prov = {(i, i + 1): "clean" for i in range(9)} | {(20, 21): "adversarial"}
    subset = np.array(list(prov))
    assert clean_rate(subset, prov) == pytest.approx(0.9)
    assert clean_rate(subset[:9], prov) == 1.0
    assert clean_rate(subset[9:], prov) == 0.0


def test_clean_rate_errors():
    prov = {(0, 1): "clean"}
    with pytest.raises(ValueError):
        clean_rate(np.zeros((0, 2), dtype=np.int64), prov)
    with pytest.raises((KeyError, ValueError)):
        clean_rate(np.array([[1, 2]]), prov)


def test_clean_rate_accepts_bundle():
    b = make_bundle(provenance=np.r_[np.full(15, CLEAN), np.full(5, ADVERSARIAL)])
    assert clean_rate(b.edges, b) == pytest.approx(0.75)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 30), st.data())
def test_degrees_sum_to_twice_edges(n, data):
    m = data.draw(st.integers(1, n * (n - 1) // 2))
    edges = random_edges(n, m, np.random.default_rng(data.draw(st.integers(0, 2**32 - 1))))
    prof = degree_profile(n, edges)
    assert prof.degrees.sum() == 2 * m
    assert prof.imbalance_ratio >= 1.0
    indptr, indices = csr_adjacency(n, edges)
    assert indptr[-1] == 2 * m
    for u in range(n):
        row = indices[indptr[u]:indptr[u + 1]]
        assert np.all(np.diff(row) > 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 19), st.integers(0, 19)), min_size=1, max_size=60))
def test_canonical_edges_properties(pairs):
    pairs = [p for p in pairs if p[0] != p[1]]
    edges = canonical_edges(np.array(pairs, dtype=np.int64).reshape(-1, 2))
    assert np.all(edges[:, 0] < edges[:, 1]) if len(edges) else True
    assert len({tuple(e) for e in edges.tolist()}) == len(edges)
    assert {tuple(e) for e in edges.tolist()} == {(min(a, b), max(a, b)) for a, b in pairs}


def test_edge_union_and_isin():
    a = np.array([[0, 1], [2, 3]])
    b = np.array([[1, 0], [3, 4]])
    u = edge_union(5, a, b)
    assert u.tolist() == [[0, 1], [2, 3], [3, 4]]
    assert edge_isin(np.array([[3, 4], [1, 4]]), u, 5).tolist() == [True, False]
