import numpy as np
import pytest

from gsrefine.graph import GraphBundle, canonical_edges


def random_edges(n, m, rng):
    """m distinct undirected edges on n nodes (canonical order)."""
    seen = set()
    while len(seen) < m:
        u, v = (int(x) for x in rng.integers(0, n, 2))
        if u != v:
            seen.add((min(u, v), max(u, v)))
    return canonical_edges(np.array(sorted(seen)))


def make_bundle(n=12, m=20, dim=4, classes=2, seed=0, provenance=None):
    rng = np.random.default_rng(seed)
    edges = random_edges(n, m, rng)
    labels = np.arange(n) % classes
    perm = rng.permutation(n)
    cut1, cut2 = max(classes, n // 5), max(classes, n // 5) * 2
    splits = {"train": np.sort(perm[:cut1]), "val": np.sort(perm[cut1:cut2]), "test": np.sort(perm[cut2:])}
    return GraphBundle(n, edges, rng.standard_normal((n, dim)), labels, splits, provenance)


def two_cliques(size, bridge=True):
    a = [(i, j) for i in range(size) for j in range(i + 1, size)]
    b = [(i + size, j + size) for i, j in a]
    edges = a + b + ([(size - 1, size)] if bridge else [])
    return np.array(edges, dtype=np.int64)


@pytest.fixture
def small_bundle():
    return make_bundle()


# criterion id -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {cid}: {detail}")
