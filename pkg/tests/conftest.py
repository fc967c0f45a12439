import numpy as np
import pytest

from kgsec.graph_store import TripleStore


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_store(n: int, m: int, k: int, seed: int = 0) -> TripleStore:
    """Store with ``n`` entities, ``m`` relations and up to ``k`` random triples."""
    r = np.random.default_rng(seed)
    store = TripleStore()
    for i in range(n):
        store.intern_entity(f"e{i}", "node")
    for j in range(m):
        store.intern_relation(f"r{j}")
    for _ in range(k):
        s, p, o = int(r.integers(n)), int(r.integers(m)), int(r.integers(n))
        store.add_triple((s, p, o), int(r.integers(1, 4)))
    return store


@pytest.fixture
def toy_store():
    """Six positives over four entities and two relations."""
    store = TripleStore()
    for s, p, o in [("a", "likes", "b"), ("b", "likes", "c"), ("c", "likes", "a"),
                    ("a", "owns", "d"), ("b", "owns", "d"), ("c", "owns", "d")]:
        store.add(s, "node", p, o, "node")
    return store


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}  {detail}")
