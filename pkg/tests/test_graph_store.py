import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from kgsec.graph_store import (
    FrozenStore,
    ParseError,
    Saturated,
    Triple,
    TripleStore,
    TypeConflict,
    UnknownId,
    deserialize,
    negative_sample,
    negative_sample_batch,
    serialize,
)

from conftest import random_store


def test_intern_first_id_is_zero():
    assert TripleStore().intern_entity("plc-1", "device") == 0


def test_intern_is_idempotent():
    s = TripleStore()
    assert s.intern_entity("plc-1", "device") == s.intern_entity("plc-1", "device")
    assert s.n_entities == 1


def test_intern_type_conflict():
    s = TripleStore()
    s.intern_entity("plc-1", "device")
    with pytest.raises(TypeConflict):
        s.intern_entity("plc-1", "host")


def test_intern_rejects_empty_label():
    with pytest.raises(ValueError):
        TripleStore().intern_entity("", "device")


def test_add_is_additive():
    s = TripleStore()
    t = s.add("a", "n", "r", "b", "n")
    s.add_triple(t, 1)
    assert s.count(t) == 2


def test_add_fresh_with_count():
    s = TripleStore()
    a, b = s.intern_entity("a", "n"), s.intern_entity("b", "n")
    r = s.intern_relation("r")
    assert s.add_triple((a, r, b), 3) == 3
    assert (a, r, b) in s


def test_add_rejects_nonpositive_count():
    s = random_store(3, 1, 0)
    with pytest.raises(ValueError):
        s.add_triple((0, 0, 1), 0)


def test_stale_id_from_other_store():
    big = random_store(10, 2, 0)
    small = random_store(2, 1, 0)
    with pytest.raises(UnknownId):
        small.add_triple((9, 0, 1))
    with pytest.raises(UnknownId):
        small.add_triple((0, 1, 1))
    assert big.n_entities == 10


def test_frozen_store_rejects_writes():
    s = random_store(3, 1, 2).freeze()
    with pytest.raises(FrozenStore):
        s.add_triple((0, 0, 1))
    with pytest.raises(FrozenStore):
        s.intern_entity("new", "n")
    # known labels still resolve
    assert s.intern_entity("e0", "node") == 0


def test_arrays_follow_new_interning():
    s = random_store(3, 1, 3, seed=1)
    s.as_arrays()
    s.add("e0", "node", "r0", "fresh", "node")
    assert s.contains_many([[0, 0, s.entity_id("fresh")]]).all()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2), st.integers(0, 5),
                          st.integers(1, 4)), max_size=30))
def test_contains_iff_positive_count(rows):
    s = random_store(6, 3, 0)
    for a, p, b, c in rows:
        s.add_triple((a, p, b), c)
    for a in range(6):
        for p in range(3):
            for b in range(6):
                assert s.contains((a, p, b)) == (s.count((a, p, b)) >= 1)
    trip = np.array([(a, p, b) for a in range(6) for p in range(3) for b in range(6)])
    assert (s.contains_many(trip) == np.array([s.contains(t) for t in trip])).all()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.text(alphabet="abcdef", min_size=1, max_size=3), min_size=1, max_size=20))
def test_ids_are_compact(labels):
    s = TripleStore()
    for lab in labels:
        s.intern_entity(lab, "t")
    assert max(s.entity_id(lab) for lab in labels) == len(set(labels)) - 1


def test_negative_object_example(rng):
    s = random_store(3, 1, 0)
    s.add_triple((0, 0, 1))
    seen = {negative_sample(s, Triple(0, 0, 1), "object", rng) for _ in range(200)}
    assert seen == {Triple(0, 0, 0), Triple(0, 0, 2)}


def test_negative_saturated():
    s = random_store(2, 1, 0)
    for a in range(2):
        for b in range(2):
            s.add_triple((a, 0, b))
    with pytest.raises(Saturated):
        negative_sample(s, Triple(0, 0, 0), "object", np.random.default_rng(0))
    with pytest.raises(Saturated):
        negative_sample_batch(s, np.array([[0, 0, 0]]), np.array([1]), np.random.default_rng(0))


def test_negative_needs_two_candidates():
    s = random_store(2, 1, 1)
    with pytest.raises(Saturated):
        negative_sample(s, Triple(0, 0, 1), "relation", np.random.default_rng(0))


def test_negative_unknown_slot(rng):
    with pytest.raises(ValueError):
        negative_sample(random_store(3, 1, 1), Triple(0, 0, 1), "predicate", rng)


@pytest.mark.parametrize("slot,col", [("subject", 0), ("object", 2)])
def test_negative_uniform_chi_square(slot, col):
    """Draw frequencies match uniform over exhaustively enumerated admissible candidates."""
    s = random_store(5, 2, 12, seed=7)
    t = next(iter(s))
    admissible = []
    for x in range(5):
        cand = list(t)
        cand[col] = x
        if Triple(*cand) not in s:
            admissible.append(x)
    rng = np.random.default_rng(99)
    draws = [negative_sample(s, t, slot, rng)[col] for _ in range(10_000)]
    counts = np.array([draws.count(x) for x in admissible])
    assert counts.sum() == 10_000
    expected = np.full(len(admissible), 10_000 / len(admissible))
    assert stats.chisquare(counts, expected).pvalue > 1e-3


def test_negative_batch_uniform_chi_square():
    s = random_store(5, 2, 12, seed=7)
    t = np.array(next(iter(s)))
    admissible = [x for x in range(5) if Triple(t[0], t[1], x) not in s]
    rng = np.random.default_rng(5)
    out = negative_sample_batch(s, np.tile(t, (10_000, 1)), np.ones(10_000, dtype=np.int64), rng)
    counts = np.array([(out[:, 2] == x).sum() for x in admissible])
    assert counts.sum() == 10_000
    assert stats.chisquare(counts).pvalue > 1e-3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 2))
def test_negatives_never_contained(seed, slot):
    s = random_store(6, 6, 20, seed=seed)
    trip, _ = s.as_arrays()
    rng = np.random.default_rng(seed)
    out = negative_sample_batch(s, trip, np.full(len(trip), slot), rng)
    assert not s.contains_many(out).any()
    # only the requested slot changed
    keep = [c for c in range(3) if c != [0, 2, 1][slot]]
    assert (out[:, keep] == trip[:, keep]).all()


def test_serialize_empty():
    text = serialize(TripleStore())
    assert text.strip().startswith("#")
    assert deserialize(text) == TripleStore()


def test_serialize_three_triples():
    s = TripleStore()
    s.add("plc", "device", "connectedTo", "ot_net", "network")
    s.add("motor", "module", "partOf", "plc", "device", 2)
    s.add("speed", "variable", "belongsTo", "motor", "module", 5)
    back = deserialize(serialize(s))
    assert back.labeled_multiset() == s.labeled_multiset()
    assert back.entity_type(back.entity_id("speed")) == "variable"
    assert back == s


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_serialize_round_trip_property(seed):
    s = random_store(8, 3, 25, seed=seed)
    s.intern_relation("unused")
    back = deserialize(serialize(s))
    assert back.labeled_multiset() == s.labeled_multiset()
    assert back.dictionary_hash() == s.dictionary_hash()


@pytest.mark.parametrize("body,line", [
    ("@entity\ta\tn\n@entity\tb\tn\na\tr\n", 4),
    ("@entity\ta\tn\n\na\tr\ta\tx\n", 4),
    ("@entity\ta\tn\na\tr\tb\t1\n", 3),
    ("@entity\ta\n", 2),
    ("@entity\ta\tn\na\tr\ta\t0\n", 3),
])
def test_deserialize_errors_carry_line(body, line):
    with pytest.raises(ParseError) as err:
        deserialize("# kgsec graph v1\n" + body)
    assert err.value.line == line
