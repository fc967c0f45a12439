"""Interned, counted triple store.

Entities and relations are interned to dense integer ids. Triples are kept as
a multiset: repeated observations of the same statement raise its count
instead of creating duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

NEGATIVE_SAMPLE_RETRIES = 100

SLOTS = ("subject", "object", "relation")


class GraphStoreError(Exception):
    pass


class TypeConflict(GraphStoreError):
    pass


class UnknownId(GraphStoreError):
    pass


class Saturated(GraphStoreError):
    pass


class FrozenStore(GraphStoreError):
    pass


class ParseError(GraphStoreError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class Triple(NamedTuple):
    s: int
    p: int
    o: int


@dataclass
class _Dictionary:
    labels: list
    index: dict

    @classmethod
    def empty(cls):
        return cls([], {})

    def __len__(self):
        return len(self.labels)


class TripleStore:
    """Knowledge graph as an interned multiset of (subject, predicate, object)."""

    def __init__(self):
        self._entities = _Dictionary.empty()
        self._etypes: list[str] = []
        self._relations = _Dictionary.empty()
        self._counts: dict[Triple, int] = {}
        self._frozen = False
        self._array_cache = None

    # -- dictionaries -----------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self._entities)

    @property
    def n_relations(self) -> int:
        return len(self._relations)

    def intern_entity(self, label: str, etype: str) -> int:
        if not label:
            raise ValueError("entity label must be non-empty")
        eid = self._entities.index.get(label)
        if eid is not None:
            if self._etypes[eid] != etype:
                raise TypeConflict(
                    f"{label!r} already interned as {self._etypes[eid]!r}, not {etype!r}"
                )
            return eid
        self._check_mutable()
        eid = len(self._entities)
        self._entities.labels.append(label)
        self._entities.index[label] = eid
        self._etypes.append(etype)
        self._array_cache = None
        return eid

    def intern_relation(self, label: str) -> int:
        if not label:
            raise ValueError("relation label must be non-empty")
        rid = self._relations.index.get(label)
        if rid is not None:
            return rid
        self._check_mutable()
        rid = len(self._relations)
        self._relations.labels.append(label)
        self._relations.index[label] = rid
        self._array_cache = None
        return rid

    def entity_id(self, label: str) -> int | None:
        return self._entities.index.get(label)

    def relation_id(self, label: str) -> int | None:
        return self._relations.index.get(label)

    def entity_label(self, eid: int) -> str:
        self._check_entity(eid)
        return self._entities.labels[eid]

    def entity_type(self, eid: int) -> str:
        self._check_entity(eid)
        return self._etypes[eid]

    def relation_label(self, rid: int) -> str:
        self._check_relation(rid)
        return self._relations.labels[rid]

    @property
    def entity_labels(self) -> list[str]:
        return list(self._entities.labels)

    @property
    def entity_types(self) -> list[str]:
        return list(self._etypes)

    @property
    def relation_labels(self) -> list[str]:
        return list(self._relations.labels)

    def entities_of_type(self, etype: str) -> list[int]:
        return [i for i, t in enumerate(self._etypes) if t == etype]

    # -- triples ------------------------------------------------------------

    def add_triple(self, t: Triple, count: int = 1) -> int:
        if count < 1:
            raise ValueError("count must be a positive integer")
        self._check_mutable()
        t = Triple(*t)
        self._check_entity(t.s)
        self._check_relation(t.p)
        self._check_entity(t.o)
        new = self._counts.get(t, 0) + int(count)
        self._counts[t] = new
        self._array_cache = None
        return new

    def add(self, s_label, s_type, p_label, o_label, o_type, count=1) -> Triple:
        """Intern all three labels and add the statement."""
        t = Triple(
            self.intern_entity(s_label, s_type),
            self.intern_relation(p_label),
            self.intern_entity(o_label, o_type),
        )
        self.add_triple(t, count)
        return t

    def count(self, t) -> int:
        return self._counts.get(Triple(*t), 0)

    def contains(self, t) -> bool:
        return Triple(*t) in self._counts

    __contains__ = contains

    def __len__(self) -> int:
        return len(self._counts)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._counts)

    def items(self) -> Iterable[tuple[Triple, int]]:
        return self._counts.items()

    @property
    def total_count(self) -> int:
        return sum(self._counts.values())

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Triples as an (k, 3) int64 array in insertion order, plus counts."""
        if self._array_cache is None:
            k = len(self._counts)
            triples = np.fromiter(
                (x for t in self._counts for x in t), dtype=np.int64, count=3 * k
            ).reshape(k, 3)
            counts = np.fromiter(self._counts.values(), dtype=np.int64, count=k)
            codes = self.encode(triples)
            self._array_cache = (triples, counts, np.sort(codes))
        return self._array_cache[:2]

    def encode(self, triples: np.ndarray) -> np.ndarray:
        """Map (k, 3) id rows to unique int64 codes for set membership tests."""
        n = max(self.n_entities, 1)
        m = max(self.n_relations, 1)
        triples = np.asarray(triples, dtype=np.int64)
        return (triples[:, 0] * m + triples[:, 1]) * n + triples[:, 2]

    def contains_many(self, triples) -> np.ndarray:
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if len(self._counts) == 0:
            return np.zeros(len(triples), dtype=bool)
        self.as_arrays()
        sorted_codes = self._array_cache[2]
        codes = self.encode(triples)
        pos = np.searchsorted(sorted_codes, codes)
        pos = np.minimum(pos, len(sorted_codes) - 1)
        return sorted_codes[pos] == codes

    # -- lifecycle ---------------------------------------------------------

    def freeze(self) -> "TripleStore":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def _check_mutable(self):
        if self._frozen:
            raise FrozenStore("store is frozen")

    def _check_entity(self, eid):
        if not (0 <= eid < len(self._entities)):
            raise UnknownId(f"entity id {eid} not interned")

    def _check_relation(self, rid):
        if not (0 <= rid < len(self._relations)):
            raise UnknownId(f"relation id {rid} not interned")

    def dictionary_hash(self) -> str:
        """Stable digest of both dictionaries (labels, types and id order)."""
        import hashlib

        h = hashlib.sha256()
        for label, etype in zip(self._entities.labels, self._etypes):
            h.update(f"E\t{label}\t{etype}\n".encode())
        for label in self._relations.labels:
            h.update(f"R\t{label}\n".encode())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, TripleStore):
            return NotImplemented
        return (
            self._entities.labels == other._entities.labels
            and self._etypes == other._etypes
            and self._relations.labels == other._relations.labels
            and self._counts == other._counts
        )

    def labeled_multiset(self) -> dict[tuple[str, str, str], int]:
        ents, rels = self._entities.labels, self._relations.labels
        return {(ents[t.s], rels[t.p], ents[t.o]): c for t, c in self._counts.items()}


def negative_sample(store: TripleStore, t: Triple, slot: str, rng: np.random.Generator,
                    max_retries: int = NEGATIVE_SAMPLE_RETRIES) -> Triple:
    """Corrupt one slot of ``t`` uniformly until the result is absent from ``store``.

    Raises Saturated after ``max_retries`` failed draws.
    """
    t = Triple(*t)
    if slot == "relation":
        pool = store.n_relations
    elif slot in ("subject", "object"):
        pool = store.n_entities
    else:
        raise ValueError(f"unknown slot {slot!r}")
    if pool < 2:
        raise Saturated(f"need at least 2 candidates to corrupt the {slot}")
    for _ in range(max_retries):
        x = int(rng.integers(pool))
        if slot == "subject":
            cand = Triple(x, t.p, t.o)
        elif slot == "object":
            cand = Triple(t.s, t.p, x)
        else:
            cand = Triple(t.s, x, t.o)
        if cand not in store._counts:
            return cand
    raise Saturated(f"no negative found for {t} ({slot}) after {max_retries} draws")


def negative_sample_batch(store: TripleStore, triples: np.ndarray, slots: np.ndarray,
                          rng: np.random.Generator,
                          max_retries: int = NEGATIVE_SAMPLE_RETRIES) -> np.ndarray:
    """Vectorized :func:`negative_sample`.

    ``slots`` holds 0 (subject), 1 (object) or 2 (relation) per row. Rows whose
    draw collides with a stored triple are redrawn, up to ``max_retries`` rounds.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    slots = np.asarray(slots, dtype=np.int64)
    out = triples.copy()
    cols = np.array([0, 2, 1])[slots]
    pools = np.where(slots == 2, store.n_relations, store.n_entities)
    if len(out) and pools.min() < 2:
        raise Saturated("need at least 2 candidates to corrupt a slot")
    pending = np.arange(len(out))
    for _ in range(max_retries):
        if len(pending) == 0:
            return out
        draws = np.floor(rng.random(len(pending)) * pools[pending]).astype(np.int64)
        out[pending, cols[pending]] = draws
        hit = store.contains_many(out[pending])
        pending = pending[hit]
    if len(pending):
        raise Saturated(f"no negative found for {len(pending)} triple(s) after {max_retries} rounds")
    return out


# -- TSV serialization ------------------------------------------------------

_HEADER = "# kgsec graph v1"


def serialize(store: TripleStore) -> str:
    """Entity-type header block followed by one tab-separated line per triple.

    Header lines look like ``@entity\\t<label>\\t<type>``; relations that occur in
    no triple are kept as ``@relation\\t<label>`` so dictionaries round-trip.
    """
    lines = [_HEADER]
    for label, etype in zip(store._entities.labels, store._etypes):
        lines.append(f"@entity\t{label}\t{etype}")
    for label in store._relations.labels:
        lines.append(f"@relation\t{label}")
    ents, rels = store._entities.labels, store._relations.labels
    for t, c in store._counts.items():
        lines.append(f"{ents[t.s]}\t{rels[t.p]}\t{ents[t.o]}\t{c}")
    return "\n".join(lines) + "\n"


def deserialize(text: str) -> TripleStore:
    store = TripleStore()
    etypes: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if fields[0] == "@entity":
            if len(fields) != 3 or not fields[1] or not fields[2]:
                raise ParseError(lineno, "entity header needs label and type")
            try:
                store.intern_entity(fields[1], fields[2])
            except TypeConflict as exc:
                raise ParseError(lineno, str(exc)) from None
            etypes[fields[1]] = fields[2]
            continue
        if fields[0] == "@relation":
            if len(fields) != 2 or not fields[1]:
                raise ParseError(lineno, "relation header needs a label")
            store.intern_relation(fields[1])
            continue
        if len(fields) != 4:
            raise ParseError(lineno, f"expected 4 tab-separated fields, got {len(fields)}")
        s, p, o, c = fields
        try:
            count = int(c)
        except ValueError:
            raise ParseError(lineno, f"bad count {c!r}") from None
        if count < 1:
            raise ParseError(lineno, f"count must be positive, got {count}")
        for label in (s, o):
            if label not in etypes:
                raise ParseError(lineno, f"entity {label!r} has no type header")
        if not p:
            raise ParseError(lineno, "empty relation label")
        store.add(s, etypes[s], p, o, etypes[o], count)
    return store
