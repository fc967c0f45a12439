"""Bilinear (RESCAL-style) parameters, scoring, loss and gradients."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..graph_store import TripleStore
from . import kernels

CHECKPOINT_MAGIC = b"KGSEC-CKPT"
CHECKPOINT_VERSION = 1


class OutOfBounds(IndexError):
    pass


class DictMismatch(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    entity_embeddings: np.ndarray  # (n, R)
    relation_matrices: np.ndarray  # (m, R, R)

    def __post_init__(self):
        self.entity_embeddings = np.ascontiguousarray(self.entity_embeddings, dtype=np.float64)
        self.relation_matrices = np.ascontiguousarray(self.relation_matrices, dtype=np.float64)
        n, r = self.entity_embeddings.shape
        if self.relation_matrices.shape[1:] != (r, r):
            raise ValueError("relation matrices must be R x R with R matching the embeddings")
        if r < 1:
            raise ValueError("rank must be >= 1")

    @property
    def n(self) -> int:
        return self.entity_embeddings.shape[0]

    @property
    def m(self) -> int:
        return self.relation_matrices.shape[0]

    @property
    def rank(self) -> int:
        return self.entity_embeddings.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.entity_embeddings.copy(), self.relation_matrices.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.entity_embeddings).all() and np.isfinite(self.relation_matrices).all())

    def equals(self, other: "ModelParams") -> bool:
        return np.array_equal(self.entity_embeddings, other.entity_embeddings) and np.array_equal(
            self.relation_matrices, other.relation_matrices
        )


@dataclass
class TrainConfig:
    rank: int = 32
    lr: float = 0.05
    epochs: int = 200
    batch_size: int = 128
    negatives_per_positive: int = 4
    init_scale: float = 0.1
    seed: int = 0
    trainer: str = "energy"
    l2: float = 1e-4

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        for name in ("epochs", "batch_size", "negatives_per_positive"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.trainer not in ("mse", "energy"):
            raise ValueError(f"unknown trainer {self.trainer!r}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def init_params(n: int, m: int, rank: int, init_scale: float, seed: int) -> ModelParams:
    if min(n, m, rank) < 1:
        raise ValueError("n, m and rank must all be >= 1")
    rng = np.random.default_rng(seed)
    ent = rng.normal(0.0, 1.0, size=(n, rank)) * init_scale
    rel = rng.normal(0.0, 1.0, size=(m, rank, rank)) * init_scale
    return ModelParams(ent, rel)


def _as_triples(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 3)
    return np.ascontiguousarray(arr)


def _check_bounds(params: ModelParams, trip: np.ndarray):
    if trip.size == 0:
        return
    if (trip[:, [0, 2]].min() < 0 or trip[:, [0, 2]].max() >= params.n
            or trip[:, 1].min() < 0 or trip[:, 1].max() >= params.m):
        raise OutOfBounds("triple id outside parameter bounds")


def score(params: ModelParams, t) -> float:
    """theta = e_s^T R_p e_o for one triple."""
    s, p, o = (int(x) for x in t)
    if not (0 <= s < params.n and 0 <= o < params.n and 0 <= p < params.m):
        raise OutOfBounds(f"triple {(s, p, o)} outside parameter bounds")
    E, R = params.entity_embeddings, params.relation_matrices
    return float(E[s] @ R[p] @ E[o])


def scores(params: ModelParams, triples) -> np.ndarray:
    trip = _as_triples(triples)
    _check_bounds(params, trip)
    return kernels.theta_batch(params.entity_embeddings, params.relation_matrices, trip)


def probability(theta):
    """Logistic function, computed without overflow for large |theta|."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    pos = theta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-theta[pos]))
    ez = np.exp(theta[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def _touched(trip: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.unique(trip[:, [0, 2]]), np.unique(trip[:, 1])


def mse_loss(params: ModelParams, triples, targets, l2: float = 0.0) -> float:
    trip = _as_triples(triples)
    if len(trip) == 0:
        raise ValueError("empty batch")
    _check_bounds(params, trip)
    targets = np.asarray(targets, dtype=np.float64)
    theta = kernels.theta_batch(params.entity_embeddings, params.relation_matrices, trip)
    loss = float(np.sum((targets - theta) ** 2))
    if l2:
        ents, rels = _touched(trip)
        loss += l2 * (float(np.sum(params.entity_embeddings[ents] ** 2))
                      + float(np.sum(params.relation_matrices[rels] ** 2)))
    return loss


def grad_mse(params: ModelParams, triples, targets, l2: float = 0.0) -> ModelParams:
    """Gradient of :func:`mse_loss`, returned with the same layout as the params."""
    trip = _as_triples(triples)
    if len(trip) == 0:
        raise ValueError("empty batch")
    _check_bounds(params, trip)
    targets = np.asarray(targets, dtype=np.float64)
    E, R = params.entity_embeddings, params.relation_matrices
    theta = kernels.theta_batch(E, R, trip)
    gE = np.zeros_like(E)
    gR = np.zeros_like(R)
    kernels.accumulate_theta_grad(E, R, trip, -2.0 * (targets - theta), gE, gR)
    if l2:
        ents, rels = _touched(trip)
        gE[ents] += 2.0 * l2 * E[ents]
        gR[rels] += 2.0 * l2 * R[rels]
    return ModelParams(gE, gR)


def energy(params: ModelParams, store: TripleStore) -> float:
    """E(X) = -sum over stored triples of count * theta."""
    if len(store) == 0:
        return 0.0
    trip, counts = store.as_arrays()
    return -float(np.dot(counts.astype(np.float64), scores(params, trip)))


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(path, params: ModelParams, store: TripleStore, meta: dict | None = None):
    header = {
        "version": CHECKPOINT_VERSION,
        "n": params.n,
        "m": params.m,
        "rank": params.rank,
        "dict_hash": store.dictionary_hash(),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(blob + b"\n")
        fh.write(params.entity_embeddings.astype("<f8").tobytes())
        fh.write(params.relation_matrices.astype("<f8").tobytes())


def load_checkpoint(path, store: TripleStore | None = None) -> tuple[ModelParams, dict]:
    data = Path(path).read_bytes()
    magic, _, rest = data.partition(b"\n")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    blob, _, payload = rest.partition(b"\n")
    header = json.loads(blob)
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    n, m, r = header["n"], header["m"], header["rank"]
    if len(payload) != 8 * (n * r + m * r * r):
        raise CheckpointError(f"{path}: truncated parameter block")
    if store is not None:
        if store.dictionary_hash() != header["dict_hash"] or store.n_entities != n or store.n_relations != m:
            raise DictMismatch(f"{path}: checkpoint dictionaries do not match the graph store")
    flat = np.frombuffer(payload, dtype="<f8")
    ent = flat[: n * r].reshape(n, r)
    rel = flat[n * r:].reshape(m, r, r)
    return ModelParams(ent.copy(), rel.copy()), header


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)


__all__ = [
    "ModelParams", "TrainConfig", "OutOfBounds", "DictMismatch", "CheckpointError",
    "init_params", "score", "scores", "probability", "mse_loss", "grad_mse", "energy",
    "save_checkpoint", "load_checkpoint", "config_dict",
]
