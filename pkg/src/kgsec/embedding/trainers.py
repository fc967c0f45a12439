"""SGD trainers: reconstruction (MSE) and contrastive wake-sleep (energy)."""

from __future__ import annotations

import logging

import numpy as np

from ..graph_store import TripleStore, negative_sample_batch
from . import kernels
from .model import ModelParams, TrainConfig, init_params

log = logging.getLogger(__name__)

SUBJECT, OBJECT = 0, 1


class _Stepper:
    """Applies sparse SGD updates; only rows touched by a batch are modified."""

    def __init__(self, params: ModelParams, lr: float, l2: float):
        self.params = params
        self.lr = lr
        self.l2 = l2
        self.gE = np.zeros_like(params.entity_embeddings)
        self.gR = np.zeros_like(params.relation_matrices)

    def step(self, trip: np.ndarray, weights: np.ndarray):
        E, R = self.params.entity_embeddings, self.params.relation_matrices
        kernels.accumulate_theta_grad(E, R, trip, weights, self.gE, self.gR)
        ents = np.unique(trip[:, [0, 2]])
        rels = np.unique(trip[:, 1])
        gE = self.gE[ents]
        gR = self.gR[rels]
        if self.l2:
            gE += 2.0 * self.l2 * E[ents]
            gR += 2.0 * self.l2 * R[rels]
        E[ents] -= self.lr * gE
        R[rels] -= self.lr * gR
        self.gE[ents] = 0.0
        self.gR[rels] = 0.0


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def wake_weights(counts: np.ndarray, scheme: str = "log") -> np.ndarray:
    """Per-positive step scale in (0, 1].

    ``linear`` is count / max count. ``log`` (the default) is
    log1p(count) / log1p(max count): a triple seen once still gets a usable
    step when the busiest triple was seen hundreds of times.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if scheme == "linear":
        return counts / counts.max()
    return np.log1p(counts) / np.log1p(counts.max())


def _check_store(store: TripleStore):
    if len(store) == 0:
        raise ValueError("cannot train on an empty store")


def train_mse(store: TripleStore, config: TrainConfig, params: ModelParams | None = None) -> ModelParams:
    """Minimize squared reconstruction error over positives and sampled negatives.

    Each positive is paired with ``negatives_per_positive`` corruptions of its
    subject or object (chosen uniformly). Counts are ignored: targets are 1/0.
    """
    _check_store(store)
    trip, _ = store.as_arrays()
    if params is None:
        params = init_params(store.n_entities, store.n_relations, config.rank,
                             config.init_scale, config.seed)
    rng = _rng(config.seed, 1)
    stepper = _Stepper(params, config.lr, config.l2)
    k, neg = len(trip), config.negatives_per_positive
    E, R = params.entity_embeddings, params.relation_matrices
    for epoch in range(config.epochs):
        order = rng.permutation(k)
        for start in range(0, k, config.batch_size):
            pos = trip[order[start:start + config.batch_size]]
            rep = np.repeat(pos, neg, axis=0)
            slots = (rng.random(len(rep)) < 0.5).astype(np.int64)  # 0 subject, 1 object
            negs = negative_sample_batch(store, rep, slots, rng)
            batch = np.concatenate([pos, negs])
            target = np.zeros(len(batch))
            target[: len(pos)] = 1.0
            theta = kernels.theta_batch(E, R, batch)
            stepper.step(batch, -2.0 * (target - theta))
    return params


# Share of dreams that swap the relation instead of an entity. Without them a
# statement whose (subject, object) pair is known under another relation, say
# "writes" where only "reads" was seen, is never contrasted and drifts to p=0.5.
RELATION_DREAMS = 0.2


def _dream(params: ModelParams, seeds: np.ndarray, rng: np.random.Generator,
           relation_share: float = 0.0) -> np.ndarray:
    """Resample one slot of each seed from softmax(theta) over its candidates.

    The subject or object (equal odds) is redrawn over all entities; then a
    ``relation_share`` fraction of seeds instead get a relation redrawn over
    all relations, keeping their original subject and object.
    """
    E, R = params.entity_embeddings, params.relation_matrices
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 3)
    b = len(seeds)
    slot = (rng.random(b) < 0.5).astype(np.int64)
    u = rng.random(b)
    Rp = R[seeds[:, 1]]
    # object slot: theta(s,p,x) = (R_p^T e_s) . e_x ; subject slot: theta(x,p,o) = (R_p e_o) . e_x
    q_obj = np.einsum("bij,bi->bj", Rp, E[seeds[:, 0]])
    q_sub = np.einsum("bij,bj->bi", Rp, E[seeds[:, 2]])
    q = np.where(slot[:, None] == OBJECT, q_obj, q_sub)
    logits = np.ascontiguousarray(q @ E.T)
    picks = kernels.sample_rows(logits, u)
    out = seeds.copy()
    out[slot == SUBJECT, 0] = picks[slot == SUBJECT]
    out[slot == OBJECT, 2] = picks[slot == OBJECT]
    if relation_share > 0:
        rows = np.nonzero(rng.random(b) < relation_share)[0]
        if len(rows):
            rel_logits = np.einsum("bi,mij,bj->bm", E[seeds[rows, 0]], R, E[seeds[rows, 2]])
            out[rows] = seeds[rows]
            out[rows, 1] = kernels.sample_rows(np.ascontiguousarray(rel_logits), rng.random(len(rows)))
    return out


def sample_model_triples(params: ModelParams, store: TripleStore, k: int,
                         rng: np.random.Generator, relation_share: float = 0.0) -> np.ndarray:
    """Draw ``k`` dream triples: a uniform stored positive with one slot resampled.

    Returns a (k, 3) id array; rows may or may not be contained in ``store``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 <= relation_share <= 1.0:
        raise ValueError("relation_share must be in [0, 1]")
    trip, _ = store.as_arrays()
    seeds = trip[rng.integers(len(trip), size=k)]
    return _dream(params, seeds, rng, relation_share)


def train_energy(store: TripleStore, config: TrainConfig, params: ModelParams | None = None) -> ModelParams:
    """Contrastive wake-sleep training of the energy model.

    Each step raises theta on a batch of stored positives (wake) and lowers it
    on one dream per positive (sleep). Reading E = -sum X*theta as independent
    Bernoulli triples with p = sigmoid(theta), the log-likelihood gradient is
    (1 - p) on observed triples and -p on the rest; wake and sleep steps are
    scaled accordingly, so theta settles at calibrated log-odds instead of
    drifting by a per-slot constant. Both phases carry the positive's wake
    weight (see :func:`wake_weights`).
    """
    _check_store(store)
    trip, counts = store.as_arrays()
    weights = wake_weights(counts)
    if params is None:
        params = init_params(store.n_entities, store.n_relations, config.rank,
                             config.init_scale, config.seed)
    rng = _rng(config.seed, 2)
    stepper = _Stepper(params, config.lr, config.l2)
    E, R = params.entity_embeddings, params.relation_matrices
    k = len(trip)
    for epoch in range(config.epochs):
        order = rng.permutation(k)
        for start in range(0, k, config.batch_size):
            idx = order[start:start + config.batch_size]
            pos = trip[idx]
            w = weights[idx]
            dreams = _dream(params, pos, rng, RELATION_DREAMS)
            batch = np.concatenate([pos, dreams])
            p = 1.0 / (1.0 + np.exp(-kernels.theta_batch(E, R, batch)))
            stepper.step(batch, np.concatenate([-w * (1.0 - p[:len(pos)]), w * p[len(pos):]]))
    return params


def train(store: TripleStore, config: TrainConfig, params: ModelParams | None = None) -> ModelParams:
    if config.trainer == "mse":
        return train_mse(store, config, params)
    return train_energy(store, config, params)
