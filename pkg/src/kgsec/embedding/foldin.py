"""Embedding inference for entities that did not exist at training time.

A fresh subject entity with statements (x, p_j, o_j) gets an embedding fitted
against the frozen model, pulled towards a prior embedding (typically a
surrogate entity trained to look like an average member of its type):

* energy models maximize the conditional log-likelihood of each object under
  the softmax over all entities, solved with Newton's method (concave);
* MSE models solve the ridge problem sum_j (1 - x . R_pj e_oj)^2 + reg |x - prior|^2.
"""

from __future__ import annotations

import numpy as np

from .model import ModelParams


class FoldIn:
    def __init__(self, params: ModelParams, kind: str, prior: np.ndarray | None = None,
                 reg: float = 1.0, max_iter: int = 25, tol: float = 1e-10):
        if kind not in ("mse", "energy"):
            raise ValueError(f"unknown model kind {kind!r}")
        self.params = params
        self.kind = kind
        self.prior = np.zeros(params.rank) if prior is None else np.asarray(prior, dtype=np.float64)
        self.reg = float(reg)
        self.max_iter = max_iter
        self.tol = tol
        self._tables: dict[int, np.ndarray] = {}

    def table(self, p: int) -> np.ndarray:
        """Rows R_p e_x for every entity x, so theta(new, p, x) = new . table[x]."""
        t = self._tables.get(p)
        if t is None:
            E = self.params.entity_embeddings
            t = np.ascontiguousarray(E @ self.params.relation_matrices[p].T)
            self._tables[p] = t
        return t

    def infer(self, relations, objects) -> np.ndarray:
        relations = [int(p) for p in relations]
        objects = [int(o) for o in objects]
        if not relations:
            return self.prior.copy()
        if self.kind == "mse":
            V = np.stack([self.table(p)[o] for p, o in zip(relations, objects)])
            A = V.T @ V + self.reg * np.eye(V.shape[1])
            return np.linalg.solve(A, V.sum(axis=0) + self.reg * self.prior)
        return self._newton(relations, objects)

    def _newton(self, relations, objects) -> np.ndarray:
        r = self.params.rank
        x = self.prior.copy()
        eye = np.eye(r)
        tables = [self.table(p) for p in relations]
        for _ in range(self.max_iter):
            grad = -self.reg * (x - self.prior)
            hess = -self.reg * eye
            for V, o in zip(tables, objects):
                logits = V @ x
                logits -= logits.max()
                pi = np.exp(logits)
                pi /= pi.sum()
                mean = pi @ V
                grad += V[o] - mean
                centered = V - mean
                hess -= (centered * pi[:, None]).T @ centered
            step = np.linalg.solve(hess, grad)
            x = x - step
            if float(step @ step) < self.tol:
                break
        return x

    def score(self, x: np.ndarray, p: int, o: int) -> float:
        return float(x @ self.table(int(p))[int(o)])

    def leave_one_out(self, relations, objects) -> np.ndarray:
        """theta of each statement predicted from an embedding fitted on the others."""
        out = np.empty(len(relations))
        for i in range(len(relations)):
            rest_p = [p for j, p in enumerate(relations) if j != i]
            rest_o = [o for j, o in enumerate(objects) if j != i]
            x = self.infer(rest_p, rest_o)
            out[i] = self.score(x, relations[i], objects[i])
        return out
