"""Pure numpy implementations of the training kernels.

Used when the compiled extension is unavailable, or when forced with
``KGSEC_PURE_PYTHON=1``. Signatures mirror ``_kernels_c``.
"""

import numpy as np


def theta_batch(E, R, trip):
    es = E[trip[:, 0]]
    eo = E[trip[:, 2]]
    return np.einsum("bi,bij,bj->b", es, R[trip[:, 1]], eo)


def accumulate_theta_grad(E, R, trip, w, gE, gR):
    """Add sum_b w[b] * d(theta_b)/d(params) into gE, gR in place."""
    s, p, o = trip[:, 0], trip[:, 1], trip[:, 2]
    es, eo, Rp = E[s], E[o], R[p]
    w = np.asarray(w, dtype=np.float64)
    np.add.at(gE, s, w[:, None] * np.einsum("bij,bj->bi", Rp, eo))
    np.add.at(gE, o, w[:, None] * np.einsum("bij,bi->bj", Rp, es))
    np.add.at(gR, p, w[:, None, None] * es[:, :, None] * eo[:, None, :])


def sample_rows(logits, u):
    """Inverse-CDF draw from softmax(logits[b]) using uniform u[b] in [0, 1)."""
    z = logits - logits.max(axis=1, keepdims=True)
    cdf = np.cumsum(np.exp(z), axis=1)
    target = u * cdf[:, -1]
    idx = (cdf <= target[:, None]).sum(axis=1)
    return np.minimum(idx, logits.shape[1] - 1).astype(np.int64)
