# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled training kernels; see ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def theta_batch(double[:, ::1] E, double[:, :, ::1] R, cnp.int64_t[:, ::1] trip):
    cdef Py_ssize_t B = trip.shape[0], r = E.shape[1]
    cdef Py_ssize_t b, i, j, s, p, o
    cdef double acc, row
    out = np.empty(B, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for b in range(B):
            s = trip[b, 0]
            p = trip[b, 1]
            o = trip[b, 2]
            acc = 0.0
            for i in range(r):
                row = 0.0
                for j in range(r):
                    row = row + R[p, i, j] * E[o, j]
                acc = acc + E[s, i] * row
            res[b] = acc
    return out


def accumulate_theta_grad(double[:, ::1] E, double[:, :, ::1] R, cnp.int64_t[:, ::1] trip,
                          w, double[:, ::1] gE, double[:, :, ::1] gR):
    cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t B = trip.shape[0], r = E.shape[1]
    cdef Py_ssize_t b, i, j, s, p, o
    cdef double wb, acc, esi
    with nogil:
        for b in range(B):
            s = trip[b, 0]
            p = trip[b, 1]
            o = trip[b, 2]
            wb = wv[b]
            for i in range(r):
                acc = 0.0
                for j in range(r):
                    acc = acc + R[p, i, j] * E[o, j]
                gE[s, i] += wb * acc
            for j in range(r):
                acc = 0.0
                for i in range(r):
                    acc = acc + R[p, i, j] * E[s, i]
                gE[o, j] += wb * acc
            for i in range(r):
                esi = wb * E[s, i]
                for j in range(r):
                    gR[p, i, j] += esi * E[o, j]


def sample_rows(double[:, ::1] logits, double[::1] u):
    cdef Py_ssize_t B = logits.shape[0], n = logits.shape[1]
    cdef Py_ssize_t b, k
    cdef double mx, total, target, run
    out = np.empty(B, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = out
    cdef double[::1] buf = np.empty(n, dtype=np.float64)
    with nogil:
        for b in range(B):
            mx = logits[b, 0]
            for k in range(1, n):
                if logits[b, k] > mx:
                    mx = logits[b, k]
            total = 0.0
            for k in range(n):
                total = total + exp(logits[b, k] - mx)
                buf[k] = total
            target = u[b] * total
            k = 0
            while k < n - 1 and buf[k] <= target:
                k = k + 1
            idx[b] = k
    return out
