# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def cosine_similarity(emb, bint clamp=True):
    cdef double[:, ::1] e = np.ascontiguousarray(emb, dtype=np.float64)
    cdef Py_ssize_t n = e.shape[0], d = e.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    norms_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] norms = norms_arr
    out_arr = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        acc = 0.0
        for k in range(d):
            acc += e[i, k] * e[i, k]
        norms[i] = sqrt(acc)
    for i in range(n):
        out[i, i] = 1.0
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                acc += e[i, k] * e[j, k]
            acc = acc / (norms[i] * norms[j])
            if acc > 1.0:
                acc = 1.0
            if clamp and acc < 0.0:
                acc = 0.0
            elif acc < -1.0:
                acc = -1.0
            out[i, j] = acc
            out[j, i] = acc
    return out_arr


def row_normalize(mat):
    cdef double[:, ::1] m = np.ascontiguousarray(mat, dtype=np.float64)
    cdef Py_ssize_t n = m.shape[0], c = m.shape[1]
    cdef Py_ssize_t i, j
    cdef double s
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        s = 0.0
        for j in range(c):
            s += m[i, j]
        for j in range(c):
            out[i, j] = m[i, j] / s
    return out_arr


def weighted_baseline(weights, rewards):
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0], c = w.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        acc = 0.0
        for j in range(c):
            acc += w[i, j] * r[j]
        out[i] = acc
    return out_arr


def spo_baseline(emb, rewards, bint clamp=True):
    """Fused cosine -> row-normalise -> weighted reward average.

    Never materialises the weight matrix; one pass over the pairs.
    """
    cdef double[:, ::1] e = np.ascontiguousarray(emb, dtype=np.float64)
    cdef double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef Py_ssize_t n = e.shape[0], d = e.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    norms_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] norms = norms_arr
    num_arr = np.array(r, dtype=np.float64)
    den_arr = np.ones(n, dtype=np.float64)
    cdef double[::1] num = num_arr
    cdef double[::1] den = den_arr
    for i in range(n):
        acc = 0.0
        for k in range(d):
            acc += e[i, k] * e[i, k]
        norms[i] = sqrt(acc)
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                acc += e[i, k] * e[j, k]
            acc = acc / (norms[i] * norms[j])
            if acc > 1.0:
                acc = 1.0
            if clamp and acc < 0.0:
                acc = 0.0
            num[i] += acc * r[j]
            den[i] += acc
            num[j] += acc * r[i]
            den[j] += acc
    for i in range(n):
        num[i] = num[i] / den[i]
    return num_arr


def bm25_accumulate(double[::1] scores, page_idx, tf, double[::1] doc_len,
                    double idf, double k1, double b, double avgdl):
    """Add one query term's BM25 contribution to ``scores`` in place."""
    cdef long long[::1] idx = np.ascontiguousarray(page_idx, dtype=np.int64)
    cdef double[::1] f = np.ascontiguousarray(tf, dtype=np.float64)
    cdef Py_ssize_t n = idx.shape[0], i
    cdef long long p
    if idf == 0.0:
        return np.asarray(scores)
    for i in range(n):
        p = idx[i]
        scores[p] += idf * f[i] * (k1 + 1.0) / (f[i] + k1 * (1.0 - b + b * doc_len[p] / avgdl))
    return np.asarray(scores)
