# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``_pykernels``. Same signatures, same results."""

from libc.math cimport sqrt
from libc.stdlib cimport malloc, free

import numpy as np


def levenshtein(str a, str b):
    cdef Py_ssize_t n = len(a), m = len(b), i, j
    cdef Py_ssize_t *prev
    cdef Py_ssize_t *cur
    cdef Py_ssize_t *tmp
    cdef Py_ssize_t best, cost, ins, dele
    cdef Py_UCS4 ca
    if n < m:
        a, b = b, a
        n, m = m, n
    if m == 0:
        return n
    prev = <Py_ssize_t *> malloc((m + 1) * sizeof(Py_ssize_t))
    cur = <Py_ssize_t *> malloc((m + 1) * sizeof(Py_ssize_t))
    if prev == NULL or cur == NULL:
        free(prev)
        free(cur)
        raise MemoryError()
    try:
        for j in range(m + 1):
            prev[j] = j
        for i in range(1, n + 1):
            ca = a[i - 1]
            cur[0] = i
            for j in range(1, m + 1):
                cost = 0 if ca == b[j - 1] else 1
                best = prev[j - 1] + cost
                ins = cur[j - 1] + 1
                dele = prev[j] + 1
                if ins < best:
                    best = ins
                if dele < best:
                    best = dele
                cur[j] = best
            tmp = prev
            prev = cur
            cur = tmp
        return prev[m]
    finally:
        free(prev)
        free(cur)


def frame_rms(samples, Py_ssize_t frame_len, Py_ssize_t hop):
    cdef const short[::1] x = np.ascontiguousarray(samples, dtype=np.int16)
    cdef Py_ssize_t n = x.shape[0], k, t, start
    cdef Py_ssize_t count
    cdef double acc, v
    if frame_len <= 0 or hop <= 0:
        raise ValueError("frame_len and hop must be positive")
    count = 0 if n < frame_len else (n - frame_len) // hop + 1
    out = np.empty(count, dtype=np.float64)
    cdef double[::1] o = out
    for k in range(count):
        start = k * hop
        acc = 0.0
        for t in range(start, start + frame_len):
            v = x[t]
            acc += v * v
        o[k] = sqrt(acc / frame_len)
    return out
