# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled orbit kernels.  Same contracts as the numpy versions in _pykernels."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

PREFERRED_BLOCK = 1 << 16


def advance_mod(table, int64_t q, Py_ssize_t L):
    cdef int64_t[:, ::1] tab = np.ascontiguousarray(table, dtype=np.int64)
    cdef Py_ssize_t P = tab.shape[0], D = tab.shape[1], p, i, step
    out = np.empty((P, L), dtype=np.int64)
    cdef int64_t[:, ::1] o = out
    cdef int64_t *t = <int64_t *> malloc(D * sizeof(int64_t))
    if t == NULL:
        raise MemoryError()
    try:
        with nogil:
            for p in range(P):
                for i in range(D):
                    t[i] = tab[p, i]
                for step in range(L):
                    o[p, step] = t[0]
                    for i in range(D - 1):
                        t[i] = t[i] + t[i + 1]
                        if t[i] >= q:
                            t[i] -= q
    finally:
        free(t)
    return out


cdef inline void _step_fx(uint64_t *h, uint64_t *l, Py_ssize_t D) noexcept nogil:
    cdef Py_ssize_t i
    cdef uint64_t nlo
    for i in range(D - 1):
        nlo = l[i] + l[i + 1]
        h[i] = h[i] + h[i + 1] + (nlo < l[i])
        l[i] = nlo


def advance_fx(hi, lo, Py_ssize_t L):
    cdef uint64_t[:, ::1] H = np.ascontiguousarray(hi, dtype=np.uint64)
    cdef uint64_t[:, ::1] Lo = np.ascontiguousarray(lo, dtype=np.uint64)
    cdef Py_ssize_t P = H.shape[0], D = H.shape[1], p, i, step
    out = np.empty((P, L), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    cdef uint64_t *h = <uint64_t *> malloc(2 * D * sizeof(uint64_t))
    if h == NULL:
        raise MemoryError()
    cdef uint64_t *l = h + D
    try:
        with nogil:
            for p in range(P):
                for i in range(D):
                    h[i] = H[p, i]
                    l[i] = Lo[p, i]
                for step in range(L):
                    o[p, step] = h[0]
                    _step_fx(h, l, D)
    finally:
        free(h)
    return out


def product_average_fx(hi, lo, arc_lo, arc_len, full, c0, c1, Py_ssize_t N):
    cdef uint64_t[:, :, ::1] H = np.ascontiguousarray(hi, dtype=np.uint64)
    cdef uint64_t[:, :, ::1] Lo = np.ascontiguousarray(lo, dtype=np.uint64)
    cdef uint64_t[::1] alo = np.ascontiguousarray(arc_lo, dtype=np.uint64)
    cdef uint64_t[::1] alen = np.ascontiguousarray(arc_len, dtype=np.uint64)
    cdef cnp.uint8_t[::1] fl = np.ascontiguousarray(full, dtype=np.uint8)
    cdef double[::1] a0 = np.ascontiguousarray(c0, dtype=np.float64)
    cdef double[::1] a1 = np.ascontiguousarray(c1, dtype=np.float64)
    cdef Py_ssize_t G = H.shape[0], J = H.shape[1], D = H.shape[2]
    cdef Py_ssize_t g, j, i, step
    out = np.zeros(G, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc, prod
    cdef uint64_t x
    cdef uint64_t *h = <uint64_t *> malloc(2 * J * D * sizeof(uint64_t))
    if h == NULL:
        raise MemoryError()
    cdef uint64_t *l = h + J * D
    try:
        with nogil:
            for g in range(G):
                for j in range(J):
                    for i in range(D):
                        h[j * D + i] = H[g, j, i]
                        l[j * D + i] = Lo[g, j, i]
                acc = 0.0
                for step in range(N):
                    prod = 1.0
                    for j in range(J):
                        x = h[j * D]
                        if fl[j] or (x - alo[j]) < alen[j]:
                            prod = prod * (a0[j] + a1[j])
                        else:
                            prod = prod * a0[j]
                    acc += prod
                    for j in range(J):
                        _step_fx(h + j * D, l + j * D, D)
                o[g] = acc / N
    finally:
        free(h)
    return out
