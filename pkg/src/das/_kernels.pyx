# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled matching kernels: rectangular assignment and pairwise costs.

Hand-written hot path for per-image matching; the numpy/scipy fallback in
``das._fallback`` implements identical contracts.
"""

from libc.math cimport INFINITY, log
from libc.stdlib cimport free, malloc

import numpy as np


def lsap(cost):
    """Minimum-cost one-to-one assignment of every row to a distinct column.

    Requires ``rows <= cols``; returns the assigned column per row.
    Shortest-augmenting-path algorithm with dual potentials, O(n^2 m).
    """
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t nr = c.shape[0]
    cdef Py_ssize_t nc = c.shape[1]
    if nr > nc:
        raise ValueError("lsap requires rows <= cols; transpose first")

    cdef double *u = <double *> malloc((nr + 1) * sizeof(double))
    cdef double *v = <double *> malloc((nc + 1) * sizeof(double))
    cdef double *minv = <double *> malloc((nc + 1) * sizeof(double))
    cdef Py_ssize_t *p = <Py_ssize_t *> malloc((nc + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t *way = <Py_ssize_t *> malloc((nc + 1) * sizeof(Py_ssize_t))
    cdef unsigned char *used = <unsigned char *> malloc((nc + 1) * sizeof(unsigned char))
    if u == NULL or v == NULL or minv == NULL or p == NULL or way == NULL or used == NULL:
        free(u); free(v); free(minv); free(p); free(way); free(used)
        raise MemoryError()

    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double cur, delta
    for i in range(nr + 1):
        u[i] = 0.0
    for j in range(nc + 1):
        v[j] = 0.0
        p[j] = 0
        way[j] = 0

    # Rows and columns are 1-based internally; column 0 is the virtual start.
    for i in range(1, nr + 1):
        p[0] = i
        j0 = 0
        for j in range(nc + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, nc + 1):
                if not used[j]:
                    cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(nc + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    out = np.empty(nr, dtype=np.intp)
    cdef Py_ssize_t[::1] col4row = out
    for j in range(1, nc + 1):
        if p[j] > 0:
            col4row[p[j] - 1] = j - 1

    free(u); free(v); free(minv); free(p); free(way); free(used)
    return out


cdef inline double _pair_iou(const double[:, ::1] a, Py_ssize_t i,
                             const double[:, ::1] b, Py_ssize_t j) nogil:
    cdef double ix = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
    cdef double iy = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    cdef double inter = ix * iy
    cdef double area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
    cdef double area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
    return inter / (area_a + area_b - inter)


def iou_matrix(boxes_a, boxes_b):
    """Pairwise intersection-over-union of two (n, 4) corner-format box arrays."""
    cdef double[:, ::1] a = np.ascontiguousarray(boxes_a, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(boxes_b, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _pair_iou(a, i, b, j)
    return out


def match_cost_matrix(probs_a, boxes_a, probs_b, boxes_b, double eps=1e-12):
    """Pairwise divergence-minus-overlap matching cost.

    Entry (i, j) is ``KL(probs_a[i] || probs_b[j]) - IoU(boxes_a[i], boxes_b[j])``
    with probabilities clamped to ``eps`` and renormalized before the logs.
    """
    cdef double[:, ::1] pa_in = np.ascontiguousarray(probs_a, dtype=np.float64)
    cdef double[:, ::1] qb_in = np.ascontiguousarray(probs_b, dtype=np.float64)
    cdef double[:, ::1] ba = np.ascontiguousarray(boxes_a, dtype=np.float64)
    cdef double[:, ::1] bb = np.ascontiguousarray(boxes_b, dtype=np.float64)
    cdef Py_ssize_t n = pa_in.shape[0], m = qb_in.shape[0], k = pa_in.shape[1]
    cdef Py_ssize_t i, j, t
    if qb_in.shape[1] != k:
        raise ValueError("probability vectors must have equal length")

    pa_arr = np.empty((n, k), dtype=np.float64)
    self_arr = np.empty(n, dtype=np.float64)
    lqb_arr = np.empty((m, k), dtype=np.float64)
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] pa = pa_arr
    cdef double[::1] self_a = self_arr
    cdef double[:, ::1] lqb = lqb_arr
    cdef double[:, ::1] o = out
    cdef double total, val, acc

    with nogil:
        for i in range(n):
            total = 0.0
            for t in range(k):
                val = pa_in[i, t]
                if val < eps:
                    val = eps
                pa[i, t] = val
                total += val
            acc = 0.0
            for t in range(k):
                pa[i, t] /= total
                acc += pa[i, t] * log(pa[i, t])
            self_a[i] = acc
        for j in range(m):
            total = 0.0
            for t in range(k):
                val = qb_in[j, t]
                if val < eps:
                    val = eps
                lqb[j, t] = val
                total += val
            for t in range(k):
                lqb[j, t] = log(lqb[j, t] / total)
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for t in range(k):
                    acc += pa[i, t] * lqb[j, t]
                o[i, j] = self_a[i] - acc - _pair_iou(ba, i, bb, j)
    return out
