# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: Gini best-split search and the SMO dual solver.

Semantics match ``unbloc._pykernels`` exactly; see that module for the
reference description of each routine.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, qsort
from libc.math cimport INFINITY

cnp.import_array()


cdef struct Pair:
    double v
    Py_ssize_t y


cdef int _cmp_pair(const void *a, const void *b) noexcept nogil:
    cdef double va = (<Pair *>a).v
    cdef double vb = (<Pair *>b).v
    if va < vb:
        return -1
    if va > vb:
        return 1
    return 0


def best_split(const double[:, ::1] X, const Py_ssize_t[::1] idx, const Py_ssize_t[::1] y,
               const Py_ssize_t[::1] order, Py_ssize_t max_features, Py_ssize_t n_classes):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t nf = order.shape[0]
    cdef Py_ssize_t best_f = -1
    cdef double best_t = 0.0
    cdef double best_score = -INFINITY
    cdef Py_ssize_t visited = 0
    cdef Py_ssize_t fi, f, i, c
    cdef double lo, hi, v, score, t
    cdef long sl, sr
    cdef Pair *pairs
    cdef long *cl
    cdef long *cr
    if n < 2:
        return -1, 0.0, -INFINITY
    pairs = <Pair *>malloc(n * sizeof(Pair))
    cl = <long *>malloc(n_classes * sizeof(long))
    cr = <long *>malloc(n_classes * sizeof(long))
    try:
        with nogil:
            for fi in range(nf):
                if visited >= max_features:
                    break
                f = order[fi]
                lo = X[idx[0], f]
                hi = lo
                for i in range(n):
                    v = X[idx[i], f]
                    pairs[i].v = v
                    pairs[i].y = y[idx[i]]
                    if v < lo:
                        lo = v
                    if v > hi:
                        hi = v
                if not (hi > lo):
                    continue
                visited += 1
                qsort(pairs, n, sizeof(Pair), _cmp_pair)
                for c in range(n_classes):
                    cl[c] = 0
                    cr[c] = 0
                for i in range(n):
                    cr[pairs[i].y] += 1
                sl = 0
                sr = 0
                for c in range(n_classes):
                    sr += cr[c] * cr[c]
                for i in range(n - 1):
                    c = pairs[i].y
                    sl += 2 * cl[c] + 1
                    cl[c] += 1
                    sr -= 2 * cr[c] - 1
                    cr[c] -= 1
                    if pairs[i].v < pairs[i + 1].v:
                        score = (<double>sl) / (<double>(i + 1)) + (<double>sr) / (<double>(n - i - 1))
                        if score > best_score:
                            best_score = score
                            best_f = f
                            t = (pairs[i].v + pairs[i + 1].v) / 2.0
                            if t == pairs[i + 1].v:
                                t = pairs[i].v
                            best_t = t
    finally:
        free(pairs)
        free(cl)
        free(cr)
    return best_f, best_t, best_score


def smo_solve(const double[:, ::1] Q, const double[::1] y, double C, double tol, Py_ssize_t max_iter):
    cdef Py_ssize_t n = y.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] alpha_arr = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] G_arr = -np.ones(n)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] G = G_arr
    cdef Py_ssize_t it = 0
    cdef Py_ssize_t t, i, j
    cdef double gmax, gmin, v, quad, delta, diff, s, old_i, old_j, dai, daj
    cdef double ub, lb, ssum, yG, rho
    cdef Py_ssize_t nfree
    cdef double TAU = 1e-12
    with nogil:
        while it < max_iter:
            gmax = -INFINITY
            gmin = INFINITY
            i = -1
            j = -1
            for t in range(n):
                v = -y[t] * G[t]
                if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                    if v > gmax:
                        gmax = v
                        i = t
                if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                    if v < gmin:
                        gmin = v
                        j = t
            if i < 0 or j < 0 or gmax - gmin < tol:
                break
            it += 1
            old_i = alpha[i]
            old_j = alpha[j]
            if y[i] != y[j]:
                quad = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
                if quad <= 0:
                    quad = TAU
                delta = (-G[i] - G[j]) / quad
                diff = alpha[i] - alpha[j]
                alpha[i] += delta
                alpha[j] += delta
                if diff > 0:
                    if alpha[j] < 0:
                        alpha[j] = 0
                        alpha[i] = diff
                else:
                    if alpha[i] < 0:
                        alpha[i] = 0
                        alpha[j] = -diff
                if diff > 0:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = C - diff
                else:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = C + diff
            else:
                quad = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
                if quad <= 0:
                    quad = TAU
                delta = (G[i] - G[j]) / quad
                s = alpha[i] + alpha[j]
                alpha[i] -= delta
                alpha[j] += delta
                if s > C:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = s - C
                else:
                    if alpha[j] < 0:
                        alpha[j] = 0
                        alpha[i] = s
                if s > C:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = s - C
                else:
                    if alpha[i] < 0:
                        alpha[i] = 0
                        alpha[j] = s
            dai = alpha[i] - old_i
            daj = alpha[j] - old_j
            for t in range(n):
                G[t] += Q[i, t] * dai + Q[j, t] * daj

        ub = INFINITY
        lb = -INFINITY
        ssum = 0.0
        nfree = 0
        for t in range(n):
            yG = y[t] * G[t]
            if alpha[t] >= C:
                if y[t] < 0:
                    if yG < ub:
                        ub = yG
                else:
                    if yG > lb:
                        lb = yG
            elif alpha[t] <= 0:
                if y[t] > 0:
                    if yG < ub:
                        ub = yG
                else:
                    if yG > lb:
                        lb = yG
            else:
                nfree += 1
                ssum += yG
        if nfree > 0:
            rho = ssum / nfree
        else:
            rho = (ub + lb) / 2.0
    return alpha_arr, rho, it
