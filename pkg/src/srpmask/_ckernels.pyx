# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, isfinite, INFINITY

cnp.import_array()

NAME = "cython"

# dense DP over 2**r states; larger systems go to the dict-based python DP
DP_MAX_R = 20


def sample_parents(double[:, :, ::1] logf, int[::1] r, int m, double[:, :, ::1] u):
    cdef Py_ssize_t n = u.shape[0], L = u.shape[1], R = u.shape[2]
    labels_np = np.full((n, L, R), -1, dtype=np.int32)
    parents_np = np.full((n, L, R), -1, dtype=np.int32)
    logq_np = np.zeros((n, L), dtype=np.float64)
    cdef int[:, :, ::1] labels = labels_np
    cdef int[:, :, ::1] parents = parents_np
    cdef double[:, ::1] logq = logq_np
    last_np = np.zeros(m, dtype=np.int32)
    w_np = np.zeros(m, dtype=np.float64)
    cdef int[::1] last = last_np
    cdef double[::1] w = w_np
    cdef Py_ssize_t i, l, j
    cdef int k, ri, sel
    cdef double mx, v, tot, target, acc, lq
    cdef long n_deg = 0
    for i in range(n):
        ri = r[i]
        for l in range(L):
            for j in range(m):
                last[j] = 0
            lq = 0.0
            for k in range(1, ri + 1):
                mx = -INFINITY
                for j in range(m):
                    v = logf[i, last[j], k]
                    w[j] = v
                    if v > mx:
                        mx = v
                tot = 0.0
                if not isfinite(mx):
                    n_deg += 1
                    for j in range(m):
                        w[j] = 1.0
                        tot += 1.0
                else:
                    for j in range(m):
                        w[j] = exp(w[j] - mx)
                        tot += w[j]
                target = u[i, l, k - 1] * tot
                acc = 0.0
                sel = m - 1
                for j in range(m):
                    acc += w[j]
                    if target < acc:
                        sel = <int>j
                        break
                labels[i, l, k - 1] = sel
                parents[i, l, k - 1] = last[sel]
                last[sel] = k
                lq += log(w[sel] / tot)
            logq[i, l] = lq
    return labels_np, parents_np, logq_np, int(n_deg)


def tally(int[:, :, ::1] parents, int[::1] r, int m):
    cdef Py_ssize_t n = parents.shape[0], L = parents.shape[1], R = parents.shape[2]
    G_np = np.zeros((n, R + 1, R + 1), dtype=np.float64)
    C_np = np.zeros((n, R + 1), dtype=np.float64)
    cdef double[:, :, ::1] G = G_np
    cdef double[:, ::1] C = C_np
    cdef Py_ssize_t i, l, k
    cdef int p
    for i in range(n):
        C[i, 0] = m * L
        for k in range(1, r[i] + 1):
            C[i, k] = L
        for l in range(L):
            for k in range(r[i]):
                p = parents[i, l, k]
                G[i, p, k + 1] += 1.0
                C[i, p] -= 1.0
    return G_np, C_np


def tally_weighted(int[:, :, ::1] parents, int[::1] r, int m, double[:, ::1] w):
    cdef Py_ssize_t n = parents.shape[0], L = parents.shape[1], R = parents.shape[2]
    G_np = np.zeros((n, R + 1, R + 1), dtype=np.float64)
    C_np = np.zeros((n, R + 1), dtype=np.float64)
    cdef double[:, :, ::1] G = G_np
    cdef double[:, ::1] C = C_np
    cdef Py_ssize_t i, l, k
    cdef int p
    cdef double W, wl
    for i in range(n):
        W = 0.0
        for l in range(L):
            W += w[i, l]
        C[i, 0] = m * W
        for k in range(1, r[i] + 1):
            C[i, k] = W
        for l in range(L):
            wl = w[i, l]
            for k in range(r[i]):
                p = parents[i, l, k]
                G[i, p, k + 1] += wl
                C[i, p] -= wl
    return G_np, C_np


def censor_counts_per_sample(int[:, :, ::1] parents, int[::1] r, int m):
    cdef Py_ssize_t n = parents.shape[0], L = parents.shape[1], R = parents.shape[2]
    C_np = np.zeros((n, L, R + 1), dtype=np.float64)
    cdef double[:, :, ::1] C = C_np
    cdef Py_ssize_t i, l, k
    for i in range(n):
        for l in range(L):
            C[i, l, 0] = m
            for k in range(1, r[i] + 1):
                C[i, l, k] = 1.0
            for k in range(r[i]):
                C[i, l, parents[i, l, k]] -= 1.0
    return C_np


cdef inline int _popcount(unsigned long x):
    cdef int c = 0
    while x:
        x &= x - 1
        c += 1
    return c


cdef inline double _lae(double a, double b) nogil:
    # log(exp(a) + exp(b))
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def system_loglik(double[:, ::1] logf_i, double[::1] logR_i, int r, int m):
    if r == 0:
        return m * logR_i[0]
    if r > DP_MAX_R:
        from . import _pykernels
        return _pykernels.system_loglik(np.asarray(logf_i), np.asarray(logR_i), r, m)
    cdef Py_ssize_t nstates = (<Py_ssize_t>1) << r
    cur_np = np.full(nstates, -INFINITY, dtype=np.float64)
    nxt_np = np.full(nstates, -INFINITY, dtype=np.float64)
    lmult_np = np.log(m - np.arange(m, dtype=np.float64))
    cdef double[::1] cur = cur_np
    cdef double[::1] nxt = nxt_np
    cdef double[::1] lmult = lmult_np  # lmult[c] = log(m - c)
    cdef double[::1] tmp
    cdef double z, tot, val, mk, lf0
    cdef Py_ssize_t S, s, low, key, span, a, kbit
    cdef int k, c
    cur[0] = 0.0
    for k in range(1, r + 1):
        span = (<Py_ssize_t>1) << k
        kbit = (<Py_ssize_t>1) << (k - 1)
        for S in range(span):
            nxt[S] = -INFINITY
        lf0 = logf_i[0, k]
        for S in range(kbit):
            z = cur[S]
            if z == -INFINITY:
                continue
            c = _popcount(<unsigned long>S)
            if c < m:
                key = S | kbit
                nxt[key] = _lae(nxt[key], z + lmult[c] + lf0)
            s = S
            while s:
                low = s & (-s)
                a = 0
                while (low >> a) != 1:
                    a += 1
                key = (S ^ low) | kbit
                nxt[key] = _lae(nxt[key], z + logf_i[a + 1, k])
                s ^= low
        tmp = cur
        cur = nxt
        nxt = tmp
    # fold in the censoring terms
    mk = -INFINITY
    terms_np = np.full(nstates, -INFINITY)
    cdef double[::1] terms = terms_np
    for S in range(nstates):
        z = cur[S]
        if z == -INFINITY:
            continue
        tot = 0.0
        c = 0
        s = S
        while s:
            low = s & (-s)
            a = 0
            while (low >> a) != 1:
                a += 1
            tot += logR_i[a + 1]
            c += 1
            s ^= low
        val = z + tot + (m - c) * logR_i[0]
        terms[S] = val
        if val > mk:
            mk = val
    if not isfinite(mk):
        return -INFINITY
    tot = 0.0
    for S in range(nstates):
        if terms[S] > -INFINITY:
            tot += exp(terms[S] - mk)
    return mk + log(tot)


def fleet_loglik(double[:, :, ::1] logf, double[:, ::1] logR, int[::1] r, int m):
    cdef Py_ssize_t n = r.shape[0], i
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = system_loglik(logf[i], logR[i], r[i], m)
    return out
