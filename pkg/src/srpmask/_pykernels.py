"""Pure numpy implementations of the inner loops.

Shared conventions with the compiled module:

* ``logf[i, a, k]`` is log f(t_k - t_a) for system i, 0 <= a < k <= r_i,
  where index 0 stands for time 0 (a socket that has not failed yet).
* ``logR[i, a]`` is log R(tau_i - t_a), a = 0..r_i.
* A sampled assignment is reported both as socket labels (0-based) and as
  parent indices: the failure index a of the previous failure on the same
  socket (0 when the socket had not failed before).
"""

from __future__ import annotations

import math

import numpy as np

NAME = "python"


def sample_parents(logf, r, m, u):
    """Sequential socket draws for every (system, replicate) row.

    Parameters
    ----------
    logf : (n, R+1, R+1) float64
    r : (n,) int32
    m : int
    u : (n, L, R) float64 uniforms in [0, 1)

    Returns
    -------
    labels, parents : (n, L, R) int32, -1 past r_i
    logq : (n, L) float64, log probability of each drawn sequence
    n_degenerate : int, steps that fell back to uniform weights
    """
    n, L, R = u.shape
    labels = np.full((n, L, R), -1, dtype=np.int32)
    parents = np.full((n, L, R), -1, dtype=np.int32)
    logq = np.zeros((n, L))
    if R == 0 or n == 0 or L == 0:
        return labels, parents, logq, 0
    rows = n * L
    sys = np.repeat(np.arange(n), L)
    rr = np.asarray(r)[sys]
    last = np.zeros((rows, m), dtype=np.intp)
    flat_lab = labels.reshape(rows, R)
    flat_par = parents.reshape(rows, R)
    flat_u = u.reshape(rows, R)
    flat_q = logq.reshape(rows)
    n_deg = 0
    for k in range(1, R + 1):
        idx = np.flatnonzero(rr >= k)
        if idx.size == 0:
            break
        lst = last[idx]
        v = logf[sys[idx, None], lst, k]
        mx = v.max(axis=1)
        deg = ~np.isfinite(mx)
        with np.errstate(invalid="ignore"):
            w = np.exp(v - mx[:, None])
        if deg.any():
            n_deg += int(deg.sum())
            w[deg] = 1.0
        cum = np.cumsum(w, axis=1)
        tot = cum[:, -1]
        target = flat_u[idx, k - 1] * tot
        sel = np.minimum((cum <= target[:, None]).sum(axis=1), m - 1)
        flat_lab[idx, k - 1] = sel
        flat_par[idx, k - 1] = lst[np.arange(idx.size), sel]
        last[idx, sel] = k
        flat_q[idx] += np.log(w[np.arange(idx.size), sel] / tot)
    return labels, parents, logq, n_deg


def tally(parents, r, m):
    """Gap and censoring counts summed over replicates.

    ``G[i, a, k]`` counts replicates where failure k follows failure a on the
    same socket; ``C[i, a]`` counts sockets whose last failure is a (a=0:
    sockets that never failed) so that ``C[i].sum() == m * L``.
    """
    n, L, R = parents.shape
    G = np.zeros((n, R + 1, R + 1))
    C = np.zeros((n, R + 1))
    if n == 0:
        return G, C
    r = np.asarray(r)
    k_idx = np.broadcast_to(np.arange(1, R + 1), (n, L, R))
    i_idx = np.broadcast_to(np.arange(n)[:, None, None], (n, L, R))
    valid = parents >= 0
    flat = (i_idx[valid] * (R + 1) + parents[valid]) * (R + 1) + k_idx[valid]
    G += np.bincount(flat, minlength=n * (R + 1) ** 2).reshape(n, R + 1, R + 1)
    # chain ends: every failure contributes a remainder unless it is a parent
    C[:, 1:] = L * (np.arange(1, R + 1)[None, :] <= r[:, None])
    is_parent = G.sum(axis=2)  # times index a was used as a parent
    C[:, 1:] -= is_parent[:, 1:]
    C[:, 0] = m * L - is_parent[:, 0]
    return G, C


def tally_weighted(parents, r, m, w):
    """``tally`` with replicate (i, l) counted with weight ``w[i, l]``."""
    n, L, R = parents.shape
    G = np.zeros((n, R + 1, R + 1))
    C = np.zeros((n, R + 1))
    if n == 0:
        return G, C
    r = np.asarray(r)
    w = np.asarray(w, dtype=float)
    k_idx = np.broadcast_to(np.arange(1, R + 1), (n, L, R))
    i_idx = np.broadcast_to(np.arange(n)[:, None, None], (n, L, R))
    ww = np.broadcast_to(w[:, :, None], (n, L, R))
    valid = parents >= 0
    flat = (i_idx[valid] * (R + 1) + parents[valid]) * (R + 1) + k_idx[valid]
    G += np.bincount(flat, weights=ww[valid], minlength=n * (R + 1) ** 2).reshape(n, R + 1, R + 1)
    W = w.sum(axis=1)
    C[:, 1:] = W[:, None] * (np.arange(1, R + 1)[None, :] <= r[:, None])
    is_parent = G.sum(axis=2)
    C[:, 1:] -= is_parent[:, 1:]
    C[:, 0] = m * W - is_parent[:, 0]
    return G, C


def censor_counts_per_sample(parents, r, m):
    """Per-replicate censoring counts, shape (n, L, R+1)."""
    n, L, R = parents.shape
    C = np.zeros((n, L, R + 1))
    r = np.asarray(r)
    C[:, :, 1:] = (np.arange(1, R + 1)[None, :] <= r[:, None])[:, None, :]
    valid = parents >= 0
    i_idx, l_idx, _ = np.nonzero(valid)
    np.subtract.at(C, (i_idx, l_idx, parents[valid]), 1.0)
    C[:, :, 0] += m
    return C


def _lae(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def system_loglik(logf_i, logR_i, r, m):
    """Exact log of the sum over all m**r socket assignments of one system.

    Forward recursion over the set of chain-end failure indices; states are
    bitmasks, each new-socket transition carries multiplicity (m - |S|).
    Everything stays in log space: survival terms are only folded in at the
    end, so a state with a tiny forward weight can still dominate the sum.
    """
    if r == 0:
        return m * logR_i[0]
    states = {0: 0.0}
    for k in range(1, r + 1):
        col = logf_i[:k, k]
        kbit = 1 << (k - 1)
        nxt: dict[int, float] = {}
        for S, z in states.items():
            c = bin(S).count("1")
            if c < m:
                key = S | kbit
                nxt[key] = _lae(nxt.get(key, -math.inf), z + math.log(m - c) + col[0])
            s = S
            while s:
                low = s & -s
                a = low.bit_length()
                key = (S ^ low) | kbit
                nxt[key] = _lae(nxt.get(key, -math.inf), z + col[a])
                s ^= low
        states = {S: z for S, z in nxt.items() if z > -math.inf}
        if not states:
            return -math.inf
    terms = []
    for S, z in states.items():
        c = 0
        tot = 0.0
        s = S
        while s:
            low = s & -s
            tot += logR_i[low.bit_length()]
            c += 1
            s ^= low
        terms.append(z + tot + (m - c) * logR_i[0])
    terms = np.array(terms)
    top = terms.max()
    if not np.isfinite(top):
        return -math.inf
    return float(top + math.log(np.exp(terms - top).sum()))


def fleet_loglik(logf, logR, r, m):
    return np.array([system_loglik(logf[i], logR[i], int(r[i]), m) for i in range(len(r))])
