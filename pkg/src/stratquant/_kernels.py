"""Compiled inner loops for the per-threshold optimization sweep.

Strata are stored flat: stratum ``s`` owns units ``off[s]:off[s+1]`` and
its minimized statistics live at ``toff[s]:toff[s+1]`` (``n_s + 1`` entries).
"""

from __future__ import annotations

import numpy as np
from numba import njit

FIRST, CONTROLS_FIRST, TREATED_FIRST = 0, 1, 2


@njit(cache=True)
def min_tables(ty, ti, tro, cy, ci, cro, phi, off, toff, cs, policy):
    """Closed-form ``t_{s,c}(l)`` for every stratum, flattened.

    Treated units (sorted by outcome) and controls of stratum ``s`` sit at
    ``tro[s]:tro[s+1]`` and ``cro[s]:cro[s+1]``; ``ti``/``ci`` are unit
    positions within the stratum. A treated unit ranks above a control when
    their outcome difference exceeds ``cs[s]``; at equality the policy
    decides. With treated ranks ``r_1 < ... < r_m``, sending the top ``l``
    treated units to the bottom gives
    ``t(l) = sum_{j<=l} phi(j) + sum_{i<=m-l} phi(r_i + l)``.
    """
    S = off.size - 1
    out = np.zeros(toff[-1])
    mmax = 0
    for s in range(S):
        mmax = max(mmax, tro[s + 1] - tro[s])
    ranks = np.empty(mmax, np.int64)
    for s in range(S):
        a = off[s]
        n = off[s + 1] - a
        c = cs[s]
        m = tro[s + 1] - tro[s]
        for i in range(m):
            t = tro[s] + i
            below = 0
            for u in range(cro[s], cro[s + 1]):
                diff = ty[t] - cy[u]
                if diff > c:
                    below += 1
                elif diff == c:
                    if policy == CONTROLS_FIRST or (policy == FIRST and ci[u] < ti[t]):
                        below += 1
            ranks[i] = i + 1 + below
        t0 = toff[s]
        head = 0.0
        for l in range(n + 1):
            if 0 < l <= m:
                head += phi[a + l - 1]
            acc = head
            for i in range(m - l):
                acc += phi[a + min(ranks[i] + l, n) - 1]
            out[t0 + l] = acc
    return out


@njit(cache=True)
def row_counts(cuts, c, inclusive):
    """Per row of ascending ``cuts``, the number of entries ``<= c`` (or ``< c``)."""
    S, W = cuts.shape
    out = np.empty(S, np.int64)
    for s in range(S):
        lo, hi = 0, W
        while lo < hi:
            mid = (lo + hi) // 2
            v = cuts[s, mid]
            if v < c or (inclusive and v == c):
                lo = mid + 1
            else:
                hi = mid
        out[s] = lo
    return out


@njit(cache=True)
def gather_rows(T0, X, L, q):
    """Base total, rows ``X[s, q[s]]`` and their lengths for cached intervals."""
    S, _, W = X.shape
    rows = np.empty((S, W))
    lengths = np.empty(S, np.int64)
    base = 0.0
    for s in range(S):
        base += T0[s, q[s]]
        lengths[s] = L[s, q[s]]
        for j in range(W):
            rows[s, j] = X[s, q[s], j]
    return base, rows, lengths


@njit(cache=True)
def gather_pool(T0, X, L, q):
    """Base total and the in-length entries of rows ``X[s, q[s]]``, flattened."""
    S = X.shape[0]
    total = 0
    for s in range(S):
        total += L[s, q[s]]
    vals = np.empty(total)
    base = 0.0
    k = 0
    for s in range(S):
        base += T0[s, q[s]]
        for j in range(L[s, q[s]]):
            vals[k] = X[s, q[s], j]
            k += 1
    return base, vals


@njit(cache=True)
def hull_rows(D, lengths):
    """Row-wise pool-adjacent-violators; entries past ``lengths[s]`` ignored.

    Values inside one pooled block are bit-identical, so stable sorting on
    them preserves within-stratum order.
    """
    S, W = D.shape
    H = np.zeros((S, W))
    sums = np.empty(W)
    cnts = np.empty(W, np.int64)
    for s in range(S):
        nb = 0
        for j in range(lengths[s]):
            sums[nb] = D[s, j]
            cnts[nb] = 1
            nb += 1
            while nb > 1 and sums[nb - 2] * cnts[nb - 1] < sums[nb - 1] * cnts[nb - 2]:
                sums[nb - 2] += sums[nb - 1]
                cnts[nb - 2] += cnts[nb - 1]
                nb -= 1
        j = 0
        for q in range(nb):
            v = sums[q] / cnts[q]
            for _ in range(cnts[q]):
                H[s, j] = v
                j += 1
    return H


# fastmath lets the max/add loop vectorize; each entry is one addition of
# finite values, so results are unchanged
@njit(cache=True, fastmath=True)
def dp_at_most(D, lengths, cap):
    """Best decrement total with at most ``d`` units, ``d = 0..cap``.

    Assumes nonnegative decrements (then "at most" equals "exactly"). The
    row stays in at-most form, so entries past the reachable range are flat.
    """
    S = D.shape[0]
    row = np.zeros(cap + 1)
    new = np.zeros(cap + 1)
    cum = np.zeros(D.shape[1] + 1)
    reach = 0
    for s in range(S):
        e = min(lengths[s], cap)
        if e == 0:
            continue
        for i in range(e):
            cum[i + 1] = cum[i] + D[s, i]
        hi = min(reach + e, cap)
        for d in range(hi + 1):
            new[d] = row[d]
        for i in range(1, e + 1):
            ci = cum[i]
            src = row[: hi + 1 - i]
            dst = new[i : hi + 1]
            for q in range(src.size):
                x = src[q] + ci
                dst[q] = x if x > dst[q] else dst[q]
        for d in range(hi + 1):
            row[d] = new[d]
        for d in range(hi + 1, cap + 1):
            row[d] = row[hi]
        reach = hi
    return row
