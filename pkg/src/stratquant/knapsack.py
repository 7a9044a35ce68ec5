"""Minimizing ``sum_s t_{s,c}(l_s)`` subject to ``sum_s l_s = N - k``.

This is a multiple-choice knapsack problem whose item weights in stratum
``s`` are the consecutive integers ``0..n_s``. Equivalently, maximize the
total of the first ``l_s`` decrements ``Delta_{s,c}(j)`` of each stratum.

* :func:`solve_dp_ilp` solves the integer problem exactly by dynamic
  programming in ``O((N - k) N)`` additions.
* :func:`solve_greedy_lp` solves the linear relaxation by pooling the
  hull-transformed decrements; its objective is a lower bound of the exact one.
* :func:`solve_brute_force` enumerates allocations (test oracle).
* :func:`solve_naive_greedy` is the untransformed greedy, kept only as a
  counterexample baseline: it can overshoot the true minimum.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from stratquant import _kernels
from stratquant.errors import BudgetExceeded
from stratquant.minstat import MinStatTable

TOL = 1e-9


class SolveMethod(enum.Enum):
    DP_ILP = "dp_ilp"
    GREEDY_LP = "greedy_lp"
    BRUTE_FORCE = "brute_force"
    NAIVE_GREEDY = "naive_greedy"


@dataclass(frozen=True)
class OptResult:
    objective: float
    allocation: tuple
    method: SolveMethod
    base: float
    profile: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def gain(self) -> float:
        """Total of the decrements taken, ``sum_s t_{s,c}(0) - objective``."""
        return self.base - self.objective


def hull_transform(a):
    """Optimal monotone dominating transformation of ``a``.

    Returns the nonincreasing sequence whose prefix sums trace the upper
    concave hull of the prefix sums of ``a`` (the slopes of its least concave
    majorant). Pure Python arithmetic, so ``Fraction`` inputs stay exact.
    """
    blocks: list[list] = []
    for x in a:
        blocks.append([x, 1])
        while len(blocks) > 1 and blocks[-2][0] * blocks[-1][1] < blocks[-1][0] * blocks[-2][1]:
            s, n = blocks.pop()
            blocks[-1][0] += s
            blocks[-1][1] += n
    out = []
    for s, n in blocks:
        out.extend([s / n] * n)
    return out


def hull_transform_rows(A: np.ndarray) -> np.ndarray:
    """Row-wise :func:`hull_transform` of a 2-D float array."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    return _kernels.hull_rows(A, np.full(A.shape[0], A.shape[1], dtype=np.int64))


def _check_k(table: MinStatTable, k: int) -> int:
    N = table.total_units
    if not 0 <= k <= N:
        raise ValueError(f"k={k} outside [0, {N}]")
    return N - k


def solve_greedy_lp(table: MinStatTable, k: int) -> OptResult:
    """Greedy with the hull transform; optimum of the linear relaxation."""
    cap = _check_k(table, k)
    base = table.base
    pool = []
    for s, d in enumerate(table.deltas):
        trunc = min(d.size, cap)
        for j, v in enumerate(hull_transform([float(x) for x in d[:trunc]])):
            pool.append((-v, s, j))
    pool.sort()
    alloc = [0.0] * len(table.t)
    gain = 0.0
    for negv, s, _ in pool[:cap]:
        gain -= negv
        alloc[s] += 1.0
    return OptResult(base - gain, tuple(alloc), SolveMethod.GREEDY_LP, base)


def maxplus(a, b, limit: int | None = None) -> np.ndarray:
    """Max-plus convolution ``out[d] = max_{i+j=d} a[i] + b[j]``, truncated
    to ``d <= limit``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < b.size:
        a, b = b, a
    n = a.size + b.size - 1
    if limit is not None:
        n = min(n, limit + 1)
    if b.size <= 64:
        pad = np.full(a.size + 2 * (b.size - 1), -np.inf)
        pad[b.size - 1 : b.size - 1 + a.size] = a
        windows = sliding_window_view(pad, b.size)[:n]
        return (windows + b[::-1]).max(axis=1)
    out = np.full(n, -np.inf)
    for i, v in enumerate(b[:n]):
        seg = a[: n - i]
        np.maximum(out[i : i + seg.size], seg + v, out=out[i : i + seg.size])
    return out


def _maxplus_power(f: np.ndarray, g: int, limit: int) -> np.ndarray:
    out = np.zeros(1)
    while g:
        if g & 1:
            out = maxplus(out, f, limit)
        g >>= 1
        if g:
            f = maxplus(f, f, limit)
    return out


def _as_padded(deltas) -> np.ndarray:
    if isinstance(deltas, np.ndarray) and deltas.ndim == 2:
        return np.ascontiguousarray(deltas, dtype=np.float64)
    width = max((len(d) for d in deltas), default=0)
    out = np.zeros((len(deltas), width))
    for i, d in enumerate(deltas):
        out[i, : len(d)] = d
    return out


def effective_lengths(D: np.ndarray) -> np.ndarray:
    """Per row, one past the last positive entry (0 for all-zero rows)."""
    if D.shape[1] == 0:
        return np.zeros(D.shape[0], dtype=np.int64)
    pos = D > 0
    last = D.shape[1] - np.argmax(pos[:, ::-1], axis=1)
    return np.where(pos.any(axis=1), last, 0).astype(np.int64)


def dp_gains(deltas, capacity: int, lengths: np.ndarray | None = None) -> np.ndarray:
    """``m_S(d)`` for ``d = 0..capacity``: best decrement total over
    allocations of exactly ``d`` units.

    With nonnegative decrements the exact and at-most-``d`` problems
    coincide and a compiled single-row recursion is used (``lengths`` may
    supply precomputed :func:`effective_lengths`). Otherwise strata with
    identical decrement sequences are merged by max-plus powers.
    """
    D = _as_padded(deltas)
    if D.size == 0 or D.min() >= 0:
        if lengths is None:
            lengths = effective_lengths(D)
        return _kernels.dp_at_most(D, lengths, int(capacity))
    reach = D.shape[0] * D.shape[1] if isinstance(deltas, np.ndarray) else sum(len(d) for d in deltas)
    if capacity > reach:
        raise ValueError(f"capacity {capacity} exceeds total units {reach}")
    groups: dict[bytes, list] = {}
    for d in deltas:
        d = np.asarray(d, dtype=float)
        if d.size:
            groups.setdefault(d.tobytes(), [d, 0])[1] += 1
    row = np.zeros(1)
    for d, g in groups.values():
        kernel = _maxplus_power(np.concatenate([[0.0], np.cumsum(d)]), g, capacity)
        row = maxplus(row, kernel, capacity)
    return row


def solve_dp_ilp(table: MinStatTable, k: int, allocation: bool = True) -> OptResult:
    """Exact integer optimum by dynamic programming.

    ``profile[d]`` holds the optimum objective with ``d`` units allowed above
    the threshold, for ``d = 0..N-k`` (so ``profile[N-j]`` is ``t_{j,c}``).
    With ``allocation=True`` the lexicographically smallest optimal
    allocation is recovered, at ``O(S (N-k))`` extra memory.
    """
    cap = _check_k(table, k)
    base = table.base
    deltas = table.deltas
    gains = dp_gains(deltas, cap)
    profile = base - gains
    if not allocation:
        return OptResult(profile[cap], (), SolveMethod.DP_ILP, base, profile)
    alloc = _lex_smallest_allocation(deltas, cap, gains[cap])
    return OptResult(profile[cap], alloc, SolveMethod.DP_ILP, base, profile)


def _lex_smallest_allocation(deltas, cap: int, best: float) -> tuple:
    S = len(deltas)
    cums = [np.concatenate([[0.0], np.cumsum(d)]) for d in deltas]
    # suffix[b][d]: best total over strata b.. with exactly d units
    suffix = np.full((S + 1, cap + 1), -np.inf)
    suffix[S, 0] = 0.0
    for b in range(S - 1, -1, -1):
        nxt, cur, cum = suffix[b + 1], suffix[b], cums[b]
        for i in range(min(len(cum) - 1, cap) + 1):
            np.maximum(cur[i:], nxt[: cap + 1 - i] + cum[i], out=cur[i:])
    alloc = []
    d = cap
    target = suffix[0, cap]
    assert abs(target - best) <= TOL * max(1.0, abs(best))
    for b in range(S):
        cum = cums[b]
        for i in range(min(len(cum) - 1, d) + 1):
            if cum[i] + suffix[b + 1, d - i] >= target - TOL:
                alloc.append(i)
                target -= cum[i]
                d -= i
                break
    return tuple(alloc)


def solve_brute_force(table: MinStatTable, k: int, budget: int = 10**7) -> OptResult:
    """Exhaustive enumeration of integer allocations (test oracle)."""
    cap = _check_k(table, k)
    sizes = table.sizes
    total = math.prod(int(n) + 1 for n in sizes)
    if total > budget:
        raise BudgetExceeded(f"{total} allocations exceed budget {budget}")
    best, best_alloc = math.inf, None
    for alloc in itertools.product(*(range(int(n) + 1) for n in sizes)):
        if sum(alloc) != cap:
            continue
        val = sum(float(t[l]) for t, l in zip(table.t, alloc))
        if val < best - TOL:
            best, best_alloc = val, alloc
    return OptResult(best, tuple(best_alloc), SolveMethod.BRUTE_FORCE, table.base)


def solve_naive_greedy(table: MinStatTable, k: int) -> OptResult:
    """Take the largest next decrement one unit at a time; ties go to the
    lowest stratum index. Not a valid basis for p-values."""
    cap = _check_k(table, k)
    deltas = table.deltas
    alloc = [0] * len(deltas)
    gain = 0.0
    for _ in range(cap):
        best_s, best_v = -1, -math.inf
        for s, d in enumerate(deltas):
            if alloc[s] < d.size and d[alloc[s]] > best_v:
                best_s, best_v = s, float(d[alloc[s]])
        alloc[best_s] += 1
        gain += best_v
    return OptResult(table.base - gain, tuple(alloc), SolveMethod.NAIVE_GREEDY, table.base)


def greedy_gains(
    deltas_pad: np.ndarray,
    sizes,
    capacities,
    lengths: np.ndarray | None = None,
    hull: np.ndarray | None = None,
) -> np.ndarray:
    """Linear-relaxation gains for several capacities at once.

    ``deltas_pad`` is ``S x nmax`` with zeros past each stratum's size.
    Capacities below ``nmax`` truncate every stratum to that many units.
    ``lengths`` and ``hull`` may supply precomputed :func:`effective_lengths`
    and row hulls of ``deltas_pad``.
    """
    D = np.ascontiguousarray(deltas_pad, dtype=np.float64)
    capacities = np.asarray(capacities, dtype=np.int64)
    out = np.zeros(capacities.size)
    if capacities.size == 0:
        return out
    nmax = D.shape[1]
    if lengths is None:
        lengths = effective_lengths(D)
    big = capacities >= nmax
    if big.any():
        H = _kernels.hull_rows(D, lengths) if hull is None else hull
        out[big] = _pooled(H, lengths, capacities[big])
    for idx in np.flatnonzero(~big):
        cap = int(capacities[idx])
        if cap > 0:
            short = np.minimum(lengths, cap)
            out[idx] = _pooled(_kernels.hull_rows(D, short), short, np.array([cap]))[0]
    return out


def pooled_topsums(vals: np.ndarray, capacities) -> np.ndarray:
    """Sum of the ``d`` largest entries of ``vals`` for each capacity ``d``."""
    vals = np.sort(vals)
    # top-d sum = total minus the (size - d) smallest
    low = np.concatenate([[0.0], np.cumsum(vals)])
    return low[-1] - low[vals.size - np.minimum(np.asarray(capacities), vals.size)]


def _pooled(H: np.ndarray, lengths: np.ndarray, capacities: np.ndarray) -> np.ndarray:
    """Sum of the ``d`` largest pooled hull values for each ``d``."""
    if H.size and H.min() >= 0:
        # hull rows are zero past their length, and zeros never change a top-d sum
        return pooled_topsums(H.ravel(), capacities)
    return pooled_topsums(H[np.arange(H.shape[1])[None, :] < lengths[:, None]], capacities)
