"""Tests for effect quantiles and their inversion into confidence limits.

``H_{k,c}`` states that the k-th smallest individual effect is at most ``c``.
Its p-value is the null tail evaluated at the minimized statistic
``t_{k,c}``. Inverting the tests over all ``k`` and ``c`` gives lower limits
for every quantile and for ``n(c)``, all valid simultaneously.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from stratquant.data import StratifiedDataset, Stratum, permute_units
from stratquant import _kernels
from stratquant.knapsack import dp_gains, effective_lengths, greedy_gains, pooled_topsums, solve_dp_ilp, solve_greedy_lp
from stratquant.minstat import MinStatBuilder
from stratquant.nulldist import NullDistribution, assignment_count, exact_null, mc_null
from stratquant.scores import RankScoreSpec, TiePolicy


class Method(enum.Enum):
    ILP = "ilp"  # exact integer minimum
    LP = "lp"  # linear relaxation; conservative


def _prepare(dataset: StratifiedDataset, policy: TiePolicy, tie_seed: int | None):
    if policy is TiePolicy.FIRST and tie_seed is not None:
        return permute_units(dataset, tie_seed)
    return dataset


def default_null(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    budget: int = 10**6,
    reps: int = 100_000,
    seed: int | None = None,
) -> NullDistribution:
    """Exact null when enumeration fits ``budget``, otherwise seeded Monte Carlo."""
    if assignment_count(dataset) <= budget:
        return exact_null(dataset, spec, budget=budget)
    if seed is None:
        raise ValueError("exact null exceeds budget; a Monte Carlo seed is required")
    return mc_null(dataset, spec, reps=reps, seed=seed)


def min_statistic(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    policy: TiePolicy,
    k: int,
    c: float,
    method: Method = Method.ILP,
) -> float:
    """``t_{k,c}`` (ILP) or its relaxation ``t'_{k,c}`` (LP)."""
    table = MinStatBuilder(dataset, spec).build(c, policy)
    if method is Method.ILP:
        return float(solve_dp_ilp(table, k, allocation=False).objective)
    return float(solve_greedy_lp(table, k).objective)


def test_quantile(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    policy: TiePolicy,
    k: int,
    c: float,
    null_dist,
    method: Method = Method.ILP,
    tie_seed: int | None = None,
) -> float:
    """p-value for ``H_{k,c}``. ``k = 0`` is vacuous and returns 1."""
    N = dataset.total_units
    if not 0 <= k <= N:
        raise ValueError(f"k={k} outside [0, {N}]")
    if k == 0:
        return 1.0
    data = _prepare(dataset, policy, tie_seed)
    return float(null_dist.sf(min_statistic(data, spec, policy, k, c, method)))


test_quantile.__test__ = False  # not a pytest test despite the name


def test_quantile_bounds(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    k: int,
    c: float,
    null_dist,
    method: Method = Method.ILP,
) -> tuple[float, float]:
    """``(p_lower, p_upper)`` from the controls-first and treated-first rankings.

    Any unit ordering's p-value lies between them; the upper one does not
    depend on the ordering at all.
    """
    lo = test_quantile(dataset, spec, TiePolicy.CONTROLS_FIRST, k, c, null_dist, method)
    hi = test_quantile(dataset, spec, TiePolicy.TREATED_FIRST, k, c, null_dist, method)
    return lo, hi


test_quantile_bounds.__test__ = False


class ProfileEvaluator:
    """p-values for a range of ``k`` at one threshold, from one optimization sweep.

    ``tail`` is any object exposing ``sf(t) = Pr(T >= t)``.
    """

    def __init__(self, dataset: StratifiedDataset, spec: RankScoreSpec, tail, method: Method):
        self.builder = MinStatBuilder(dataset, spec)
        self.tail = tail
        self.method = method
        self.N = dataset.total_units
        self.sizes = dataset.sizes
        self.nmax = self.builder.nmax
        self.evaluations = 0
        self._rows = np.arange(len(self.sizes))
        self._cache = None

    def _interval_cache(self):
        """Decrements, effective lengths and row hulls for every interval."""
        if self._cache is None:
            T = self.builder.interval_tables()
            S, Q1, W = T.shape
            D = np.ascontiguousarray((T[:, :, :-1] - T[:, :, 1:]).reshape(S * Q1, W - 1))
            L = effective_lengths(D)
            H = _kernels.hull_rows(D, L) if self.method is Method.LP else None
            shape = (S, Q1, W - 1)
            self._cache = (
                np.ascontiguousarray(T[:, :, 0]),
                D.reshape(shape),
                L.reshape(S, Q1),
                None if H is None else H.reshape(shape),
            )
        return self._cache

    def statistics(self, c: float, policy: TiePolicy, klo: int = 0, khi: int | None = None) -> np.ndarray:
        """``t_{k,c}`` (or its relaxation) for ``k = klo..khi``."""
        khi = self.N if khi is None else khi
        self.evaluations += 1
        caps = self.N - np.arange(klo, khi + 1)
        top = int(caps[0]) if caps.size else 0
        q = self.builder.interval_index(c, policy)
        if q is None:
            pad = self.builder.padded(c, policy)
            D = np.ascontiguousarray(pad[:, :-1] - pad[:, 1:])
            base = float(pad[:, 0].sum())
            if self.method is Method.ILP:
                return base - dp_gains(D, top)[caps]
            return base - greedy_gains(D, self.sizes, caps)
        T0, Dc, Lc, Hc = self._interval_cache()
        if self.method is Method.ILP:
            base, D, L = _kernels.gather_rows(T0, Dc, Lc, q)
            gains = dp_gains(D, top, L)[caps]
        elif caps.size and caps[-1] >= self.nmax:
            base, vals = _kernels.gather_pool(T0, Hc, Lc, q)
            gains = pooled_topsums(vals, caps)
        else:
            base, D, L = _kernels.gather_rows(T0, Dc, Lc, q)
            gains = greedy_gains(D, self.sizes, caps, L, _kernels.gather_rows(T0, Hc, Lc, q)[1])
        return base - gains

    def pvalues(self, c: float, policy: TiePolicy, klo: int = 0, khi: int | None = None) -> np.ndarray:
        p = np.asarray(self.tail.sf(self.statistics(c, policy, klo, khi)), dtype=float)
        if klo == 0 and p.size:
            p[0] = 1.0
        return p


def candidate_thresholds(dataset: StratifiedDataset) -> np.ndarray:
    """Sorted distinct within-stratum treated-minus-control differences."""
    diffs = []
    for s in dataset.strata:
        yt, yc = s.y[s.z == 1], s.y[s.z == 0]
        if yt.size and yc.size:
            diffs.append((yt[:, None] - yc[None, :]).ravel())
    if not diffs:
        return np.zeros(0)
    return np.unique(np.concatenate(diffs))


def _lower_limit_indices(evaluator: ProfileEvaluator, cands: np.ndarray, alpha: float) -> np.ndarray:
    """Index ``J(k)`` for ``k = 1..N`` with the limit at ``cands[J-1]``.

    On the open interval after candidate ``j`` the p-value equals the
    treated-first p-value at that candidate; below the first candidate it
    equals the controls-first value there. These right-limit values are
    nondecreasing in ``j`` and nonincreasing in ``k``, so each evaluation
    splits the k-range and both searches proceed together. ``J = 0`` means
    minus infinity; ``J = M + 1`` means no threshold is accepted.
    """
    N, M = evaluator.N, cands.size
    J = np.zeros(N + 1, dtype=np.int64)

    def right_limit(j: int, klo: int, khi: int) -> np.ndarray:
        if M == 0:
            return evaluator.pvalues(0.0, TiePolicy.TREATED_FIRST, klo, khi)
        if j == 0:
            return evaluator.pvalues(float(cands[0]), TiePolicy.CONTROLS_FIRST, klo, khi)
        return evaluator.pvalues(float(cands[j - 1]), TiePolicy.TREATED_FIRST, klo, khi)

    stack = [(0, M + 1, 1, N)]
    while stack:
        jlo, jhi, klo, khi = stack.pop()
        if klo > khi:
            continue
        if jlo == jhi:
            J[klo : khi + 1] = jlo
            continue
        jmid = (jlo + jhi) // 2
        p = right_limit(jmid, klo, khi)
        split = int(np.argmax(p <= alpha)) if np.any(p <= alpha) else p.size
        stack.append((jlo, jmid, klo, klo + split - 1))
        stack.append((jmid + 1, jhi, klo + split, khi))
    return J[1:]


@dataclass
class QuantileReport:
    """Simultaneous lower confidence limits for all effect quantiles.

    ``lower[k-1]`` is the limit for the k-th smallest effect; the confidence
    set is ``[lower, inf)`` when ``included[k-1]`` is true and
    ``(lower, inf)`` otherwise (``None`` for infinite limits). The limit
    itself is the same under every tie policy; only boundary membership
    differs, so ``included_by_policy`` records all three when known.
    ``n_lower[c]`` is the lower limit for the number of units with effect
    above ``c``.
    """

    alpha: float
    method: Method
    policy: TiePolicy
    lower: np.ndarray
    included: list
    thresholds: list[float] = field(default_factory=list)
    n_lower: dict = field(default_factory=dict)
    pvalues: dict = field(default_factory=dict)
    pvalue_se: dict = field(default_factory=dict)
    included_by_policy: dict = field(default_factory=dict)
    gamma: float | None = None
    tail: str | None = None
    evaluations: int = 0

    @property
    def N(self) -> int:
        return int(self.lower.size)

    def interval(self, k: int) -> tuple[float, float, bool | None]:
        """``(lower, upper, lower_included)`` for quantile ``k``."""
        return float(self.lower[k - 1]), math.inf, self.included[k - 1]

    def covers(self, k: int, c: float) -> bool:
        lo, _, inc = self.interval(k)
        return c > lo or (c == lo and bool(inc))

    def n_lower_from_intervals(self, c: float) -> int:
        """``#{k : c not in I(k)}``, which equals the ``n(c)`` lower limit."""
        return sum(not self.covers(k, c) for k in range(1, self.N + 1))

    def to_dict(self) -> dict:
        def num(x):
            x = float(x)
            return None if math.isinf(x) and x < 0 else x

        return {
            "alpha": self.alpha,
            "method": self.method.value,
            "policy": self.policy.value,
            "gamma": self.gamma,
            "tail": self.tail,
            "N": self.N,
            "quantiles": [
                {"k": k + 1, "lower_limit": num(v), "included": inc}
                for k, (v, inc) in enumerate(zip(self.lower, self.included))
            ],
            "included_by_policy": {
                pol: list(flags) for pol, flags in self.included_by_policy.items()
            },
            "thresholds": [
                {
                    "c": c,
                    "n_lower": self.n_lower[c],
                    "pvalues": [float(p) for p in self.pvalues.get(c, [])],
                    "pvalue_se": [float(p) for p in self.pvalue_se.get(c, [])],
                }
                for c in self.thresholds
            ],
        }


def invert_with_tail(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    policy: TiePolicy,
    alpha: float,
    tail,
    method: Method = Method.ILP,
    thresholds=(0.0,),
    tie_seed: int | None = None,
) -> QuantileReport:
    """Confidence inversion against an arbitrary right-tail function."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    data = _prepare(dataset, policy, tie_seed)
    ev = ProfileEvaluator(data, spec, tail, method)
    cands = candidate_thresholds(data)
    J = _lower_limit_indices(ev, cands, alpha)
    M = cands.size
    lower = np.full(J.size, -np.inf)
    lower[J > M] = np.inf
    finite = (J > 0) & (J <= M)
    lower[finite] = cands[J[finite] - 1]

    by_policy = {
        TiePolicy.TREATED_FIRST.value: [True if f else None for f in finite],
        TiePolicy.CONTROLS_FIRST.value: [False if f else None for f in finite],
    }
    if policy is TiePolicy.FIRST:
        flags = [None] * J.size
        for j in np.unique(J[finite]):
            ks = np.flatnonzero(J == j) + 1
            p = ev.pvalues(float(cands[j - 1]), TiePolicy.FIRST, int(ks.min()))
            for k in ks:
                flags[k - 1] = bool(p[k - ks.min()] > alpha)
        by_policy[TiePolicy.FIRST.value] = flags
    included = by_policy[policy.value]

    report = QuantileReport(
        alpha=alpha,
        method=method,
        policy=policy,
        lower=lower,
        included=included,
        included_by_policy=by_policy,
    )
    se = getattr(tail, "standard_error", None)
    for c in thresholds:
        c = float(c)
        p = ev.pvalues(c, policy, 0)
        report.thresholds.append(c)
        report.pvalues[c] = p
        report.pvalue_se[c] = np.array([se(float(v)) for v in p]) if se else np.zeros_like(p)
        # p is nonincreasing in k; k_bar is the last index with p > alpha
        kbar = int(np.sum(p > alpha)) - 1
        report.n_lower[c] = ev.N - kbar
    report.evaluations = ev.evaluations
    return report


def invert_confidence(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    policy: TiePolicy,
    alpha: float,
    null_dist,
    method: Method = Method.ILP,
    thresholds=(0.0,),
    tie_seed: int | None = None,
) -> QuantileReport:
    """Lower confidence limits ``c(k)`` for ``k = 1..N`` and ``n(c)`` limits.

    The limits are exact over the finite set of candidate thresholds where
    p-values can change.
    """
    return invert_with_tail(dataset, spec, policy, alpha, null_dist, method, thresholds, tie_seed)


@dataclass(frozen=True)
class TwoSidedResult:
    p_right: float
    p_left: float
    alpha: float

    @property
    def reject(self) -> bool:
        return bonferroni_two_sided(self.p_right, self.p_left, self.alpha)


def bonferroni_two_sided(p_right: float, p_left: float, alpha: float) -> bool:
    """Reject when either one-sided p-value is at most ``alpha / 2``."""
    return min(p_right, p_left) <= alpha / 2


def two_sided_test(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    k: int,
    c: float,
    alpha: float,
    null_dist=None,
    method: Method = Method.ILP,
    policy: TiePolicy = TiePolicy.TREATED_FIRST,
) -> TwoSidedResult:
    """Two-sided test of ``tau_(k) = c`` by combining one-sided tests.

    The left-favoring test negates outcomes (labels kept), turning the k-th
    smallest effect into the ``(N+1-k)``-th smallest effect of ``-tau``, and
    tests it against ``-c``.
    """
    N = dataset.total_units
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside [1, {N}]")
    if null_dist is None:
        null_dist = default_null(dataset, spec)
    flipped = StratifiedDataset(
        tuple(Stratum(s.z, -s.y, s.label) for s in dataset.strata), dataset.design
    )
    p_right = test_quantile(dataset, spec, policy, k, c, null_dist, method)
    p_left = test_quantile(flipped, spec, policy, N + 1 - k, -c, null_dist, method)
    return TwoSidedResult(p_right, p_left, alpha)
