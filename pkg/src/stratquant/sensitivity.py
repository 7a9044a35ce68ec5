"""Sensitivity analysis for matched studies with bounded hidden bias.

Within each matched set, treatment odds may differ by at most a factor
``Gamma``. Each set contributes ``v(r)``: the set's statistic when its lone
treated unit (or lone control) has rank ``r``. Two right-tail functions bound
the worst case over bias patterns:

* a large-sample Gaussian tail with maximized mean, then maximized variance;
* a finite-sample tail from independent per-set laws that stochastically
  dominate every admissible assignment law.

Both plug into the same confidence inversion used for randomized designs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from stratquant.data import StratifiedDataset
from stratquant.errors import DesignError
from stratquant.inference import Method, QuantileReport, invert_with_tail, min_statistic
from stratquant.nulldist import NullDistribution, NullMode, convolve
from stratquant.scores import RankScoreSpec, TiePolicy

_REL_TOL = 1e-12


class Tail(enum.Enum):
    GAUSSIAN = "gaussian"
    FINITE = "finite"


def set_values(dataset: StratifiedDataset, spec: RankScoreSpec) -> list[np.ndarray]:
    """Ascending ``v(1..n_s)`` per set.

    With one treated unit ``v(r) = phi(r)``; with one control
    ``v(r) = sum(phi) - phi(r)``, reordered ascending.
    """
    out = []
    for i, s in enumerate(dataset.strata):
        n, m = s.size, s.treated_count
        if n < 2 or m not in (1, n - 1):
            raise DesignError(
                f"set {s.label or i + 1}: {m} treated of {n}; sensitivity analysis needs "
                "exactly one treated unit or one control per set"
            )
        phi = spec.table(n, i)
        v = phi if m == 1 else phi.sum() - phi
        out.append(np.sort(np.asarray(v, dtype=float)))
    return out


@dataclass(frozen=True)
class WorstCaseMoments:
    gamma: float
    means: np.ndarray
    variances: np.ndarray
    maximizers: tuple

    @property
    def mean(self) -> float:
        return float(self.means.sum())

    @property
    def variance(self) -> float:
        return float(self.variances.sum())


def _set_moments(v: np.ndarray, gamma: float) -> tuple[float, float, tuple]:
    n = v.size
    if math.isinf(gamma):
        return float(v[-1]), 0.0, (n - 1,)
    j = np.arange(1, n + 1)
    c1 = np.cumsum(v)
    c2 = np.cumsum(v * v)
    denom = j + gamma * (n - j)
    means = (c1 + gamma * (c1[-1] - c1)) / denom
    mu = float(means.max())
    tol = _REL_TOL * max(1.0, abs(mu))
    argmax = np.flatnonzero(means >= mu - tol)
    second = (c2[argmax] + gamma * (c2[-1] - c2[argmax])) / denom[argmax]
    var = max(float(second.max()) - mu * mu, 0.0)
    return mu, var, tuple(int(a) + 1 for a in argmax)


def worst_case_moments(dataset: StratifiedDataset, spec: RankScoreSpec, Gamma: float) -> WorstCaseMoments:
    """Per-set maximal mean and, among its maximizing cuts, maximal variance."""
    if Gamma < 1:
        raise ValueError(f"Gamma must be at least 1, got {Gamma}")
    res = [_set_moments(v, float(Gamma)) for v in set_values(dataset, spec)]
    return WorstCaseMoments(
        gamma=float(Gamma),
        means=np.array([r[0] for r in res]),
        variances=np.array([r[1] for r in res]),
        maximizers=tuple(r[2] for r in res),
    )


@dataclass(frozen=True)
class GaussianTail:
    """Upper normal tail; a zero variance is treated as a point mass."""

    mean: float
    variance: float

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        if self.variance <= 0:
            tol = 1e-9 * np.maximum(1.0, np.abs(t))
            out = np.where(t <= self.mean + tol, 1.0, 0.0)
        else:
            out = norm.sf((t - self.mean) / math.sqrt(self.variance))
        return float(out) if out.ndim == 0 else out


def finite_sample_laws(dataset: StratifiedDataset, spec: RankScoreSpec, Gamma: float):
    """Per-set dominating laws: ``Pr(T_s >= xi_i) = g_i Gamma / (n - g_i + g_i Gamma)``."""
    laws = []
    for v in set_values(dataset, spec):
        n = v.size
        xi = np.unique(v)
        g = n - np.searchsorted(v, xi, side="left")
        if math.isinf(Gamma):
            tail = np.ones(xi.size)
        else:
            tail = g * Gamma / ((n - g) + g * Gamma)
        probs = tail - np.append(tail[1:], 0.0)
        laws.append((xi, probs))
    return laws


def finite_sample_tail(dataset: StratifiedDataset, spec: RankScoreSpec, Gamma: float) -> NullDistribution:
    if Gamma < 1:
        raise ValueError(f"Gamma must be at least 1, got {Gamma}")
    vals, probs = convolve(finite_sample_laws(dataset, spec, Gamma))
    return NullDistribution(vals, probs, NullMode.BOUND)


def sensitivity_tail(dataset: StratifiedDataset, spec: RankScoreSpec, Gamma: float, tail: Tail):
    if tail is Tail.GAUSSIAN:
        mom = worst_case_moments(dataset, spec, Gamma)
        return GaussianTail(mom.mean, mom.variance)
    return finite_sample_tail(dataset, spec, Gamma)


def gaussian_tail_pvalue(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    Gamma: float,
    k: int,
    c: float,
    method: Method = Method.ILP,
    policy: TiePolicy = TiePolicy.TREATED_FIRST,
) -> float:
    """Large-sample worst-case p-value for ``H_{k,c}`` under bias at most ``Gamma``."""
    if k == 0:
        return 1.0
    t = min_statistic(dataset, spec, policy, k, c, method)
    return float(sensitivity_tail(dataset, spec, Gamma, Tail.GAUSSIAN).sf(t))


def finite_sample_pvalue(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    Gamma: float,
    k: int,
    c: float,
    method: Method = Method.ILP,
    policy: TiePolicy = TiePolicy.TREATED_FIRST,
) -> float:
    """Finite-sample valid worst-case p-value for ``H_{k,c}``."""
    if k == 0:
        return 1.0
    t = min_statistic(dataset, spec, policy, k, c, method)
    return float(finite_sample_tail(dataset, spec, Gamma).sf(t))


def _check_alpha(alpha: float, tail: Tail) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if tail is Tail.GAUSSIAN and alpha > 0.5:
        raise ValueError("the Gaussian tail is only valid for alpha <= 0.5")


def sensitivity_confidence(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    alpha: float,
    Gamma: float,
    tail: Tail = Tail.FINITE,
    method: Method = Method.ILP,
    policy: TiePolicy = TiePolicy.TREATED_FIRST,
    thresholds=(0.0,),
) -> QuantileReport:
    """Simultaneous lower limits for all quantiles, valid under bias at most ``Gamma``."""
    _check_alpha(alpha, tail)
    tail_fn = sensitivity_tail(dataset, spec, Gamma, tail)
    report = invert_with_tail(dataset, spec, policy, alpha, tail_fn, method, thresholds)
    report.gamma = float(Gamma)
    report.tail = tail.value
    return report


@dataclass(frozen=True)
class GammaCutoff:
    """Largest ``Gamma`` at which ``H_{k,c}`` is still rejected.

    ``below_one`` means the test does not reject even without bias;
    ``capped`` means it still rejects at ``gamma_max``.
    """

    value: float | None
    below_one: bool = False
    capped: bool = False

    def __str__(self) -> str:
        if self.below_one:
            return "<1"
        if self.capped:
            return f">={self.value:g}"
        return f"{self.value:.2f}"


def gamma_cutoff(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    alpha: float,
    k: int,
    c: float,
    tail: Tail = Tail.FINITE,
    method: Method = Method.ILP,
    resolution: float = 0.01,
    gamma_max: float = 1e4,
    policy: TiePolicy = TiePolicy.TREATED_FIRST,
) -> GammaCutoff:
    """Doubling then bisection over ``Gamma``, using that p-values grow with ``Gamma``."""
    _check_alpha(alpha, tail)
    if k == 0:
        return GammaCutoff(None, below_one=True)
    t = min_statistic(dataset, spec, policy, k, c, method)

    def rejects(gamma: float) -> bool:
        return sensitivity_tail(dataset, spec, gamma, tail).sf(t) <= alpha

    if not rejects(1.0):
        return GammaCutoff(None, below_one=True)
    lo, hi = 1.0, 2.0
    while rejects(hi):
        lo = hi
        if hi >= gamma_max:
            return GammaCutoff(gamma_max, capped=True)
        hi = min(2 * hi, gamma_max)
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if rejects(mid):
            lo = mid
        else:
            hi = mid
    return GammaCutoff(lo)
