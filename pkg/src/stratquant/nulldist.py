"""Randomization null distribution of a stratified rank score statistic.

Under a stratified completely randomized design the statistic's law depends
only on the design and the scores, never on outcomes, so one distribution
serves every hypothesis tested on a dataset. Tails use the right-tail
convention ``G(c) = Pr(T >= c)``.
"""

from __future__ import annotations

import enum
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from stratquant.data import StratifiedDataset
from stratquant.errors import BudgetExceeded
from stratquant.scores import RankScoreSpec

QUANTUM = 1e-9
# dense integer-lattice convolution is used while the support span stays below this
_DENSE_SPAN = 20_000_000
# per-stratum exact laws are sampled directly when C(n, m) is at most this
_MC_EXACT_STRATUM = 200_000


class NullMode(enum.Enum):
    EXACT = "exact"
    MONTE_CARLO = "mc"
    BOUND = "bound"


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(values, dtype=float) / QUANTUM) * QUANTUM


def _tol(t: np.ndarray) -> np.ndarray:
    return QUANTUM * np.maximum(1.0, np.abs(t))


@dataclass(frozen=True, eq=False)
class NullDistribution:
    """Finite-support law with ascending ``values`` and matching ``probs``."""

    values: np.ndarray
    probs: np.ndarray
    mode: NullMode = NullMode.EXACT
    reps: int | None = None
    seed: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        order = np.argsort(v, kind="stable")
        object.__setattr__(self, "values", v[order])
        object.__setattr__(self, "probs", p[order])
        tail = np.cumsum(self.probs[::-1])[::-1]
        object.__setattr__(self, "_tail", np.minimum(tail, 1.0))

    @property
    def tail(self) -> np.ndarray:
        """``Pr(T >= values[i])`` for each support point."""
        return self._tail

    def sf(self, t):
        """``G(t) = Pr(T >= t)``, with ``t`` matched to the support up to a
        relative 1e-9 so float noise in score sums cannot drop a tie."""
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.values, t_arr - _tol(t_arr), side="left")
        tail = np.append(self._tail, 0.0)
        out = tail[idx]
        return float(out) if np.ndim(out) == 0 else out

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def standard_error(self, p: float) -> float:
        """Monte Carlo standard error of a tail probability (0 when exact)."""
        if self.mode is not NullMode.MONTE_CARLO or not self.reps:
            return 0.0
        return math.sqrt(max(p * (1 - p), 0.0) / self.reps)

    def to_table(self) -> list[tuple[float, float]]:
        """``(value, Pr(T >= value))`` rows, ascending in value."""
        return [(float(v), float(g)) for v, g in zip(self.values, self._tail)]

    @classmethod
    def from_table(cls, rows, mode: NullMode = NullMode.EXACT, **kw) -> "NullDistribution":
        vals = np.array([r[0] for r in rows], dtype=float)
        tails = np.array([r[1] for r in rows], dtype=float)
        probs = tails - np.append(tails[1:], 0.0)
        return cls(vals, probs, mode, **kw)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "reps": self.reps,
            "seed": self.seed,
            "table": [list(r) for r in self.to_table()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NullDistribution":
        return cls.from_table(d["table"], NullMode(d["mode"]), reps=d.get("reps"), seed=d.get("seed"))


def _merge(values: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q = _quantize(values)
    uniq, inv = np.unique(q, return_inverse=True)
    return uniq, np.bincount(inv.ravel(), weights=probs.ravel(), minlength=uniq.size)


def convolve(laws) -> tuple[np.ndarray, np.ndarray]:
    """Law of a sum of independent finite-support variables.

    ``laws`` is a sequence of ``(values, probs)`` pairs. Integer-valued laws
    are accumulated on a dense lattice; others by merging quantized supports.
    """
    laws = [(np.asarray(v, dtype=float), np.asarray(p, dtype=float)) for v, p in laws]
    if not laws:
        return np.zeros(1), np.ones(1)
    integral = all(np.all(v == np.round(v)) for v, _ in laws)
    span = sum(float(v.max() - v.min()) for v, _ in laws)
    if integral and span < _DENSE_SPAN:
        return _convolve_dense(laws)
    vals, probs = np.zeros(1), np.ones(1)
    for v, p in laws:
        vals, probs = _merge(vals[:, None] + v[None, :], probs[:, None] * p[None, :])
    return vals, probs


def _convolve_dense(laws):
    lo = 0
    acc = np.ones(1)
    for v, p in laws:
        vi = np.round(v).astype(np.int64)
        vmin = int(vi.min())
        width = int(vi.max()) - vmin
        new = np.zeros(acc.size + width)
        for off, pr in zip(vi - vmin, p):
            new[off : off + acc.size] += pr * acc
        acc = new
        lo += vmin
    keep = np.flatnonzero(acc > 0)
    return (lo + keep).astype(float), acc[keep]


def _subset_sum_law(phi: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact law of the sum of scores over a uniformly random m-subset."""
    n = phi.size
    layers: list[dict] = [defaultdict(int) for _ in range(m + 1)]
    layers[0][0.0] = 1
    for r, score in enumerate(phi):
        for j in range(min(r + 1, m), 0, -1):
            src = layers[j - 1]
            dst = layers[j]
            for s, cnt in list(src.items()):
                dst[round(s + float(score), 9)] += cnt
    total = math.comb(n, m)
    items = sorted(layers[m].items())
    vals = np.array([v for v, _ in items], dtype=float)
    probs = np.array([c / total for _, c in items], dtype=float)
    return vals, probs


def stratum_laws(dataset: StratifiedDataset, spec: RankScoreSpec):
    """Exact per-stratum laws of ``t_s`` under complete randomization."""
    cache: dict = {}
    out = []
    for i, s in enumerate(dataset.strata):
        phi = spec.table(s.size, i)
        key = (phi.tobytes(), s.treated_count)
        if key not in cache:
            cache[key] = _subset_sum_law(phi, s.treated_count)
        out.append(cache[key])
    return out


def assignment_count(dataset: StratifiedDataset) -> int:
    return math.prod(math.comb(s.size, s.treated_count) for s in dataset.strata)


def exact_null(
    dataset: StratifiedDataset, spec: RankScoreSpec, budget: int | None = 10**6
) -> NullDistribution:
    """Exact null law by convolving per-stratum score-sum laws.

    ``budget`` caps the number of joint assignments ``prod_s C(n_s, m_s)``;
    pass ``None`` to lift the cap.
    """
    total = assignment_count(dataset)
    if budget is not None and total > budget:
        raise BudgetExceeded(f"{total} assignments exceed exact-null budget {budget}")
    vals, probs = convolve(stratum_laws(dataset, spec))
    return NullDistribution(vals, probs, NullMode.EXACT)


def mc_null(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    reps: int = 100_000,
    seed: int = 0,
    propensities=None,
) -> NullDistribution:
    """Monte Carlo null law from ``reps`` seeded random assignments.

    Each stratum draws from its own substream spawned from ``seed``, so the
    result does not depend on evaluation order. ``propensities`` (one per
    stratum) switches to independent Bernoulli assignment; experimental.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    children = np.random.SeedSequence(seed).spawn(dataset.n_strata)
    total = np.zeros(reps)
    if propensities is not None:
        warnings.warn("Bernoulli assignment null is experimental", stacklevel=2)
        props = np.broadcast_to(np.asarray(propensities, dtype=float), (dataset.n_strata,))
    laws: dict = {}
    for i, (s, child) in enumerate(zip(dataset.strata, children)):
        rng = np.random.Generator(np.random.PCG64(child))
        phi = spec.table(s.size, i)
        if propensities is not None:
            mask = rng.random((reps, s.size)) < props[i]
            total += mask @ phi
        elif math.comb(s.size, s.treated_count) <= _MC_EXACT_STRATUM:
            key = (phi.tobytes(), s.treated_count)
            if key not in laws:
                laws[key] = _subset_sum_law(phi, s.treated_count)
            v, p = laws[key]
            total += v[rng.choice(v.size, size=reps, p=p)]
        else:
            picks = np.argsort(rng.random((reps, s.size)), axis=1)[:, : s.treated_count]
            total += phi[picks].sum(axis=1)
    vals, counts = np.unique(_quantize(total), return_counts=True)
    return NullDistribution(vals, counts / reps, NullMode.MONTE_CARLO, reps=reps, seed=seed)


def pvalue(distribution, observed: float) -> float:
    """``G(observed)``: tail-inclusive probability of a statistic at least as large."""
    return float(distribution.sf(observed))
