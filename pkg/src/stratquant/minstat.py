"""Per-stratum minimized rank statistics for a fixed effect threshold ``c``.

For stratum ``s`` and ``0 <= l <= n_s``, ``t_{s,c}(l)`` is the smallest value
the stratum's rank statistic can take when at most ``l`` of its units have an
individual effect above ``c``. The minimum is reached by giving the ``l``
top-ranked treated units an effectively infinite effect and every other unit
effect ``c``, which sends those ``l`` units to the bottom ranks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from stratquant import _kernels
from stratquant.data import StratifiedDataset
from stratquant.scores import RankScoreSpec, TiePolicy, stratum_statistic


@dataclass(frozen=True)
class MinStatTable:
    """Minimized statistics ``t[s][l]`` and their decrements ``deltas[s][j-1]``."""

    c: float
    t: tuple[np.ndarray, ...]
    infinity_surrogate: float
    policy: TiePolicy = TiePolicy.FIRST

    @property
    def deltas(self) -> tuple[np.ndarray, ...]:
        return tuple(t[:-1] - t[1:] for t in self.t)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([t.size - 1 for t in self.t], dtype=np.int64)

    @property
    def total_units(self) -> int:
        return int(self.sizes.sum())

    @property
    def base(self) -> float:
        """``sum_s t_{s,c}(0)``: the statistic under the constant effect ``c``."""
        return float(sum(t[0] for t in self.t))

    @classmethod
    def from_deltas(cls, deltas, base=None, c: float = 0.0) -> "MinStatTable":
        """Build a table directly from per-stratum decrement sequences.

        ``base`` gives ``t_{s,c}(0)`` per stratum (defaults to the total of
        that stratum's decrements, so ``t_{s,c}(n_s) = 0``).
        """
        ts = []
        for i, d in enumerate(deltas):
            d = np.asarray(d, dtype=float)
            t0 = float(d.sum()) if base is None else float(base[i])
            ts.append(np.concatenate([[t0], t0 - np.cumsum(d)]))
        return cls(c=c, t=tuple(ts), infinity_surrogate=np.inf)


def infinity_surrogate(dataset: StratifiedDataset, c: float) -> float:
    """A finite effect size large enough to act as ``+inf`` at threshold ``c``."""
    y, z = dataset.y, dataset.z
    treated, control = y[z == 1], y[z == 0]
    spread = float(treated.max() - control.min()) if treated.size and control.size else 0.0
    return max(spread, 0.0) + 1.0 + abs(c)


_POLICY_CODE = {
    TiePolicy.FIRST: _kernels.FIRST,
    TiePolicy.CONTROLS_FIRST: _kernels.CONTROLS_FIRST,
    TiePolicy.TREATED_FIRST: _kernels.TREATED_FIRST,
}


# interval tables are cached while they need at most this many entries
_CACHE_ENTRIES = 5_000_000


class MinStatBuilder:
    """Reusable evaluator of minimized statistics for one dataset and score spec.

    A treated unit ranks above a control exactly when their outcome
    difference exceeds ``c``, so each stratum's table only changes as ``c``
    crosses one of its treated-minus-control differences. Under the
    treated-first and controls-first policies the tables for every interval
    between consecutive differences are computed once and then looked up.
    """

    def __init__(self, dataset: StratifiedDataset, spec: RankScoreSpec):
        self.dataset = dataset
        self.spec = spec
        self.sizes = dataset.sizes
        self.total_units = dataset.total_units
        self.n_strata = len(self.sizes)
        self.nmax = int(self.sizes.max()) if self.sizes.size else 0
        tables = spec.tables_for(dataset)
        self._phi = np.concatenate(tables) if tables else np.zeros(0)
        self._off = np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)
        self._toff = np.concatenate([[0], np.cumsum(self.sizes + 1)]).astype(np.int64)
        # padded cell (s, l) reads flat entry toff[s] + min(l, n_s)
        cols = np.minimum(np.arange(self.nmax + 1)[None, :], self.sizes[:, None])
        self._pad_idx = self._toff[:-1, None] + cols

        ty, ti, cy, ci, cuts = [], [], [], [], []
        for st in dataset.strata:
            tpos = np.flatnonzero(st.z == 1)
            tpos = tpos[np.argsort(st.y[tpos], kind="stable")]
            cpos = np.flatnonzero(st.z == 0)
            ty.append(st.y[tpos])
            ti.append(tpos)
            cy.append(st.y[cpos])
            ci.append(cpos)
            cuts.append(np.unique(st.y[tpos][:, None] - st.y[cpos][None, :]))
        cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
        self._ty, self._ti = cat(ty, np.float64), cat(ti, np.int64)
        self._cy, self._ci = cat(cy, np.float64), cat(ci, np.int64)
        self._tro = np.concatenate([[0], np.cumsum([len(a) for a in ty])]).astype(np.int64)
        self._cro = np.concatenate([[0], np.cumsum([len(a) for a in cy])]).astype(np.int64)
        width = max((u.size for u in cuts), default=0)
        self._cuts = np.full((self.n_strata, width), np.inf)
        for i, u in enumerate(cuts):
            self._cuts[i, : u.size] = u
        self.cacheable = self.n_strata * (width + 1) * (self.nmax + 1) <= _CACHE_ENTRIES
        self._intervals = None

    def _kernel(self, cs: np.ndarray, code: int) -> np.ndarray:
        return _kernels.min_tables(
            self._ty, self._ti, self._tro, self._cy, self._ci, self._cro,
            self._phi, self._off, self._toff, cs, code,
        )

    def flat(self, c: float, policy: TiePolicy = TiePolicy.FIRST) -> np.ndarray:
        return self._kernel(np.full(self.n_strata, float(c)), _POLICY_CODE[policy])

    def interval_index(self, c: float, policy: TiePolicy) -> np.ndarray | None:
        """Per-stratum interval holding ``c`` (``None`` when not cacheable).

        Interval ``q`` lies just above the stratum's ``q``-th smallest
        difference; a tie resolved treated-first belongs to the interval above.
        """
        if not self.cacheable or policy is TiePolicy.FIRST:
            return None
        return _kernels.row_counts(self._cuts, float(c), policy is TiePolicy.TREATED_FIRST)

    def interval_tables(self) -> np.ndarray:
        """``S x (Q+1) x (nmax+1)`` padded tables, one per interval."""
        if self._intervals is None:
            S, Q = self._cuts.shape
            out = np.empty((S, Q + 1, self.nmax + 1))
            code = _kernels.TREATED_FIRST
            out[:, 0] = self._kernel(np.full(S, -np.inf), code)[self._pad_idx]
            for q in range(1, Q + 1):
                out[:, q] = self._kernel(self._cuts[:, q - 1].copy(), code)[self._pad_idx]
            self._intervals = out
        return self._intervals

    def padded(self, c: float, policy: TiePolicy = TiePolicy.FIRST) -> np.ndarray:
        """``S x (nmax+1)`` array of ``t_{s,c}(l)``, padded with ``t_{s,c}(n_s)``."""
        q = self.interval_index(c, policy)
        if q is None:
            return self.flat(c, policy)[self._pad_idx]
        return self.interval_tables()[np.arange(self.n_strata), q]

    def build(self, c: float, policy: TiePolicy = TiePolicy.FIRST) -> MinStatTable:
        flat = self.flat(c, policy)
        t = tuple(flat[self._toff[i] : self._toff[i + 1]].copy() for i in range(self.n_strata))
        return MinStatTable(
            c=float(c), t=t, infinity_surrogate=infinity_surrogate(self.dataset, c), policy=policy
        )


def build_min_table(
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    policy: TiePolicy,
    c: float,
) -> MinStatTable:
    return MinStatBuilder(dataset, spec).build(c, policy)


def verify_min_table(
    table: MinStatTable,
    dataset: StratifiedDataset,
    spec: RankScoreSpec,
    policy: TiePolicy | None = None,
    tol: float = 1e-9,
) -> bool:
    """Check ``table`` against brute-force minimization.

    Every treated unit gets effect ``c`` or the surrogate infinity, with at
    most ``l`` infinities, and the smallest statistic over all such choices is
    compared with ``t_{s,c}(l)``. Exponential in the treated count; meant for
    strata of at most about 8 units.
    """
    policy = table.policy if policy is None else policy
    c, big = table.c, table.infinity_surrogate
    for s_idx, stratum in enumerate(dataset.strata):
        treated = np.flatnonzero(stratum.z == 1)
        for l in range(stratum.size + 1):
            best = np.inf
            for r in range(min(l, treated.size) + 1):
                for chosen in itertools.combinations(treated, r):
                    delta = np.full(stratum.size, c)
                    delta[list(chosen)] = big
                    y0 = stratum.y - stratum.z * delta
                    best = min(best, stratum_statistic(stratum, y0, spec, policy, s_idx))
            if abs(best - table.t[s_idx][l]) > tol:
                return False
    return True
