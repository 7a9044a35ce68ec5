"""Rank scores, tie-ranking policies and stratified rank score statistics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from stratquant.data import Stratum, StratifiedDataset


class TiePolicy(enum.Enum):
    """How units with equal outcomes are ranked within a stratum.

    FIRST          ties ranked by unit order (randomize order with
                   :func:`~stratquant.data.permute_units`)
    CONTROLS_FIRST controls below treated within ties; gives the smallest
                   valid p-value over unit orderings
    TREATED_FIRST  treated below controls within ties; gives the largest,
                   ordering-free valid p-value
    """

    FIRST = "first"
    CONTROLS_FIRST = "controls_first"
    TREATED_FIRST = "treated_first"


class ScoreKind(enum.Enum):
    WILCOXON = "wilcoxon"
    STEPHENSON = "stephenson"
    CUSTOM = "custom"


@lru_cache(maxsize=None)
def _stephenson_table(n: int, h: int) -> np.ndarray:
    vals = []
    for r in range(1, n + 1):
        v = math.comb(r - 1, h - 1)
        # exact below 2**53, rounded to nearest double above
        vals.append(float(v))
    out = np.array(vals, dtype=np.float64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _wilcoxon_table(n: int) -> np.ndarray:
    out = np.arange(1, n + 1, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RankScoreSpec:
    """Per-stratum nondecreasing score function ``phi_s`` on ranks ``1..n_s``.

    Use the constructors :meth:`wilcoxon`, :meth:`stephenson` and
    :meth:`custom` rather than instantiating directly.
    """

    kind: ScoreKind
    h: tuple[int, ...] = ()
    tables: tuple[tuple[int, tuple[float, ...]], ...] = ()

    def __post_init__(self):
        if self.kind is ScoreKind.STEPHENSON:
            if not self.h:
                raise ValueError("stephenson scores need h")
            if any(int(h) != h or h < 2 for h in self.h):
                raise ValueError(f"stephenson h must be integers >= 2, got {self.h}")
        if self.kind is ScoreKind.CUSTOM:
            for n, tab in self.tables:
                if len(tab) != n:
                    raise ValueError(f"custom scores for size {n} have {len(tab)} entries")
                if any(b < a for a, b in zip(tab, tab[1:])):
                    raise ValueError(f"custom scores for size {n} are not nondecreasing")

    @classmethod
    def wilcoxon(cls) -> "RankScoreSpec":
        """Identity scores ``phi(r) = r``."""
        return cls(ScoreKind.WILCOXON)

    @classmethod
    def stephenson(cls, h: int | Sequence[int]) -> "RankScoreSpec":
        """``phi(r) = C(r-1, h-1)``; ``h`` is one integer or one per stratum."""
        hs = (int(h),) if np.isscalar(h) else tuple(int(v) for v in h)
        return cls(ScoreKind.STEPHENSON, h=hs)

    @classmethod
    def custom(cls, tables: Mapping[int, Sequence[float]]) -> "RankScoreSpec":
        """Explicit score lists keyed by stratum size."""
        return cls(
            ScoreKind.CUSTOM,
            tables=tuple(
                sorted((int(n), tuple(float(v) for v in tab)) for n, tab in tables.items())
            ),
        )

    def table(self, n: int, index: int = 0) -> np.ndarray:
        """Scores ``phi(1..n)`` for a stratum of size ``n`` at position ``index``."""
        if self.kind is ScoreKind.WILCOXON:
            return _wilcoxon_table(n)
        if self.kind is ScoreKind.STEPHENSON:
            if len(self.h) == 1:
                h = self.h[0]
            elif index < len(self.h):
                h = self.h[index]
            else:
                raise ValueError(f"no stephenson h given for stratum {index + 1}")
            return _stephenson_table(n, h)
        for size, tab in self.tables:
            if size == n:
                return np.array(tab, dtype=np.float64)
        raise ValueError(f"no custom scores for stratum size {n}")

    def tables_for(self, dataset: StratifiedDataset) -> list[np.ndarray]:
        return [self.table(s.size, i) for i, s in enumerate(dataset.strata)]

    def is_concave(self, n: int, index: int = 0) -> bool:
        d = np.diff(self.table(n, index))
        return bool(np.all(np.diff(d) <= 0))


def _order(y: np.ndarray, z: np.ndarray, policy: TiePolicy) -> np.ndarray:
    idx = np.arange(y.size)
    if policy is TiePolicy.FIRST:
        return np.lexsort((idx, y))
    zkey = z if policy is TiePolicy.CONTROLS_FIRST else 1 - z
    return np.lexsort((idx, zkey, y))


def ranks(outcomes, assignments, policy: TiePolicy = TiePolicy.FIRST) -> np.ndarray:
    """Ranks ``1..n`` of ``outcomes`` with ties broken according to ``policy``."""
    y = np.asarray(outcomes, dtype=float).reshape(-1)
    z = np.asarray(assignments).reshape(-1)
    if y.size != z.size:
        raise ValueError(f"length mismatch: {y.size} outcomes, {z.size} assignments")
    out = np.empty(y.size, dtype=np.int64)
    out[_order(y, z, policy)] = np.arange(1, y.size + 1)
    return out


def stratum_statistic(
    stratum: Stratum,
    imputed_controls,
    spec: RankScoreSpec,
    policy: TiePolicy = TiePolicy.FIRST,
    index: int = 0,
) -> float:
    """Sum of treated units' scores, ranking ``imputed_controls``."""
    y0 = np.asarray(imputed_controls, dtype=float)
    if y0.size != stratum.size:
        raise ValueError(f"expected {stratum.size} imputed outcomes, got {y0.size}")
    if stratum.size == 0:
        return 0.0
    r = ranks(y0, stratum.z, policy)
    phi = spec.table(stratum.size, index)
    return float(phi[r[stratum.z == 1] - 1].sum())


def stratified_statistic(
    dataset: StratifiedDataset,
    imputed_controls,
    spec: RankScoreSpec,
    policy: TiePolicy = TiePolicy.FIRST,
) -> float:
    """``t(z, y) = sum_s t_s(z_s, y_s)``.

    ``imputed_controls`` is a flat length-N vector or a per-stratum sequence.
    """
    if isinstance(imputed_controls, np.ndarray) and imputed_controls.ndim == 1:
        pieces = dataset.split(imputed_controls)
    else:
        pieces = list(imputed_controls)
        if len(pieces) != dataset.n_strata:
            raise ValueError(f"expected {dataset.n_strata} strata of outcomes, got {len(pieces)}")
    return float(
        sum(
            stratum_statistic(s, y0, spec, policy, i)
            for i, (s, y0) in enumerate(zip(dataset.strata, pieces))
        )
    )


def impute_controls(dataset: StratifiedDataset, effects) -> np.ndarray:
    """Control potential outcomes ``Y - Z * delta`` under a sharp null."""
    delta = np.broadcast_to(np.asarray(effects, dtype=float), (dataset.total_units,))
    return dataset.y - dataset.z * delta
