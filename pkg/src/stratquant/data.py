"""Experimental data model: strata of units with binary assignment and outcome."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class Design(enum.Enum):
    SCRE = "scre"
    MATCHED_SETS = "matched"


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Stratum:
    """One stratum (or matched set).

    Unit order is significant: it is the tie-breaking order used by the
    ``FIRST`` ranking policy.
    """

    z: np.ndarray
    y: np.ndarray
    label: str = ""

    def __post_init__(self):
        z = np.asarray(self.z)
        if z.size and not np.all((z == 0) | (z == 1)):
            raise ValueError(f"stratum {self.label!r}: assignments must be 0/1")
        object.__setattr__(self, "z", _frozen(z, np.int8))
        object.__setattr__(self, "y", _frozen(self.y, np.float64))
        if self.z.shape != self.y.shape:
            raise ValueError(
                f"stratum {self.label!r}: {self.z.size} assignments but {self.y.size} outcomes"
            )

    @property
    def size(self) -> int:
        return int(self.z.size)

    @property
    def treated_count(self) -> int:
        return int(self.z.sum())

    @property
    def control_count(self) -> int:
        return self.size - self.treated_count

    def __eq__(self, other):
        if not isinstance(other, Stratum):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.y, other.y)
        )

    def __hash__(self):
        return hash((self.label, self.z.tobytes(), self.y.tobytes()))


@dataclass(frozen=True)
class StratifiedDataset:
    strata: tuple[Stratum, ...]
    design: Design = Design.SCRE

    def __post_init__(self):
        object.__setattr__(self, "strata", tuple(self.strata))

    @classmethod
    def from_arrays(cls, strata_ids, z, y, design: Design = Design.SCRE) -> "StratifiedDataset":
        """Group flat unit arrays by stratum id, keeping first-appearance order
        of strata and file order of units within each stratum."""
        ids = list(strata_ids)
        z = np.asarray(z)
        y = np.asarray(y, dtype=float)
        if not (len(ids) == z.size == y.size):
            raise ValueError("strata_ids, z and y must have equal length")
        groups: dict = {}
        for i, s in enumerate(ids):
            groups.setdefault(s, []).append(i)
        strata = [Stratum(z[idx], y[idx], label=str(s)) for s, idx in groups.items()]
        return cls(tuple(strata), design)

    @classmethod
    def from_strata(cls, pairs: Sequence[tuple], design: Design = Design.SCRE) -> "StratifiedDataset":
        """Build from ``[(z_1, y_1), (z_2, y_2), ...]``."""
        return cls(
            tuple(Stratum(z, y, label=str(i + 1)) for i, (z, y) in enumerate(pairs)),
            design,
        )

    @property
    def n_strata(self) -> int:
        return len(self.strata)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.strata], dtype=np.int64)

    @property
    def treated_counts(self) -> np.ndarray:
        return np.array([s.treated_count for s in self.strata], dtype=np.int64)

    @property
    def total_units(self) -> int:
        return int(self.sizes.sum())

    N = total_units

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([s.z for s in self.strata]) if self.strata else np.zeros(0, np.int8)

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([s.y for s in self.strata]) if self.strata else np.zeros(0)

    def split(self, values) -> list[np.ndarray]:
        """Split a flat length-N vector into per-stratum pieces."""
        values = np.asarray(values, dtype=float)
        if values.size != self.total_units:
            raise ValueError(f"expected {self.total_units} values, got {values.size}")
        return np.split(values, np.cumsum(self.sizes)[:-1])

    def with_design(self, design: Design) -> "StratifiedDataset":
        return StratifiedDataset(self.strata, design)


@dataclass(frozen=True)
class EffectHypothesis:
    """``H_{k,c}``: the k-th smallest individual effect is at most ``c``.

    Equivalently at most ``N - k`` units have an effect strictly above ``c``.
    ``k = 0`` is vacuously true.
    """

    k: int
    c: float

    def contains(self, effects) -> bool:
        effects = np.asarray(effects, dtype=float)
        return int(np.sum(effects > self.c)) <= effects.size - self.k


@dataclass
class ValidationReport:
    design: Design
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    sensitivity_errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def ok_for_sensitivity(self) -> bool:
        return not self.errors and not self.sensitivity_errors


def validate(dataset: StratifiedDataset) -> ValidationReport:
    report = ValidationReport(design=dataset.design)
    if not dataset.strata:
        report.errors.append("empty dataset: no strata")
    for idx, s in enumerate(dataset.strata):
        name = s.label or str(idx + 1)
        if s.size == 0:
            report.errors.append(f"stratum {name}: no units")
            continue
        if not np.all(np.isfinite(s.y)):
            report.errors.append(f"stratum {name}: non-finite outcome")
        m = s.treated_count
        if dataset.design is Design.MATCHED_SETS and (s.size < 2 or m not in (1, s.size - 1)):
            msg = f"matched set {name}: {m} treated of {s.size}; needs exactly one treated or one control"
            report.sensitivity_errors.append(msg)
            report.warnings.append(msg)
        if m == 0 or m == s.size:
            report.warnings.append(f"stratum {name}: no variation in assignment")
    return report


def switch_labels(dataset: StratifiedDataset, mask=None) -> StratifiedDataset:
    """Swap treatment labels and negate outcomes.

    ``mask`` selects strata (boolean per stratum); ``None`` switches every
    stratum. Applying the same switch twice is the identity.
    """
    if mask is None:
        mask = [True] * dataset.n_strata
    mask = list(mask)
    if len(mask) != dataset.n_strata:
        raise ValueError("mask must have one entry per stratum")
    strata = tuple(
        Stratum(1 - s.z, -s.y, s.label) if flip else s for s, flip in zip(dataset.strata, mask)
    )
    return StratifiedDataset(strata, dataset.design)


def permute_units(dataset: StratifiedDataset, seed: int) -> StratifiedDataset:
    """Reorder units within each stratum by a seeded random permutation."""
    rng = np.random.default_rng(seed)
    strata = []
    for s in dataset.strata:
        perm = rng.permutation(s.size)
        strata.append(Stratum(s.z[perm], s.y[perm], s.label))
    return StratifiedDataset(tuple(strata), dataset.design)
