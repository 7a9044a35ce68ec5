"""Flat ``key = value`` run configuration shared by config files and flags."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from typing import Callable

from stratquant.errors import StratquantError


class ConfigError(StratquantError, ValueError):
    """Invalid configuration value or file."""


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        v = text.strip().lower()
        if v not in options:
            raise ConfigError(f"expected one of {', '.join(options)}, got {text!r}")
        return v

    return parse


def _int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _float(text: str) -> float:
    try:
        v = float(text.strip())
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None
    if math.isnan(v):
        raise ConfigError("NaN is not allowed")
    return v


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected true or false, got {text!r}")


def _list(item: Callable[[str], object]) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
        if not parts:
            raise ConfigError("expected a comma-separated list")
        return tuple(item(p) for p in parts)

    return parse


def _switch(text: str):
    """``true``/``false`` for all strata, or a 0/1 list with one entry per stratum."""
    v = text.strip().lower()
    if "," in v or ";" in v:
        return tuple(_bool(p) for p in _list(str)(v))
    return _bool(v)


def _optional(parse: Callable[[str], object]) -> Callable[[str], object]:
    def wrapped(text: str):
        return None if text.strip().lower() in ("", "none", "auto") else parse(text)

    return wrapped


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], object]
    help: str


KEYS: tuple[Key, ...] = (
    Key("data", str, "input CSV with header stratum,treated,outcome"),
    Key("out_dir", str, "directory for report.json and limits.csv"),
    Key("analysis", _choice("scre", "sensitivity", "two_sided"), "analysis to run"),
    Key("design", _choice("scre", "matched"), "randomized strata or matched sets"),
    Key("score", _choice("wilcoxon", "stephenson", "custom"), "rank score family"),
    Key("h", _list(_int), "Stephenson h, one value or one per stratum"),
    Key("alpha", _float, "significance level"),
    Key("method", _choice("ilp", "lp"), "exact integer program or its linear relaxation"),
    Key("policy", _choice("treated_first", "controls_first", "first"), "tie-ranking policy"),
    Key("tie_seed", _optional(_int), "seed for the unit permutation used by policy=first"),
    Key("switch_labels", _switch, "swap labels and negate outcomes (true/false or 0/1 per stratum)"),
    Key("null", _choice("auto", "exact", "mc"), "null distribution"),
    Key("budget", _int, "largest assignment count enumerated exactly"),
    Key("mc_reps", _int, "Monte Carlo replications"),
    Key("mc_seed", _optional(_int), "Monte Carlo seed (required for mc)"),
    Key("gamma", _list(_float), "sensitivity parameters"),
    Key("tail", _choice("auto", "gaussian", "finite"), "sensitivity tail bound"),
    Key("gaussian_min_strata", _int, "with tail=auto, use the Gaussian tail from this many sets"),
    Key("thresholds", _list(_float), "thresholds c for the n(c) limits"),
    Key("quantiles", _optional(_list(_int)), "ranks k for Gamma cutoffs and two-sided tests"),
    Key("c", _float, "threshold for Gamma cutoffs and two-sided tests"),
    Key("resolution", _float, "Gamma cutoff resolution"),
    Key("threads", _optional(_int), "worker threads (default: CPU count)"),
)
KEY_MAP = {k.name: k for k in KEYS}
SCORE_PREFIX = "scores."
_NEUTRAL_KEYS = ("out_dir", "threads")


@dataclass
class RunConfig:
    data: str | None = None
    out_dir: str = "."
    analysis: str = "scre"
    design: str = "scre"
    score: str = "wilcoxon"
    h: tuple | None = None
    alpha: float = 0.1
    method: str = "ilp"
    policy: str = "treated_first"
    tie_seed: int | None = None
    switch_labels: object = False
    null: str = "auto"
    budget: int = 10**6
    mc_reps: int = 100_000
    mc_seed: int | None = None
    gamma: tuple = (1.0,)
    tail: str = "auto"
    gaussian_min_strata: int = 100
    thresholds: tuple = (0.0,)
    quantiles: tuple | None = None
    c: float = 0.0
    resolution: float = 0.01
    threads: int | None = None
    scores: dict = field(default_factory=dict)

    def set(self, key: str, text: str) -> None:
        """Parse ``text`` for ``key`` and store it."""
        key = key.strip()
        if key.startswith(SCORE_PREFIX):
            size = _int(key[len(SCORE_PREFIX):])
            self.scores[size] = _list(_float)(text)
            return
        if key not in KEY_MAP:
            raise ConfigError(f"unknown key {key!r}")
        try:
            setattr(self, key, KEY_MAP[key].parse(text))
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def check(self) -> None:
        """Cross-field rules."""
        if not self.data:
            raise ConfigError("no data file given")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.tail == "gaussian" and self.alpha > 0.5:
            raise ConfigError("the Gaussian tail needs alpha <= 0.5")
        if self.null == "mc" and self.mc_seed is None:
            raise ConfigError("null=mc requires mc_seed")
        if self.mc_reps < 1:
            raise ConfigError("mc_reps must be at least 1")
        if self.score == "stephenson" and not self.h:
            raise ConfigError("score=stephenson requires h")
        if self.score == "custom" and not self.scores:
            raise ConfigError("score=custom requires scores.<size> = v1,v2,... entries")
        if any(g < 1 for g in self.gamma):
            raise ConfigError("gamma values must be at least 1")
        if self.resolution <= 0:
            raise ConfigError("resolution must be positive")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.analysis == "two_sided" and not self.quantiles:
            raise ConfigError("analysis=two_sided requires quantiles")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "scores":
                v = {str(n): list(t) for n, t in sorted(v.items())}
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def digest(self) -> str:
        """SHA-256 of the resolved configuration (canonical JSON), leaving out
        keys that cannot change results."""
        d = {k: v for k, v in self.to_dict().items() if k not in _NEUTRAL_KEYS}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def parse_lines(lines, source: str = "<config>") -> list[tuple[str, str, int]]:
    """``(key, value, line_number)`` triples; ``#`` starts a comment."""
    out = []
    for num, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{num}: expected key = value")
        key, value = line.split("=", 1)
        out.append((key.strip(), value.strip(), num))
    return out


def load_config(path: str, config: RunConfig | None = None) -> RunConfig:
    config = RunConfig() if config is None else config
    with open(path, encoding="utf-8") as fh:
        entries = parse_lines(fh, path)
    for key, value, num in entries:
        try:
            config.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{num}: {exc}") from None
    return config
