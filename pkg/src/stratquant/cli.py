"""Command-line front end.

Reads a ``stratum,treated,outcome`` CSV and a flat ``key = value`` config
(every key is also a ``--flag``; flags win), runs the requested analysis and
writes ``report.json`` and ``limits.csv`` to ``out_dir``.

Exit codes: 0 success, 2 invalid input or configuration, 3 budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from stratquant import __version__
from stratquant.config import KEYS, SCORE_PREFIX, ConfigError, RunConfig, load_config
from stratquant.data import Design, StratifiedDataset, permute_units, switch_labels, validate
from stratquant.errors import BudgetExceeded, InputError, StratquantError
from stratquant.inference import Method, QuantileReport, invert_confidence, two_sided_test
from stratquant.nulldist import NullDistribution, assignment_count, exact_null, mc_null
from stratquant.scores import RankScoreSpec, TiePolicy
from stratquant.sensitivity import Tail, gamma_cutoff, sensitivity_confidence

EXIT_OK, EXIT_INVALID, EXIT_BUDGET = 0, 2, 3
HEADER = ["stratum", "treated", "outcome"]
THREADS_ENV = "STRATQUANT_THREADS"


def ingest_csv(path: str, design: Design = Design.SCRE) -> StratifiedDataset:
    """Parse a ``stratum,treated,outcome`` file; unit order is file order."""
    ids, z, y = [], [], []
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header != HEADER:
            extra = [h for h in header if h not in HEADER]
            detail = f"unknown column {extra[0]!r}" if extra else f"got {','.join(header)}"
            raise InputError(f"{path}:1: header must be {','.join(HEADER)} ({detail})")
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise InputError(f"{path}:{line}: expected 3 fields, got {len(row)}")
            sid, t, out = (cell.strip() for cell in row)
            if not sid:
                raise InputError(f"{path}:{line}: empty stratum")
            if t not in ("0", "1"):
                raise InputError(f"{path}:{line}: treated must be 0 or 1, got {t!r}")
            try:
                v = float(out)
            except ValueError:
                raise InputError(f"{path}:{line}: outcome {out!r} is not a number") from None
            if not math.isfinite(v):
                raise InputError(f"{path}:{line}: outcome must be finite, got {out!r}")
            ids.append(sid)
            z.append(int(t))
            y.append(v)
    if not ids:
        raise InputError(f"{path}: empty dataset")
    return StratifiedDataset.from_arrays(ids, np.array(z, dtype=np.int8), y, design)


def build_spec(cfg: RunConfig) -> RankScoreSpec:
    if cfg.score == "wilcoxon":
        return RankScoreSpec.wilcoxon()
    if cfg.score == "stephenson":
        return RankScoreSpec.stephenson(cfg.h[0] if len(cfg.h) == 1 else cfg.h)
    return RankScoreSpec.custom(cfg.scores)


def resolve_threads(cfg: RunConfig, from_flag: bool) -> int:
    """``--threads`` flag, then the environment, then the config, then CPU count."""
    if from_flag and cfg.threads:
        return cfg.threads
    env = os.environ.get(THREADS_ENV, "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be at least 1")
        return n
    return cfg.threads or os.cpu_count() or 1


def build_null(cfg: RunConfig, dataset: StratifiedDataset, spec: RankScoreSpec) -> NullDistribution:
    if cfg.null == "exact":
        return exact_null(dataset, spec, budget=cfg.budget)
    if cfg.null == "mc" or assignment_count(dataset) > cfg.budget:
        if cfg.mc_seed is None:
            raise BudgetExceeded(
                f"{assignment_count(dataset)} assignments exceed budget {cfg.budget}; "
                "set mc_seed to use a Monte Carlo null"
            )
        return mc_null(dataset, spec, reps=cfg.mc_reps, seed=cfg.mc_seed)
    return exact_null(dataset, spec, budget=cfg.budget)


def resolve_tail(cfg: RunConfig, dataset: StratifiedDataset) -> Tail:
    if cfg.tail != "auto":
        return Tail(cfg.tail)
    pairs = bool(np.all(dataset.sizes == 2))
    if pairs or dataset.n_strata < cfg.gaussian_min_strata:
        return Tail.FINITE
    return Tail.GAUSSIAN


def _num(x):
    """JSON-safe float: minus infinity becomes null, plus infinity ``"inf"``."""
    x = float(x)
    if math.isinf(x):
        return None if x < 0 else "inf"
    return x


def _limit_rows(report: QuantileReport, gamma=None):
    for k, v in enumerate(report.lower, start=1):
        row = [str(k), repr(float(v))]
        if gamma is not None:
            row.append(repr(float(gamma)))
        yield row


def write_limits(path: str, reports, with_gamma: bool) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "lower_limit", "gamma"] if with_gamma else ["k", "lower_limit"])
        for rep in reports:
            w.writerows(_limit_rows(rep, rep.gamma if with_gamma else None))


def _report_json(report: QuantileReport) -> dict:
    d = report.to_dict()
    d["quantiles"] = [dict(q, lower_limit=_num(report.lower[q["k"] - 1])) for q in d["quantiles"]]
    return d


def _sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def run(cfg: RunConfig, threads: int = 1, log=sys.stderr) -> dict:
    """Execute ``cfg``; returns the report dictionary after writing artifacts."""
    start = time.perf_counter()
    cfg.check()
    design = Design.MATCHED_SETS if cfg.analysis == "sensitivity" or cfg.design == "matched" else Design.SCRE
    dataset = ingest_csv(cfg.data, design)

    warnings = []
    if cfg.switch_labels is True:
        dataset = switch_labels(dataset)
    elif isinstance(cfg.switch_labels, tuple):
        if len(cfg.switch_labels) != dataset.n_strata:
            raise ConfigError(
                f"switch_labels lists {len(cfg.switch_labels)} entries for {dataset.n_strata} strata"
            )
        dataset = switch_labels(dataset, cfg.switch_labels)
    else:
        treated = int(dataset.z.sum())
        controls = dataset.total_units - treated
        if controls > treated:
            warnings.append(
                f"controls ({controls}) outnumber treated units ({treated}); lower limits may be "
                "uninformative, consider switch_labels = true"
            )

    check = validate(dataset)
    if not check.ok:
        raise InputError("; ".join(check.errors))
    if cfg.analysis == "sensitivity" and not check.ok_for_sensitivity:
        raise InputError("; ".join(check.sensitivity_errors))
    warnings.extend(w for w in check.warnings if w not in check.sensitivity_errors)

    policy = TiePolicy(cfg.policy)
    if policy is TiePolicy.FIRST:
        if cfg.tie_seed is None:
            raise ConfigError("policy=first requires tie_seed")
        dataset = permute_units(dataset, cfg.tie_seed)
    spec = build_spec(cfg)
    method = Method(cfg.method)
    for w in warnings:
        print(f"warning: {w}", file=log)

    result: dict = {"analysis": cfg.analysis}
    if cfg.analysis == "sensitivity":
        tail = resolve_tail(cfg, dataset)
        gammas = sorted(set(cfg.gamma))

        def one(g):
            return sensitivity_confidence(
                dataset, spec, cfg.alpha, g, tail, method, policy, cfg.thresholds
            )

        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(one, gammas))
        result["tail"] = tail.value
        result["reports"] = [_report_json(r) for r in reports]
        cutoffs = []
        for k in cfg.quantiles or ():
            gc = gamma_cutoff(
                dataset, spec, cfg.alpha, k, cfg.c, tail, method, cfg.resolution, policy=policy
            )
            cutoffs.append(
                {
                    "k": k,
                    "c": cfg.c,
                    "cutoff": str(gc),
                    "value": gc.value,
                    "below_one": gc.below_one,
                    "capped": gc.capped,
                }
            )
        result["gamma_cutoffs"] = cutoffs
        null_info = {"mode": "bound" if tail is Tail.FINITE else "gaussian"}
        with_gamma = True
    else:
        null = build_null(cfg, dataset, spec)
        report = invert_confidence(dataset, spec, policy, cfg.alpha, null, method, cfg.thresholds)
        reports = [report]
        result["reports"] = [_report_json(report)]
        if cfg.analysis == "two_sided":
            tests = []
            for k in cfg.quantiles:
                t = two_sided_test(dataset, spec, k, cfg.c, cfg.alpha, null, method, policy)
                tests.append(
                    {"k": k, "c": cfg.c, "p_right": t.p_right, "p_left": t.p_left, "reject": t.reject}
                )
            result["two_sided"] = tests
        null_info = {"mode": null.mode.value, "reps": null.reps, "seed": null.seed}
        with_gamma = False

    os.makedirs(cfg.out_dir, exist_ok=True)
    write_limits(os.path.join(cfg.out_dir, "limits.csv"), reports, with_gamma)
    doc = {
        "version": __version__,
        "dataset": {
            "N": dataset.total_units,
            "strata": dataset.n_strata,
            "treated": int(dataset.z.sum()),
            "design": dataset.design.value,
        },
        "config": cfg.to_dict(),
        "null": null_info,
        "warnings": warnings,
        "result": result,
        "provenance": {
            "config_sha256": cfg.digest(),
            "data_sha256": _sha256(cfg.data),
            "seed": {"mc_seed": cfg.mc_seed, "tie_seed": cfg.tie_seed},
            "method": method.value,
            "runtime_seconds": time.perf_counter() - start,
        },
    }
    with open(os.path.join(cfg.out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")
    return doc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stratquant",
        description="Randomization inference for quantiles of individual treatment effects.",
        epilog=f"Exit codes: 0 success, 2 invalid input or config, 3 budget exceeded. "
        f"{THREADS_ENV} overrides the configured thread count.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", metavar="FILE", help="flat key = value config file")
    for key in KEYS:
        p.add_argument(f"--{key.name.replace('_', '-')}", dest=key.name, metavar="VALUE", help=key.help)
    p.add_argument(
        "--scores",
        action="append",
        default=[],
        metavar="SIZE=V1,V2,...",
        help="custom scores for strata of one size (repeatable)",
    )
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        for key in KEYS:
            value = getattr(args, key.name)
            if value is not None:
                cfg.set(key.name, value)
        for item in args.scores:
            size, sep, vals = item.partition("=")
            if not sep:
                raise ConfigError(f"--scores expects SIZE=V1,V2,..., got {item!r}")
            cfg.set(SCORE_PREFIX + size, vals)
        threads = resolve_threads(cfg, args.threads is not None)
        run(cfg, threads)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (StratquantError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
