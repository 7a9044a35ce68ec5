"""Randomization inference for quantiles of individual treatment effects.

Covers stratified randomized experiments and matched observational studies:
valid p-values for hypotheses on effect quantiles, simultaneous lower
confidence limits for every quantile, and Gamma-sensitivity analysis.
"""

from stratquant.data import (
    Design,
    EffectHypothesis,
    Stratum,
    StratifiedDataset,
    ValidationReport,
    permute_units,
    switch_labels,
    validate,
)
from stratquant.errors import BudgetExceeded, DesignError, StratquantError
from stratquant.inference import (
    Method,
    QuantileReport,
    invert_confidence,
    test_quantile,
    test_quantile_bounds,
    two_sided_test,
)
from stratquant.knapsack import (
    OptResult,
    hull_transform,
    solve_brute_force,
    solve_dp_ilp,
    solve_greedy_lp,
    solve_naive_greedy,
)
from stratquant.minstat import MinStatTable, build_min_table, verify_min_table
from stratquant.nulldist import NullDistribution, exact_null, mc_null, pvalue
from stratquant.scores import (
    RankScoreSpec,
    TiePolicy,
    ranks,
    stratified_statistic,
    stratum_statistic,
)
from stratquant.sensitivity import (
    Tail,
    finite_sample_pvalue,
    gamma_cutoff,
    gaussian_tail_pvalue,
    sensitivity_confidence,
    worst_case_moments,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded",
    "Design",
    "DesignError",
    "EffectHypothesis",
    "Method",
    "MinStatTable",
    "NullDistribution",
    "OptResult",
    "QuantileReport",
    "RankScoreSpec",
    "Stratum",
    "StratifiedDataset",
    "StratquantError",
    "Tail",
    "TiePolicy",
    "ValidationReport",
    "build_min_table",
    "exact_null",
    "finite_sample_pvalue",
    "gamma_cutoff",
    "gaussian_tail_pvalue",
    "hull_transform",
    "invert_confidence",
    "mc_null",
    "permute_units",
    "pvalue",
    "ranks",
    "sensitivity_confidence",
    "solve_brute_force",
    "solve_dp_ilp",
    "solve_greedy_lp",
    "solve_naive_greedy",
    "stratified_statistic",
    "stratum_statistic",
    "switch_labels",
    "test_quantile",
    "test_quantile_bounds",
    "two_sided_test",
    "validate",
    "verify_min_table",
    "worst_case_moments",
]
