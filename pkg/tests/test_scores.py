import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from stratquant import RankScoreSpec, StratifiedDataset, TiePolicy, ranks, stratified_statistic

POLICIES = {
    TiePolicy.FIRST: oracles.FIRST,
    TiePolicy.CONTROLS_FIRST: oracles.CF,
    TiePolicy.TREATED_FIRST: oracles.TF,
}


def test_stephenson_scores_are_binomials():
    phi = RankScoreSpec.stephenson(3).table(6)
    assert list(phi) == [math.comb(r - 1, 2) for r in range(1, 7)]


def test_stephenson_two_is_shifted_wilcoxon():
    np.testing.assert_array_equal(
        RankScoreSpec.stephenson(2).table(7), RankScoreSpec.wilcoxon().table(7) - 1
    )


def test_per_stratum_h():
    spec = RankScoreSpec.stephenson([2, 3])
    assert list(spec.table(4, 1)) == [0, 0, 1, 3]
    with pytest.raises(ValueError, match="stratum 3"):
        spec.table(4, 2)


def test_score_spec_validation():
    with pytest.raises(ValueError):
        RankScoreSpec.stephenson(1)
    with pytest.raises(ValueError, match="nondecreasing"):
        RankScoreSpec.custom({3: [0, 2, 1]})
    with pytest.raises(ValueError, match="entries"):
        RankScoreSpec.custom({3: [0, 1]})
    with pytest.raises(ValueError, match="size 4"):
        RankScoreSpec.custom({3: [0, 1, 2]}).table(4)


def test_concavity():
    assert RankScoreSpec.wilcoxon().is_concave(5)
    assert not RankScoreSpec.stephenson(3).is_concave(5)


def test_ranks_tie_policies():
    y, z = [1.0, 1.0, 0.0], [0, 1, 1]
    assert list(ranks(y, z, TiePolicy.FIRST)) == [2, 3, 1]
    assert list(ranks(y, z, TiePolicy.CONTROLS_FIRST)) == [2, 3, 1]
    assert list(ranks(y, z, TiePolicy.TREATED_FIRST)) == [3, 2, 1]


units = st.lists(st.tuples(st.integers(0, 1), st.integers(0, 3)), min_size=1, max_size=7)


@settings(max_examples=100, deadline=None)
@given(units, st.sampled_from(list(POLICIES)))
def test_ranks_match_oracle(u, policy):
    z = [a for a, _ in u]
    y = [float(b) for _, b in u]
    assert list(ranks(y, z, policy)) == oracles.rank_units(y, z, POLICIES[policy])


@settings(max_examples=60, deadline=None)
@given(st.lists(units, min_size=1, max_size=3), st.sampled_from(list(POLICIES)), st.integers(2, 4))
def test_stratified_statistic_matches_oracle(raw, policy, h):
    strata = [([a for a, _ in s], [float(b) for _, b in s]) for s in raw]
    ds = StratifiedDataset.from_strata(strata)
    spec = RankScoreSpec.stephenson(h)
    phis = spec.tables_for(ds)
    want = oracles.statistic(strata, phis, POLICIES[policy])
    assert stratified_statistic(ds, ds.y, spec, policy) == want
    assert stratified_statistic(ds, ds.split(ds.y), spec, policy) == want
