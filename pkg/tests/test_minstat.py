import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from stratquant import RankScoreSpec, StratifiedDataset, TiePolicy, build_min_table, verify_min_table
from stratquant.inference import candidate_thresholds
from stratquant.minstat import MinStatBuilder, MinStatTable

POLICIES = [TiePolicy.FIRST, TiePolicy.CONTROLS_FIRST, TiePolicy.TREATED_FIRST]

stratum = st.lists(st.tuples(st.integers(0, 1), st.integers(-3, 3)), min_size=1, max_size=5)


def dataset_of(raw):
    return StratifiedDataset.from_strata(
        [([a for a, _ in s], [float(b) for _, b in s]) for s in raw]
    )


@settings(max_examples=60, deadline=None)
@given(st.lists(stratum, min_size=1, max_size=3), st.sampled_from(POLICIES), st.integers(-6, 6), st.integers(2, 4))
def test_table_matches_brute_force(raw, policy, c, h):
    ds = dataset_of(raw)
    spec = RankScoreSpec.stephenson(h)
    table = build_min_table(ds, spec, policy, float(c))
    assert verify_min_table(table, ds, spec)
    for s, t in enumerate(table.t):
        assert np.all(np.diff(t) <= 0)


def test_verify_detects_a_wrong_table(example, stephenson4):
    table = build_min_table(example, stephenson4, TiePolicy.TREATED_FIRST, 0.0)
    broken = MinStatTable(table.c, (table.t[0] + 1.0,) + table.t[1:], table.infinity_surrogate, table.policy)
    assert not verify_min_table(broken, example, stephenson4)


def test_from_deltas():
    table = MinStatTable.from_deltas([[3, 1], [2]])
    assert [list(t) for t in table.t] == [[4, 1, 0], [2, 0]]
    assert table.base == 6 and table.total_units == 3


@settings(max_examples=40, deadline=None)
@given(st.lists(stratum, min_size=1, max_size=4), st.data())
def test_interval_cache_agrees_with_direct_kernel(raw, data):
    ds = dataset_of(raw)
    spec = RankScoreSpec.wilcoxon()
    builder = MinStatBuilder(ds, spec)
    cands = candidate_thresholds(ds)
    points = list(cands) + [float(x) + 0.5 for x in cands] + [-100.0, 100.0]
    c = data.draw(st.sampled_from(points))
    for policy in (TiePolicy.CONTROLS_FIRST, TiePolicy.TREATED_FIRST):
        direct = builder.flat(c, policy)[builder._pad_idx]
        np.testing.assert_array_equal(builder.padded(c, policy), direct)


def test_example_table_with_oracle(example, stephenson4):
    strata = [(list(s.z), list(s.y)) for s in example.strata]
    phis = stephenson4.tables_for(example)
    table = build_min_table(example, stephenson4, TiePolicy.TREATED_FIRST, 0.0)
    N = example.total_units
    # every k with a single stratum: the whole-dataset minimum needs the knapsack
    for s, (st_, phi) in enumerate(zip(strata, phis)):
        for l in range(7):
            want = oracles.min_statistic([st_], [phi], 6 - l, 0.0, oracles.TF)
            assert table.t[s][l] == pytest.approx(want)
    assert N == 18
