import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratquant import (
    Design,
    EffectHypothesis,
    Stratum,
    StratifiedDataset,
    permute_units,
    switch_labels,
    validate,
)


def strata_lists(max_strata=4, max_size=5):
    unit = st.tuples(st.integers(0, 1), st.integers(-20, 20).map(lambda v: v / 2))
    stratum = st.lists(unit, min_size=1, max_size=max_size)
    return st.lists(stratum, min_size=1, max_size=max_strata)


def to_dataset(raw):
    return StratifiedDataset.from_strata(
        [(np.array([u[0] for u in s]), np.array([u[1] for u in s])) for s in raw]
    )


def test_stratum_rejects_bad_assignments():
    with pytest.raises(ValueError, match="0/1"):
        Stratum(np.array([0, 2]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError, match="assignments but"):
        Stratum(np.array([0, 1]), np.array([1.0]))


def test_stratum_arrays_are_read_only():
    s = Stratum([1, 0], [1.0, 2.0])
    with pytest.raises(ValueError):
        s.y[0] = 5.0
    assert (s.size, s.treated_count, s.control_count) == (2, 1, 1)


def test_from_arrays_keeps_first_appearance_and_file_order():
    ds = StratifiedDataset.from_arrays(["b", "a", "b", "a"], [1, 0, 0, 1], [1.0, 2.0, 3.0, 4.0])
    assert [s.label for s in ds.strata] == ["b", "a"]
    np.testing.assert_array_equal(ds.strata[0].y, [1.0, 3.0])
    np.testing.assert_array_equal(ds.strata[1].z, [0, 1])
    assert ds.total_units == 4 and ds.n_strata == 2


def test_from_arrays_length_mismatch():
    with pytest.raises(ValueError):
        StratifiedDataset.from_arrays([1, 1], [1], [0.0, 1.0])


def test_split_roundtrip(example):
    pieces = example.split(example.y)
    assert [p.size for p in pieces] == [6, 6, 6]
    np.testing.assert_array_equal(np.concatenate(pieces), example.y)
    with pytest.raises(ValueError):
        example.split(np.zeros(5))


def test_effect_hypothesis_counts_effects_above_c():
    h = EffectHypothesis(k=3, c=0.0)
    assert h.contains([-1, 0, 0, 1])  # one above, N - k = 1
    assert not h.contains([-1, 1, 1, 1])
    assert EffectHypothesis(0, 0.0).contains([5, 5])


def test_validate_flags_problems():
    ds = StratifiedDataset.from_strata([([1, 1], [1.0, 2.0]), ([1, 0], [np.nan, 0.0])])
    rep = validate(ds)
    assert not rep.ok
    assert any("non-finite" in e for e in rep.errors)
    assert any("no variation" in w for w in rep.warnings)
    assert not validate(StratifiedDataset(())).ok


def test_validate_matched_sets_need_one_treated_or_one_control():
    ok = StratifiedDataset.from_strata([([1, 0, 0], [1, 2, 3]), ([0, 1, 1], [1, 2, 3])], Design.MATCHED_SETS)
    bad = StratifiedDataset.from_strata([([1, 1, 0, 0], [1, 2, 3, 4])], Design.MATCHED_SETS)
    assert validate(ok).ok_for_sensitivity
    rep = validate(bad)
    assert rep.ok and not rep.ok_for_sensitivity


@settings(max_examples=50, deadline=None)
@given(strata_lists())
def test_switch_labels_is_an_involution(raw):
    ds = to_dataset(raw)
    once = switch_labels(ds)
    np.testing.assert_array_equal(once.z, 1 - ds.z)
    np.testing.assert_array_equal(once.y, -ds.y)
    assert switch_labels(once) == ds


def test_switch_labels_mask(example):
    out = switch_labels(example, [True, False, False])
    assert out.strata[1] == example.strata[1]
    np.testing.assert_array_equal(out.strata[0].y, -example.strata[0].y)
    with pytest.raises(ValueError):
        switch_labels(example, [True])


@settings(max_examples=50, deadline=None)
@given(strata_lists(), st.integers(0, 2**32 - 1))
def test_permute_units_keeps_each_stratum_multiset(raw, seed):
    ds = to_dataset(raw)
    perm = permute_units(ds, seed)
    assert perm == permute_units(ds, seed)
    for a, b in zip(ds.strata, perm.strata):
        assert sorted(zip(a.z, a.y)) == sorted(zip(b.z, b.y))
