import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionkit.data_model import DataTable
from fusionkit.errors import RecodeError
from fusionkit.recode import (
    ACTIVITY_STATUS_RULE, DEFAULT_AGE_BREAKPOINTS, DENSITY_RULE, MAIN_SOURCE_RULE, IntervalBin,
    MapGroups, QuantileBin, RandomCategory, interval_bin, map_groups, max_of_columns, quantile_bin,
    random_category, rule_from_dict, rule_to_dict,
)


def rank_oracle(x, k):
    # count of strictly smaller values, scaled to k bins
    x = np.asarray(x, dtype=float)
    n = x.size
    return np.array([np.floor(np.sum(x < v) * k / n) + 1 for v in x])


def test_quantile_distinct_values_one_per_bin():
    np.testing.assert_array_equal(quantile_bin([10, 20, 30, 40, 50], 5), [1, 2, 3, 4, 5])


def test_quantile_ties_share_code():
    codes = quantile_bin([1, 1, 1, 2, 3], 2)
    assert codes[0] == codes[1] == codes[2]
    np.testing.assert_array_equal(codes, rank_oracle([1, 1, 1, 2, 3], 2))


def test_quantile_constant_vector_rejected():
    with pytest.raises(RecodeError, match="constant"):
        quantile_bin([3, 3, 3, 3, 3], 5)
    with pytest.raises(RecodeError):
        quantile_bin([1.0, np.nan, 2.0], 2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=2, max_size=60), st.integers(2, 8))
def test_quantile_matches_rank_oracle_and_is_monotone(values, k):
    x = np.asarray(values, dtype=float)
    if np.all(x == x[0]):
        return
    codes = quantile_bin(x, k)
    np.testing.assert_array_equal(codes, rank_oracle(x, k))
    order = np.argsort(x, kind="stable")
    assert np.all(np.diff(codes[order]) >= 0)
    assert codes.min() >= 1 and codes.max() <= k


@settings(max_examples=50, deadline=None)
@given(st.integers(20, 500), st.integers(2, 10))
def test_quantile_bins_balanced_without_ties(n, k):
    x = np.random.default_rng(n).permutation(n).astype(float)
    counts = np.bincount(quantile_bin(x, k).astype(int))[1:]
    assert counts.max() - counts.min() <= 1


def test_interval_bins_right_open():
    x = [16, 25.9, 26, 35, 86, 99, np.nan]
    out = interval_bin(x, DEFAULT_AGE_BREAKPOINTS)
    np.testing.assert_array_equal(out[:6], [1, 1, 2, 2, 8, 8])
    assert np.isnan(out[6])
    assert IntervalBin(DEFAULT_AGE_BREAKPOINTS).levels == tuple(range(1, 9))
    with pytest.raises(RecodeError):
        IntervalBin((3.0, 1.0))


def test_activity_status_grouping():
    np.testing.assert_array_equal(map_groups([1, 4, 5, 7], ACTIVITY_STATUS_RULE), [1, 1, 2, 3])
    np.testing.assert_array_equal(map_groups([6, 9, 11], ACTIVITY_STATUS_RULE), [9, 9, 9])
    np.testing.assert_array_equal(map_groups([10, 8, np.nan], ACTIVITY_STATUS_RULE), [4, 5, 9])
    assert map_groups([], ACTIVITY_STATUS_RULE).size == 0


def test_map_groups_uncovered_level():
    rule = MapGroups({1: 1, 2: 1})
    with pytest.raises(RecodeError, match="not covered"):
        map_groups([3], rule)
    assert map_groups([3], MapGroups({1: 1}, default=7))[0] == 7


def test_density_shares():
    codes = random_category(100_000, DENSITY_RULE, 2015)
    shares = np.array([(codes == c).mean() for c in (1, 2, 3)])
    np.testing.assert_allclose(shares, (0.358, 0.418, 0.224), atol=0.01)
    assert random_category(0, DENSITY_RULE, 1).size == 0
    np.testing.assert_array_equal(random_category(50, RandomCategory((1, 2, 3), (1.0, 0.0, 0.0)), 1), 1)
    with pytest.raises(RecodeError):
        RandomCategory((1, 2), (0.5, 0.6))


def income_table(rows):
    names = [c for cols, _ in MAIN_SOURCE_RULE.groups for c in cols]
    data = {c: [r.get(c, 0.0) for r in rows] for c in names}
    return DataTable(data)


def test_main_source_of_income():
    t = income_table([{"PY010G": 30000.0, "PY100G": 500.0},
                      {"PY100G": 12000.0, "PY010G": 100.0},
                      {},
                      {"PY050G": 10.0, "PY090G": 10.0}])
    # last row ties between self-employment and unemployment benefits; first group wins
    np.testing.assert_array_equal(max_of_columns(t, MAIN_SOURCE_RULE), [1, 2, 9, 1])


def test_max_of_columns_losses_only_is_unspecified():
    t = income_table([{"PY050G": -5.0}, {"PY050G": -5.0, "PY100G": 1.0}])
    np.testing.assert_array_equal(max_of_columns(t, MAIN_SOURCE_RULE), [9, 2])


def test_max_of_columns_missing_value():
    t = income_table([{"PY010G": np.nan}])
    with pytest.raises(RecodeError, match="missing"):
        max_of_columns(t, MAIN_SOURCE_RULE)


@pytest.mark.parametrize("rule", [QuantileBin(5), IntervalBin((1.0, 2.0)), MapGroups({1: 2}, default=3, missing=9),
                                  RandomCategory((1, 2), (0.25, 0.75)), MAIN_SOURCE_RULE])
def test_rule_dict_roundtrip(rule):
    assert rule_from_dict(rule_to_dict(rule)) == rule


def test_rule_presets():
    assert rule_from_dict({"type": "map", "preset": "activity_status"}) == ACTIVITY_STATUS_RULE
    assert rule_from_dict({"type": "random", "preset": "population_density"}) == DENSITY_RULE
    assert rule_from_dict({"type": "age_bands"}) == IntervalBin(DEFAULT_AGE_BREAKPOINTS)
    with pytest.raises(RecodeError, match="unknown"):
        rule_from_dict({"type": "magic"})
