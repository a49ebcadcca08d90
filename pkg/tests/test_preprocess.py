import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from curvecorrect.errors import InvalidArgumentError
from curvecorrect.observation_sim import AccuracyRecord, default_profile, log_grid, preset, run_experiment1
from curvecorrect.observation_sim import ThresholdProfile
from curvecorrect.preprocess import (
    FilterDisabledWarning,
    estimate_thresholds,
    fit_quantile_line,
    group_moments,
    quantile_filter,
    raw_thresholds,
)
from curvecorrect.stats_core import biased_mean, sigma_n

GRID = log_grid(20, 1000, 12)


def recs(pairs):
    return [AccuracyRecord(n, y, f"s{i}") for i, (n, y) in enumerate(pairs)]


records_st = st.lists(
    st.tuples(st.sampled_from([10, 20, 35, 50, 80, 120, 300, 1000]), st.floats(0.3, 1.0)),
    min_size=1, max_size=60,
).map(recs)


# --- thresholds ----------------------------------------------------------------

def test_threshold_window_minimum():
    prof = estimate_thresholds(recs([(20, 0.70), (20, 0.72), (30, 0.68)]))
    assert prof.pairs() == [(20.0, 0.68), (30.0, 0.68)]


def test_threshold_single_n():
    prof = estimate_thresholds(recs([(50, 0.9), (50, 0.7), (50, 0.8)]))
    assert prof.pairs() == [(50.0, 0.7)]


def test_threshold_first_window_and_running_min():
    # windows {10,20} -> 0.8, {20,30} -> 0.6, {30,40} -> 0.7
    prof = estimate_thresholds(recs([(10, 0.85), (20, 0.8), (30, 0.6), (40, 0.9), (40, 0.7)]))
    assert prof.gammas == (0.8, 0.8, 0.6, 0.6)


def test_threshold_empty_rejected():
    with pytest.raises(InvalidArgumentError):
        estimate_thresholds([])


@given(records_st, st.integers(1, 4), st.integers(1, 3))
def test_threshold_profile_nonincreasing(rs, wl, stride):
    prof = estimate_thresholds(rs, wl, stride)
    assert prof.is_nonincreasing()
    assert set(prof.ns) == {float(r.n) for r in rs}
    assert min(prof.gammas) == min(r.accuracy for r in rs)


@given(records_st)
def test_thresholds_order_invariant(rs):
    assert estimate_thresholds(rs) == estimate_thresholds(list(reversed(rs)))


def test_raw_thresholds():
    prof = raw_thresholds(recs([(10, 0.5), (10, 0.7), (20, 0.9)]))
    assert prof.pairs() == [(10.0, 0.5), (20.0, 0.9)]


@pytest.mark.parametrize("seed", range(10))
def test_estimated_threshold_never_undershoots_true(seed):
    p = preset(1).params
    true_prof = default_profile(p, GRID)
    rs = run_experiment1(1, GRID, 100, true_prof, seed=seed)
    # per-size minima can never fall below that size's cut
    for n, g in estimate_thresholds(rs, window_len=1).pairs():
        assert g >= true_prof.at(n)
    # a two-size window pools records from its larger size, so its minimum
    # is bounded by the cut at the window's upper end
    for m in group_moments(rs):
        assert estimate_thresholds(rs).at(m.n_lo) >= true_prof.at(m.n_hi)


# --- grouped moments -----------------------------------------------------------

def test_group_two_point_variance():
    (m,) = group_moments(recs([(100, 0.8), (100, 0.9)]))
    assert m.y_bar == pytest.approx(0.85)
    assert m.s2 == pytest.approx(0.005)
    assert m.count == 2


def test_group_geometric_n():
    (m,) = group_moments(recs([(100, 0.8), (200, 0.9)]))
    assert m.n_repr == pytest.approx(math.sqrt(100 * 200))
    assert (m.n_lo, m.n_hi) == (100.0, 200.0)


def test_singleton_window_has_no_variance():
    (m,) = group_moments(recs([(100, 0.8)]), window_len=1)
    assert m.s2 is None and m.count == 1


@given(records_st, st.integers(1, 3))
def test_group_invariants(rs, wl):
    for m in group_moments(rs, wl):
        ys = [r.accuracy for r in rs if m.n_lo <= r.n <= m.n_hi]
        assert m.count == len(ys) >= 1
        assert min(ys) - 1e-12 <= m.y_bar <= max(ys) + 1e-12
        assert (m.s2 is None) == (m.count == 1)
        assert m.n_lo <= m.n_repr <= m.n_hi + 1e-9


def test_group_means_match_biased_mean_without_truncation():
    p = preset(1).params
    rs = run_experiment1(p, GRID, 100, ThresholdProfile.unbounded(GRID), seed=3)
    rs = [r for r in rs if not r.clipped]
    for m in group_moments(rs):
        ns = [r.n for r in rs if m.n_lo <= r.n <= m.n_hi]
        expect = np.mean([biased_mean(p, n) for n in ns])
        var = np.mean([sigma_n(p.c1, n) ** 2 for n in ns])
        assert abs(m.y_bar - expect) < 4 * math.sqrt(var / m.count)
        # geometric-mean n is a close stand-in inside a narrow log window
        assert abs(biased_mean(p, m.n_repr) - expect) < 0.01


# --- quantile regression -------------------------------------------------------

def _lp_quantile_line(x, y, tau):
    """Exact pinball-loss minimizer via the standard linear program."""
    n = len(y)
    # variables: a, b, u+ (n), u- (n); y = a + b x + u+ - u-
    c = np.concatenate([[0, 0], np.full(n, tau), np.full(n, 1 - tau)])
    A_eq = np.hstack([np.ones((n, 1)), x[:, None], np.eye(n), -np.eye(n)])
    bounds = [(None, None), (None, None)] + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs")
    return res.x[0], res.x[1]


def _pinball(x, y, a, b, tau):
    r = y - a - b * x
    return np.mean(np.maximum(tau * r, (tau - 1) * r))


@pytest.mark.parametrize("seed", range(4))
def test_quantile_line_matches_lp(seed):
    rng = np.random.default_rng(seed)
    x = np.log(rng.integers(20, 1000, 80).astype(float))
    y = 0.9 - 0.05 * x + 0.05 * rng.standard_normal(80)
    a, b = fit_quantile_line(x, y, 0.1)
    a0, b0 = _lp_quantile_line(x, y, 0.1)
    assert _pinball(x, y, a, b, 0.1) <= _pinball(x, y, a0, b0, 0.1) * 1.01 + 1e-9


def test_filter_identical_records():
    rs = recs([(n, 0.8) for n in (20, 30, 40, 50, 60) for _ in range(3)])
    kept, out = quantile_filter(rs)
    assert out == [] and len(kept) == 15


def test_filter_tau_zero():
    rng = np.random.default_rng(0)
    rs = recs([(int(n), float(y)) for n, y in zip(rng.integers(20, 500, 40), rng.uniform(0.5, 1, 40))])
    kept, out = quantile_filter(rs, tau=0.0)
    assert out == [] and len(kept) == 40


def test_filter_disabled_below_ten():
    rs = recs([(20 + i, 0.8) for i in range(9)])
    with pytest.warns(FilterDisabledWarning):
        kept, out = quantile_filter(rs)
    assert len(kept) == 9 and out == []


def test_filter_catches_planted_outliers():
    rng = np.random.default_rng(4)
    ns = np.exp(rng.uniform(math.log(20), math.log(1000), 100)).astype(int)
    curve = 0.8 - 0.5 * ns ** -0.5
    y = curve + 0.01 * rng.standard_normal(100)
    planted = rng.choice(100, 8, replace=False)
    y[planted] -= 0.2
    rs = recs(list(zip(ns.tolist(), y.tolist())))
    kept, out = quantile_filter(rs)
    planted_ids = {f"s{i}" for i in planted}
    assert len(planted_ids & {r.study_id for r in out}) >= 7


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_filter_partition_and_rate(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(10, 80))
    rs = recs([(int(n), float(y)) for n, y in zip(rng.integers(10, 2000, m), rng.uniform(0.4, 1.0, m))])
    kept, out = quantile_filter(rs)
    assert sorted(r.study_id for r in kept + out) == sorted(r.study_id for r in rs)
    assert len(out) / len(rs) <= 0.1 + 0.05


def test_filter_idempotent_on_kept():
    rs = run_experiment1(1, GRID, 100, seed=1)
    kept, _ = quantile_filter(rs)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        kept2, out2 = quantile_filter(kept)
    # the quantile line re-centres on the survivors, so a tau-share drops again;
    # it must not cascade beyond that
    assert len(out2) <= 0.1 * len(kept) + 0.01 * len(kept) + 1


@pytest.mark.xfail(strict=True, reason="a refitted tau-quantile line always leaves ~tau of the survivors below it")
def test_filter_idempotent_within_one_percent():
    rs = run_experiment1(1, GRID, 100, seed=1)
    kept, _ = quantile_filter(rs)
    _, out2 = quantile_filter(kept)
    assert len(out2) <= 0.01 * len(kept)
