import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvecorrect.errors import InvalidArgumentError
from curvecorrect.observation_sim import preset
from curvecorrect.stats_core import (
    BOUNDS,
    CurveParams,
    biased_mean,
    inv_mills,
    normal_cdf,
    normal_pdf,
    observed_mean,
    observed_moments_batch,
    observed_var,
    sigma_n,
    true_curve,
    truncated_mean,
    truncated_var,
)

from oracles import invert_cdf, mc_truncated_moments, mp_cdf, mp_inv_mills, mp_power_curve

P1 = preset(1).params
P2 = preset(2).params

finite_z = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


# --- normal primitives -------------------------------------------------------

def test_pdf_at_zero():
    assert normal_pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    assert normal_pdf(0.0) == pytest.approx(0.3989422804, abs=1e-10)


def test_pdf_symmetric_and_underflows():
    assert normal_pdf(1.0) == normal_pdf(-1.0)
    assert normal_pdf(40.0) == 0.0


@pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
def test_non_finite_input_rejected(bad):
    with pytest.raises(InvalidArgumentError):
        normal_pdf(bad)
    with pytest.raises(InvalidArgumentError):
        normal_cdf(bad)


def test_cdf_known_points():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)
    assert 0.0 < normal_cdf(-10.0) < 1e-20


def test_cdf_inverts_at_975():
    # bisection on an independent 50-digit CDF recovers the same quantile
    z = invert_cdf(0.975)
    assert normal_cdf(z) == pytest.approx(0.975, abs=1e-12)


def test_cdf_accuracy_against_mpmath():
    zs = np.linspace(-8, 8, 321)
    err = max(abs(normal_cdf(z) - mp_cdf(z)) for z in zs)
    assert err <= 1e-12


@given(st.floats(-30, 30), st.floats(-30, 30))
def test_cdf_monotone(a, b):
    lo, hi = sorted((a, b))
    assert normal_cdf(lo) <= normal_cdf(hi)


# --- inverse Mills ratio -----------------------------------------------------

def test_inv_mills_examples():
    assert inv_mills(0.0) == pytest.approx(0.7978845608, abs=1e-10)
    assert 0.0 <= inv_mills(-30.0) < 1e-190
    assert inv_mills(20.0) == pytest.approx(20.0 + 1 / 20.0, abs=1e-3)


@pytest.mark.parametrize("z", [-37.0, -5.0, -1.0, 0.0, 0.5, 3.0, 7.9, 8.0, 8.1, 12.0, 30.0, 200.0, 1e4])
def test_inv_mills_matches_mpmath(z):
    assert inv_mills(z) == pytest.approx(mp_inv_mills(z), rel=1e-11)


def test_inv_mills_continuous_at_switch():
    below, above = inv_mills(8.0 - 1e-9), inv_mills(8.0 + 1e-9)
    assert abs(above - below) < 1e-8


@given(finite_z)
def test_inv_mills_exceeds_z_and_zero(z):
    v = inv_mills(z)
    assert math.isfinite(v)
    assert v > 0 or z < -37  # exp underflow makes the ratio exactly 0 deep in the left tail
    assert v > z


@given(st.floats(-20, 1e5), st.floats(1e-3, 10))
def test_inv_mills_increasing(z, dz):
    assert inv_mills(z + dz) > inv_mills(z)


def test_inv_mills_excess_vanishes():
    excess = [inv_mills(z) - z for z in (10.0, 100.0, 1e3, 1e5)]
    assert all(a > b for a, b in zip(excess, excess[1:]))
    assert excess[-1] < 1e-4


def test_inv_mills_vectorized():
    z = np.array([-3.0, 0.0, 9.0, 1e6])
    out = inv_mills(z)
    assert out.shape == (4,)
    assert np.all(np.isfinite(out))
    assert out[1] == inv_mills(0.0)


# --- truncated moments -------------------------------------------------------

def test_truncated_standard_case():
    assert truncated_mean(0, 1, 0) == pytest.approx(0.7978845608, abs=1e-10)
    assert truncated_var(0, 1, 0) == pytest.approx(1 - 2 / math.pi, abs=1e-10)
    assert truncated_var(0, 1, 0) == pytest.approx(0.3633802277, abs=1e-10)


@given(st.floats(-5, 5), st.floats(1e-3, 3))
def test_truncation_inactive(mu, sigma):
    g = mu - 40 * sigma
    assert truncated_mean(mu, sigma, g) == pytest.approx(mu, abs=1e-9)
    assert truncated_var(mu, sigma, g) == pytest.approx(sigma**2, abs=1e-9)


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_non_positive_sigma(sigma):
    with pytest.raises(InvalidArgumentError):
        truncated_mean(0, sigma, 0)
    with pytest.raises(InvalidArgumentError):
        truncated_var(0, sigma, 0)


@given(st.floats(-2, 2), st.floats(0.01, 2), st.floats(-1e6, 1e6))
def test_truncated_moment_invariants(mu, sigma, z):
    gamma = mu + sigma * z
    m = truncated_mean(mu, sigma, gamma)
    v = truncated_var(mu, sigma, gamma)
    assert math.isfinite(m) and math.isfinite(v)
    assert m >= max(mu, gamma) - 1e-9 * max(1, abs(gamma))
    assert 0 <= v <= sigma**2
    if -8 < z < 30:
        # strict where the truncation effect exceeds double-precision resolution
        assert m > max(mu, gamma)
        assert 0 < v < sigma**2


@given(st.floats(-1, 1), st.floats(0.01, 1), st.floats(-8, 8), st.floats(0.0, 2.0))
def test_truncated_mean_nondecreasing_in_gamma(mu, sigma, z, dz):
    g = mu + sigma * z
    base = truncated_mean(mu, sigma, g)
    # monotone up to rounding: steps of ~1e-14 sit below the ratio's last few ulps
    assert truncated_mean(mu, sigma, g + sigma * dz) >= base - 1e-13 * abs(base)


def test_truncated_var_continuous_at_series_switches():
    for z0 in (8.0, 50.0):
        a = truncated_var(0.0, 1.0, z0 - 1e-7)
        b = truncated_var(0.0, 1.0, z0 + 1e-7)
        assert abs(a - b) / a < 1e-6


def test_truncated_var_deep_tail_against_mpmath():
    import mpmath

    for z in (9.0, 20.0, 60.0, 1e3):
        psi = mpmath.npdf(z) / mpmath.ncdf(-z)
        exact = float(1 + z * psi - psi**2)
        assert truncated_var(0.0, 1.0, z) == pytest.approx(exact, rel=1e-6)


def test_truncated_moments_monte_carlo():
    rng = np.random.default_rng(11)
    m, se, v, sev = mc_truncated_moments(0.7, 0.05, 0.75, 10_000_000, rng)
    assert abs(truncated_mean(0.7, 0.05, 0.75) - m) < 3 * se
    assert abs(truncated_var(0.7, 0.05, 0.75) - v) < 3 * sev


# --- learning-curve evaluation ----------------------------------------------

def test_true_curve_examples():
    assert true_curve(P1, 1e12) == pytest.approx(0.78, abs=1e-6)
    assert true_curve(P1, 20) == pytest.approx(0.6527, abs=5e-4)
    assert true_curve(P1, 20) == pytest.approx(mp_power_curve(0.78, -1.24, -0.76, 20), abs=1e-14)
    assert true_curve(P2, 100) == pytest.approx(0.75 - 0.75 * 100 ** (-0.57), abs=1e-14)


def test_biased_mean_examples():
    assert biased_mean(P1, 20) == pytest.approx(0.7534, abs=5e-4)
    assert biased_mean(P1, 20) == pytest.approx(mp_power_curve(0.78, -1.24, -0.76, 20, 0.45), abs=1e-14)
    assert abs(biased_mean(P2, 10_000) - 0.75) < 0.01
    p0 = CurveParams(0.8, -1.0, -0.5, 0.0, 0.2)
    assert biased_mean(p0, 37) == true_curve(p0, 37)


def test_sigma_n():
    assert sigma_n(0.5, 25) == pytest.approx(0.1)
    assert sigma_n(0.4, 1) == 0.4
    assert sigma_n(0.3, 400) == pytest.approx(sigma_n(0.3, 100) / 2)


@pytest.mark.parametrize("fn", [lambda n: true_curve(P1, n), lambda n: biased_mean(P1, n),
                                lambda n: sigma_n(0.5, n)])
def test_n_below_one_rejected(fn):
    with pytest.raises(InvalidArgumentError):
        fn(0.5)


def test_sigma_n_requires_positive_c1():
    with pytest.raises(InvalidArgumentError):
        sigma_n(0.0, 10)


params_st = st.builds(
    CurveParams,
    st.floats(*BOUNDS["A"]), st.floats(*BOUNDS["alpha"]), st.floats(-1.0, -0.01),
    st.floats(*BOUNDS["zeta"]), st.floats(0.01, 0.5),
)


@given(params_st, st.floats(1, 1e5), st.floats(1.01, 10))
def test_curve_increasing_and_bias_vanishes(p, n, factor):
    assert true_curve(p, n * factor) > true_curve(p, n)
    assert true_curve(p, n) < p.A
    gap = biased_mean(p, n) - true_curve(p, n)
    assert gap == pytest.approx(p.zeta / math.sqrt(n), abs=1e-12)


# --- observed moments --------------------------------------------------------

@settings(max_examples=100)
@given(params_st, st.floats(2, 5000), st.floats(-3, 3))
def test_observed_moments_definitional(p, n, z):
    s = sigma_n(p.c1, n)
    gamma = biased_mean(p, n) + z * s
    assert observed_mean(p, gamma, n) == pytest.approx(truncated_mean(biased_mean(p, n), s, gamma), rel=1e-13)
    assert observed_var(p, gamma, n) == pytest.approx(truncated_var(biased_mean(p, n), s, gamma), rel=1e-12)
    assert observed_mean(p, gamma, n) >= biased_mean(p, n)
    assert observed_var(p, gamma, n) < s**2


def test_observed_moments_inactive_truncation():
    n = 50
    g = biased_mean(P1, n) - 40 * sigma_n(P1.c1, n)
    assert observed_mean(P1, g, n) == pytest.approx(biased_mean(P1, n), abs=1e-9)
    assert observed_var(P1, g, n) == pytest.approx(sigma_n(P1.c1, n) ** 2, abs=1e-9)


def test_observed_mean_problem1_monte_carlo():
    rng = np.random.default_rng(5)
    n, gamma = 50, 0.75
    m, se, _, _ = mc_truncated_moments(biased_mean(P1, n), sigma_n(P1.c1, n), gamma, 2_000_000, rng)
    assert abs(observed_mean(P1, gamma, n) - m) < 3 * se


def test_observed_var_problem2_monte_carlo():
    rng = np.random.default_rng(6)
    n, gamma = 100, 0.70
    _, _, v, sev = mc_truncated_moments(biased_mean(P2, n), sigma_n(P2.c1, n), gamma, 2_000_000, rng)
    assert abs(observed_var(P2, gamma, n) - v) < 3 * sev


def test_batch_matches_scalar():
    rng = np.random.default_rng(0)
    theta = np.column_stack([rng.uniform(*BOUNDS[k], 7) for k in ("A", "alpha", "beta", "zeta")]
                            + [rng.uniform(0.01, 0.5, 7)])
    ns = np.array([20.0, 55.0, 300.0])
    gammas = np.array([0.9, 0.7, 0.2])
    mean, var = observed_moments_batch(theta, ns, gammas)
    assert mean.shape == var.shape == (7, 3)
    for i in range(7):
        p = CurveParams.from_array(theta[i])
        for j in range(3):
            assert mean[i, j] == pytest.approx(observed_mean(p, gammas[j], ns[j]), rel=1e-12)
            assert var[i, j] == pytest.approx(observed_var(p, gammas[j], ns[j]), rel=1e-10)


def test_params_round_trip_and_bounds():
    p = CurveParams(0.8, -1.0, -0.5, 0.3, 0.2)
    assert CurveParams.from_array(p.as_array()) == p
    assert p.in_bounds()
    assert not CurveParams(1.2, -1.0, -0.5, 0.3, 0.2).in_bounds()
    assert set(p.as_dict()) == {"A", "alpha", "beta", "zeta", "c1"}
