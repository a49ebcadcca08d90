"""Normal-distribution primitives, truncated-normal moments and the learning curve.

Every function here accepts a scalar or an array and returns the same shape
(Python floats for scalar input), so the fitter can evaluate whole batches of
candidate parameters without a Python loop.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np
from scipy import special

from .errors import InvalidArgumentError

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Above this the ratio phi/(1 - Phi) is taken from the continued fraction.
MILLS_SWITCH = 8.0
# Above this the truncated variance comes from its asymptotic series.
VAR_SERIES_SWITCH = 50.0
_CF_TERMS = 60

PARAM_NAMES = ("A", "alpha", "beta", "zeta", "c1")
# Feasible box of the moment-matching program; c1 has an open lower end.
BOUNDS = {
    "A": (0.5, 1.0),
    "alpha": (-2.0, -0.5),
    "beta": (-1.0, 0.0),
    "zeta": (0.0, 1.0),
    "c1": (0.0, 0.5),
}
C1_FLOOR = 1e-6


@dataclass(frozen=True)
class CurveParams:
    """Parameters of the observation model ``A + alpha*n**beta + w``.

    ``w`` is Gaussian with mean ``zeta/sqrt(n)`` (overfitting inflation) and
    standard deviation ``c1/sqrt(n)``.
    """

    A: float
    alpha: float
    beta: float
    zeta: float
    c1: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, x) -> "CurveParams":
        return cls(*(float(v) for v in x))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES, astuple(self)))

    def in_bounds(self) -> bool:
        for name, value in self.as_dict().items():
            lo, hi = BOUNDS[name]
            if name == "c1":
                if not (lo < value <= hi):
                    return False
            elif not (lo <= value <= hi):
                return False
        return True


def _out(x: np.ndarray, scalar: bool):
    return float(x) if scalar else x


def _prep(z, name: str = "z") -> tuple[np.ndarray, bool]:
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    return arr, arr.ndim == 0


def _check_n(n) -> np.ndarray:
    arr = np.asarray(n, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 1):
        raise InvalidArgumentError("sample size n must be >= 1")
    return arr


def _check_sigma(sigma) -> np.ndarray:
    arr = np.asarray(sigma, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise InvalidArgumentError("sigma must be positive")
    return arr


def normal_pdf(z):
    """Standard normal density."""
    arr, scalar = _prep(z)
    return _out(INV_SQRT_2PI * np.exp(-0.5 * arr * arr), scalar)


def normal_cdf(z):
    """Standard normal CDF via erfc, so neither tail loses precision."""
    arr, scalar = _prep(z)
    return _out(0.5 * special.erfc(-arr / SQRT2), scalar)


def normal_sf(z):
    arr, scalar = _prep(z)
    return _out(0.5 * special.erfc(arr / SQRT2), scalar)


def _cf_excess(z: np.ndarray) -> np.ndarray:
    """psi(z) - z for large z, from the Laplace continued fraction.

    psi(z) = z + 1/(z + 2/(z + 3/(z + ...))), evaluated bottom-up.
    """
    acc = z.copy()
    for k in range(_CF_TERMS, 1, -1):
        acc = z + k / acc
    return 1.0 / acc


def inv_mills(z):
    """Inverse Mills ratio ``phi(z) / (1 - Phi(z))`` (the standard normal hazard)."""
    arr, scalar = _prep(z)
    out = np.empty_like(arr)
    hi = arr > MILLS_SWITCH
    lo = ~hi
    if np.any(lo):
        zl = arr[lo]
        out[lo] = INV_SQRT_2PI * np.exp(-0.5 * zl * zl) / (0.5 * special.erfc(zl / SQRT2))
    if np.any(hi):
        zh = arr[hi]
        out[hi] = zh + _cf_excess(zh)
    return _out(out, scalar)


def _std_trunc_var(z: np.ndarray) -> np.ndarray:
    """Variance of a standard normal truncated below at z: ``1 + z*psi - psi**2``."""
    out = np.empty_like(z)
    direct = z <= MILLS_SWITCH
    series = z > VAR_SERIES_SWITCH
    mid = ~direct & ~series
    if np.any(direct):
        zd = z[direct]
        psi = inv_mills(zd)
        out[direct] = 1.0 + zd * psi - psi * psi
    if np.any(mid):
        zm = z[mid]
        excess = _cf_excess(zm)
        # 1 + z*psi - psi**2 == 1 - psi*(psi - z)
        out[mid] = 1.0 - (zm + excess) * excess
    if np.any(series):
        u2 = 1.0 / (z[series] * z[series])
        out[series] = u2 * (1 - u2 * (6 - u2 * (50 - u2 * (518 - u2 * (6354 - u2 * 89782)))))
    return out


def truncated_mean(mu, sigma, gamma):
    """``E[x | x > gamma]`` for ``x ~ N(mu, sigma**2)``."""
    mu_a, s1 = _prep(mu, "mu")
    g_a, s2 = _prep(gamma, "gamma")
    sig = _check_sigma(sigma)
    z = (g_a - mu_a) / sig
    return _out(mu_a + sig * inv_mills(z), s1 and s2 and sig.ndim == 0)


def truncated_var(mu, sigma, gamma):
    """``Var[x | x > gamma]`` for ``x ~ N(mu, sigma**2)``."""
    mu_a, s1 = _prep(mu, "mu")
    g_a, s2 = _prep(gamma, "gamma")
    sig = _check_sigma(sigma)
    z = np.asarray((g_a - mu_a) / sig, dtype=float)
    v = sig * sig * _std_trunc_var(np.atleast_1d(z)).reshape(z.shape)
    return _out(v, s1 and s2 and sig.ndim == 0)


def true_curve(params: CurveParams, n):
    """Expected accuracy without overfitting: ``A + alpha * n**beta``."""
    arr = _check_n(n)
    return _out(params.A + params.alpha * arr**params.beta, arr.ndim == 0)


def biased_mean(params: CurveParams, n):
    """Mean of an unselected draw, including the ``zeta/sqrt(n)`` overfitting shift."""
    arr = _check_n(n)
    val = params.A + params.alpha * arr**params.beta + params.zeta / np.sqrt(arr)
    return _out(val, arr.ndim == 0)


def sigma_n(c1, n):
    """Standard deviation of reported accuracy at sample size n: ``c1/sqrt(n)``."""
    arr = _check_n(n)
    c = np.asarray(c1, dtype=float)
    if np.any(c <= 0):
        raise InvalidArgumentError("c1 must be positive")
    return _out(c / np.sqrt(arr), arr.ndim == 0 and c.ndim == 0)


def observed_mean(params: CurveParams, gamma_n, n):
    """Mean published accuracy at n when only values above ``gamma_n`` survive."""
    return truncated_mean(biased_mean(params, n), sigma_n(params.c1, n), gamma_n)


def observed_var(params: CurveParams, gamma_n, n):
    """Variance of published accuracies at n under truncation at ``gamma_n``."""
    return truncated_var(biased_mean(params, n), sigma_n(params.c1, n), gamma_n)


def observed_moments_batch(theta: np.ndarray, n: np.ndarray, gamma: np.ndarray):
    """Model mean and variance for a batch of parameter rows.

    ``theta`` has shape (P, 5) in ``PARAM_NAMES`` order; ``n`` and ``gamma``
    have shape (W,). Returns two (P, W) arrays. Inputs are trusted (the
    optimizer keeps ``theta`` inside the box), so no validation happens here.
    """
    theta = np.atleast_2d(theta)
    A, alpha, beta, zeta, c1 = (theta[:, i : i + 1] for i in range(5))
    n = np.asarray(n, dtype=float)[None, :]
    root = np.sqrt(n)
    mu = A + alpha * n**beta + zeta / root
    sig = c1 / root
    z = (np.asarray(gamma, dtype=float)[None, :] - mu) / sig
    zf = z.ravel()
    psi = inv_mills(zf).reshape(z.shape)
    var = sig * sig * _std_trunc_var(zf).reshape(z.shape)
    return mu + sig * psi, var
