"""Turn raw accuracy records into fitter inputs.

The same sliding window over distinct sample sizes drives both the threshold
estimate (minimum order statistic) and the grouped moments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .observation_sim import AccuracyRecord, ThresholdProfile

MIN_FILTER_RECORDS = 10


class FilterDisabledWarning(UserWarning):
    pass


class DegenerateVarianceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GroupedMoments:
    n_repr: float
    y_bar: float
    s2: float | None
    count: int
    n_lo: float
    n_hi: float


def sort_records(records: Sequence[AccuracyRecord]) -> list[AccuracyRecord]:
    # Fully determined order so downstream results do not depend on input order.
    return sorted(records, key=lambda r: (r.n, r.accuracy, r.study_id or ""))


def _windows(unique_n: list[float], window_len: int, stride: int) -> list[list[float]]:
    if window_len < 1 or stride < 1:
        raise InvalidArgumentError("window_len and stride must be >= 1")
    if len(unique_n) <= window_len:
        return [unique_n]
    out = []
    start = 0
    while start + window_len <= len(unique_n):
        out.append(unique_n[start : start + window_len])
        start += stride
    # a stride that skips the tail still has to cover the largest sizes
    if out[-1][-1] != unique_n[-1]:
        out.append(unique_n[-window_len:])
    return out


def _group(records: Sequence[AccuracyRecord]) -> dict[float, list[float]]:
    groups: dict[float, list[float]] = {}
    for r in sort_records(records):
        groups.setdefault(float(r.n), []).append(float(r.accuracy))
    return groups


def estimate_thresholds(records: Sequence[AccuracyRecord], window_len: int = 2,
                        stride: int = 1) -> ThresholdProfile:
    """Per-n publication threshold from the minimum accuracy in each window.

    Each n takes the value of the first window containing it; a running
    minimum from small to large n then makes the profile nonincreasing.
    """
    if not records:
        raise InvalidArgumentError("cannot estimate thresholds from no records")
    groups = _group(records)
    unique_n = sorted(groups)
    gamma: dict[float, float] = {}
    for win in _windows(unique_n, window_len, stride):
        g = min(min(groups[n]) for n in win)
        for n in win:
            gamma.setdefault(n, g)
    # a stride longer than the window skips some sizes; they keep their own minimum
    for n in unique_n:
        gamma.setdefault(n, min(groups[n]))
    out = []
    running = math.inf
    for n in unique_n:
        running = min(running, gamma[n])
        out.append(running)
    return ThresholdProfile(tuple(unique_n), tuple(out))


def raw_thresholds(records: Sequence[AccuracyRecord]) -> ThresholdProfile:
    """Unsmoothed per-n minimum; no monotonicity enforced."""
    groups = _group(records)
    return ThresholdProfile.from_pairs((n, min(v)) for n, v in groups.items())


def group_moments(records: Sequence[AccuracyRecord], window_len: int = 2,
                  stride: int = 1) -> list[GroupedMoments]:
    """Sample mean and unbiased variance per window of distinct sample sizes.

    ``n_repr`` is the geometric mean of the window's record sizes; ``s2`` is
    None for single-record windows.
    """
    if not records:
        raise InvalidArgumentError("cannot group an empty record set")
    groups = _group(records)
    unique_n = sorted(groups)
    out = []
    for win in _windows(unique_n, window_len, stride):
        ys = np.array([y for n in win for y in groups[n]])
        ns = np.array([n for n in win for _ in groups[n]])
        count = len(ys)
        s2 = float(np.var(ys, ddof=1)) if count >= 2 else None
        out.append(GroupedMoments(
            n_repr=float(np.clip(np.exp(np.mean(np.log(ns))), win[0], win[-1])),
            y_bar=float(np.mean(ys)),
            s2=s2,
            count=count,
            n_lo=float(win[0]),
            n_hi=float(win[-1]),
        ))
    return out


def fit_quantile_line(x: np.ndarray, y: np.ndarray, tau: float,
                      iterations: int = 10_000) -> tuple[float, float]:
    """Minimize the pinball loss of ``a + b*x`` by subgradient descent.

    Steps are ``1/sqrt(t)`` on standardized x; the best iterate is returned.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm = x.mean()
    xs = x.std()
    if xs == 0:
        xs = 1.0
    u = (x - xm) / xs
    scale = max(float(np.std(y)), 1e-12)

    def loss(a, b):
        r = y - a - b * u
        return float(np.mean(np.maximum(tau * r, (tau - 1) * r)))

    a = float(np.quantile(y, tau))
    b = 0.0
    best = (loss(a, b), a, b)
    for t in range(1, iterations + 1):
        r = y - a - b * u
        # subgradient of the mean pinball loss w.r.t. the fitted value
        g = np.where(r > 0, -tau, np.where(r < 0, 1 - tau, 0.0))
        step = scale / math.sqrt(t)
        a -= step * float(np.mean(g))
        b -= step * float(np.mean(g * u))
        cur = loss(a, b)
        if cur < best[0]:
            best = (cur, a, b)
    _, a, b = best
    # For a fixed slope the exact optimal intercept is a tau-quantile of the
    # residuals; snapping to it guarantees at most floor(tau*m) points below.
    r = np.sort(y - b * u)
    a_exact = float(r[min(int(math.floor(tau * len(r))), len(r) - 1)])
    if loss(a_exact, b) <= loss(a, b):
        a = a_exact
    return a - b * xm / xs, b / xs


def quantile_filter(records: Sequence[AccuracyRecord], tau: float = 0.1,
                    ) -> tuple[list[AccuracyRecord], list[AccuracyRecord]]:
    """Split records into (kept, outliers) using a tau-quantile line in log n.

    Below ``MIN_FILTER_RECORDS`` records the filter is disabled, a
    FilterDisabledWarning is issued and everything is kept.
    """
    records = sort_records(records)
    if len(records) < MIN_FILTER_RECORDS:
        warnings.warn(f"quantile filter needs >= {MIN_FILTER_RECORDS} records; keeping all",
                      FilterDisabledWarning, stacklevel=2)
        return list(records), []
    if tau <= 0:
        return list(records), []
    x = np.log([r.n for r in records])
    y = np.array([r.accuracy for r in records])
    a, b = fit_quantile_line(x, y, tau)
    cut = a + b * x
    # tolerance keeps points sitting on the fitted line
    low = y < cut - 1e-9
    kept = [r for r, o in zip(records, low) if not o]
    outliers = [r for r, o in zip(records, low) if o]
    return kept, outliers
