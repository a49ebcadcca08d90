"""Bias-corrected learning-curve estimation by truncated moment matching.

Two objectives are minimized jointly over the parameter box: the squared gap
between each window's mean accuracy and the model's truncated mean (f1), and
the same for the variance (f2). The final estimate is picked from the Pareto
front with an f1-led augmented scalarization.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InsufficientDataError
from .nsga2 import NSGA2Settings, nsga2_search
from .observation_sim import AccuracyRecord, ThresholdProfile
from .preprocess import (
    DegenerateVarianceWarning,
    GroupedMoments,
    estimate_thresholds,
    group_moments,
    quantile_filter,
    raw_thresholds,
    sort_records,
)
from .stats_core import BOUNDS, C1_FLOOR, PARAM_NAMES, CurveParams, observed_moments_batch

log = logging.getLogger(__name__)

BAND_Z = 1.96


@dataclass(frozen=True)
class FitConfig:
    population: int = 40
    offspring: int = 10
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0
    generations: int = 300
    bootstrap_reps: int = 10_000
    seed: int = 0
    bounds: dict = field(default_factory=lambda: dict(BOUNDS))
    window_len: int = 2
    stride: int = 1
    quantile_tau: float = 0.1
    use_filter: bool = True
    filter_before_thresholds: bool = True
    smoothed_thresholds: bool = True
    asf_rho: float = 1e-4
    bootstrap_bands: bool = False
    jobs: int = 1

    def __post_init__(self):
        for name in ("population", "offspring", "generations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.bootstrap_reps < 0:
            raise ValueError("bootstrap_reps must be >= 0")

    def settings(self) -> NSGA2Settings:
        return NSGA2Settings(
            population=self.population,
            offspring=self.offspring,
            eta_crossover=self.eta_crossover,
            eta_mutation=self.eta_mutation,
            generations=self.generations,
        )

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.bounds[k][0] for k in PARAM_NAMES], dtype=float)
        hi = np.array([self.bounds[k][1] for k in PARAM_NAMES], dtype=float)
        # c1 = 0 is infeasible (degenerate noise)
        lo[4] = max(lo[4], C1_FLOOR)
        return lo, hi

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["bounds"] = {k: list(v) for k, v in self.bounds.items()}
        return d


@dataclass
class FitResult:
    params: CurveParams
    pareto: list[tuple[CurveParams, float, float]]
    ci: dict[str, tuple[float, float]] | None
    thresholds: ThresholdProfile
    flags: list[str]
    diagnostics: dict
    moments: list[GroupedMoments] = field(default_factory=list)
    outliers: list[AccuracyRecord] = field(default_factory=list)
    band_ns: tuple[float, ...] | None = None
    band_upper: tuple[float, ...] | None = None

    def curve(self, n):
        p = self.params
        return p.A + p.alpha * np.asarray(n, dtype=float) ** p.beta

    def upper_band(self, n):
        """Predictive upper band used for flagging."""
        n = np.asarray(n, dtype=float)
        if self.band_ns is not None:
            return np.interp(np.log(n), np.log(self.band_ns), self.band_upper)
        return self.curve(n) + BAND_Z * self.params.c1 / np.sqrt(n)


class MomentObjectives:
    """Vectorized f1/f2 over a fixed set of windows."""

    def __init__(self, moments: Sequence[GroupedMoments], thresholds: ThresholdProfile):
        if not moments:
            raise InsufficientDataError("no grouped moments to fit")
        self.n = np.array([m.n_repr for m in moments])
        self.y_bar = np.array([m.y_bar for m in moments])
        self.has_var = np.array([m.s2 is not None for m in moments])
        self.s2 = np.array([m.s2 if m.s2 is not None else 0.0 for m in moments])
        self.gamma = window_thresholds(moments, thresholds)

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        mean, var = observed_moments_batch(theta, self.n, self.gamma)
        f1 = np.sum((self.y_bar - mean) ** 2, axis=1)
        f2 = np.sum(np.where(self.has_var, (self.s2 - var) ** 2, 0.0), axis=1)
        return np.column_stack([f1, f2])


def window_thresholds(moments: Sequence[GroupedMoments], thresholds: ThresholdProfile) -> np.ndarray:
    # The largest size in a window carries the window's smallest threshold,
    # so no record in the window sits below the cut the model assumes.
    return thresholds.at_many([m.n_hi for m in moments])


def objective_f1(params: CurveParams, moments: Sequence[GroupedMoments],
                 thresholds: ThresholdProfile) -> float:
    """Sum of squared gaps between window means and the model's published mean."""
    return float(MomentObjectives(moments, thresholds)(params.as_array())[0, 0])


def objective_f2(params: CurveParams, moments: Sequence[GroupedMoments],
                 thresholds: ThresholdProfile) -> float:
    """Sum of squared gaps between window variances and the model's published variance.

    Single-record windows are skipped; with none left the value is 0 and a
    DegenerateVarianceWarning is issued.
    """
    if not any(m.s2 is not None for m in moments):
        warnings.warn("no window has two or more records; f2 is identically zero",
                      DegenerateVarianceWarning, stacklevel=2)
        return 0.0
    return float(MomentObjectives(moments, thresholds)(params.as_array())[0, 1])


def select_asf(pareto: Sequence[tuple[CurveParams, float, float]], rho: float = 1e-4) -> CurveParams:
    """Front member minimizing ``f1 + rho*f2``; ties go to the smaller f2."""
    if not pareto:
        raise ValueError("empty Pareto set")
    best = min(pareto, key=lambda item: (item[1] + rho * item[2], item[2]))
    return best[0]


def _prepare(records: Sequence[AccuracyRecord], config: FitConfig):
    records = sort_records(records)
    outliers: list[AccuracyRecord] = []
    kept = records
    if config.use_filter:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            kept, outliers = quantile_filter(records, config.quantile_tau)
    base = kept if config.filter_before_thresholds else records
    distinct = len({r.n for r in kept})
    if distinct < 3:
        raise InsufficientDataError(
            f"need at least 3 distinct sample sizes after filtering, got {distinct}")
    if config.smoothed_thresholds:
        thresholds = estimate_thresholds(base, config.window_len, config.stride)
    else:
        thresholds = raw_thresholds(base)
    moments = group_moments(kept, config.window_len, config.stride)
    return kept, outliers, thresholds, moments


def _search(records, config: FitConfig, seed):
    kept, outliers, thresholds, moments = _prepare(records, config)
    objectives = MomentObjectives(moments, thresholds)
    lo, hi = config.box()
    pset = nsga2_search(objectives, lo, hi, config.settings(), seed)
    pareto = [(CurveParams.from_array(x), float(f[0]), float(f[1])) for x, f in zip(pset.x, pset.f)]
    params = select_asf(pareto, config.asf_rho)
    return params, pareto, pset, kept, outliers, thresholds, moments


def fit(records: Sequence[AccuracyRecord], config: FitConfig | None = None) -> FitResult:
    """Estimate the de-biased learning curve from published records.

    Pipeline: quantile filter, threshold estimate, grouped moments, NSGA-II,
    ASF selection, optional bootstrap intervals, then overoptimism flags.
    """
    config = config or FitConfig()
    root = np.random.SeedSequence(config.seed)
    search_seed, boot_seed = root.spawn(2)
    params, pareto, pset, kept, outliers, thresholds, moments = _search(records, config, search_seed)
    f1, f2 = next((a, b) for p, a, b in pareto if p == params)
    result = FitResult(
        params=params,
        pareto=pareto,
        ci=None,
        thresholds=thresholds,
        flags=[],
        moments=moments,
        outliers=outliers,
        diagnostics={
            "f1": f1,
            "f2": f2,
            "generations": pset.generations,
            "restarted": pset.restarted,
            "seed": config.seed,
            "n_records": len(records),
            "n_kept": len(kept),
            "n_windows": len(moments),
        },
    )
    if config.bootstrap_reps > 0:
        reps = _bootstrap_params(records, config, boot_seed)
        result.ci = percentile_intervals(reps, params)
        result.diagnostics["bootstrap_reps"] = int(len(reps))
        if config.bootstrap_bands:
            grid = np.exp(np.linspace(np.log(2), np.log(max(r.n for r in records) * 2), 64))
            curves = reps[:, [0]] + reps[:, [1]] * grid[None, :] ** reps[:, [2]]
            upper = np.percentile(curves + BAND_Z * reps[:, [4]] / np.sqrt(grid)[None, :], 97.5, axis=0)
            result.band_ns = tuple(grid.tolist())
            result.band_upper = tuple(upper.tolist())
    result.flags = flag_overoptimistic(records, result)
    return result


def _bootstrap_one(args):
    records, config, ss = args
    rng = np.random.Generator(np.random.PCG64(ss))
    idx = rng.integers(len(records), size=len(records))
    sample = [records[i] for i in idx]
    try:
        params, *_ = _search(sample, config, ss.spawn(1)[0])
    except InsufficientDataError:
        return None
    return params.as_array()


def _bootstrap_params(records, config: FitConfig, seed) -> np.ndarray:
    records = sort_records(records)
    seeds = seed.spawn(config.bootstrap_reps)
    jobs = [(records, config, ss) for ss in seeds]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            out = list(pool.map(_bootstrap_one, jobs, chunksize=8))
    else:
        out = [_bootstrap_one(j) for j in jobs]
    good = [o for o in out if o is not None]
    if len(good) < len(out):
        log.warning("%d bootstrap replicates had too few distinct sample sizes and were skipped",
                    len(out) - len(good))
    if not good:
        raise InsufficientDataError("every bootstrap replicate was degenerate")
    return np.array(good)


def percentile_intervals(reps: np.ndarray, point: CurveParams) -> dict[str, tuple[float, float]]:
    """2.5/97.5 percentile intervals, widened if needed to contain the point estimate."""
    lo = np.percentile(reps, 2.5, axis=0)
    hi = np.percentile(reps, 97.5, axis=0)
    p = point.as_array()
    lo = np.minimum(lo, p)
    hi = np.maximum(hi, p)
    return {name: (float(a), float(b)) for name, a, b in zip(PARAM_NAMES, lo, hi)}


def bootstrap_ci(records: Sequence[AccuracyRecord], config: FitConfig | None = None,
                 point: CurveParams | None = None) -> dict[str, tuple[float, float]]:
    """Refit on record-level resamples and return per-parameter 95% intervals."""
    config = config or FitConfig()
    root = np.random.SeedSequence(config.seed)
    search_seed, boot_seed = root.spawn(2)
    if point is None:
        point = _search(records, config, search_seed)[0]
    reps = _bootstrap_params(records, replace(config, bootstrap_reps=max(config.bootstrap_reps, 1)), boot_seed)
    return percentile_intervals(reps, point)


def record_id(record: AccuracyRecord, index: int) -> str:
    return record.study_id if record.study_id else f"row{index}"


def exceedances(records: Sequence[AccuracyRecord], result: FitResult):
    """(id, record, band, exceedance) for records strictly above the band, largest first."""
    rows = []
    for i, r in enumerate(records):
        band = float(result.upper_band(r.n))
        if r.accuracy > band:
            rows.append((record_id(r, i), r, band, r.accuracy - band))
    rows.sort(key=lambda row: (-row[3], row[0]))
    return rows


def flag_overoptimistic(records: Sequence[AccuracyRecord], result: FitResult) -> list[str]:
    """Ids of records above the corrected curve's 97.5% predictive band."""
    return [row[0] for row in exceedances(records, result)]


def naive_fit(records: Sequence[AccuracyRecord]) -> CurveParams:
    """Least-squares ``A + alpha*n**beta`` through the raw published points.

    Unconstrained in sign, so it can reproduce the spurious decreasing trend.
    """
    from scipy.optimize import curve_fit

    n = np.array([r.n for r in records], dtype=float)
    y = np.array([r.accuracy for r in records], dtype=float)

    def model(x, A, alpha, beta):
        return A + alpha * x**beta

    best = None
    for beta0 in (-0.9, -0.5, -0.2):
        for alpha0 in (-1.0, 1.0):
            try:
                popt, _ = curve_fit(model, n, y, p0=(float(np.mean(y)), alpha0, beta0),
                                    bounds=([-1, -50, -3], [2, 50, -1e-3]), maxfev=20_000)
            except RuntimeError:
                continue
            sse = float(np.sum((model(n, *popt) - y) ** 2))
            if best is None or sse < best[0]:
                best = (sse, popt)
    if best is None:
        return CurveParams(float(np.mean(y)), 0.0, -0.5, 0.0, float(np.std(y)) or C1_FLOOR)
    A, alpha, beta = best[1]
    return CurveParams(float(A), float(alpha), float(beta), 0.0, float(np.std(y)) or C1_FLOOR)
