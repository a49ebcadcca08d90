"""Synthetic published-accuracy datasets drawn from the observation model.

Each simulated research team draws one accuracy from
``A + alpha*n**beta + N(zeta/sqrt(n), (c1/sqrt(n))**2)`` and publishes it only
when it clears the sample-size dependent threshold ``gamma_n``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NotFoundError
from .stats_core import CurveParams, _check_n, sigma_n


@dataclass(frozen=True)
class AccuracyRecord:
    n: int
    accuracy: float
    study_id: str | None = None
    published: bool = True
    clipped: bool = False
    year: int | None = None


@dataclass(frozen=True)
class ThresholdProfile:
    """Publication thresholds on a sorted grid of sample sizes.

    Lookup at an arbitrary n uses the value at the largest grid point <= n
    (the first grid value below the grid).
    """

    ns: tuple[float, ...]
    gammas: tuple[float, ...]

    def __post_init__(self):
        if len(self.ns) != len(self.gammas) or not self.ns:
            raise InvalidArgumentError("threshold profile needs matching, nonempty n and gamma lists")
        if any(b <= a for a, b in zip(self.ns, self.ns[1:])):
            raise InvalidArgumentError("threshold profile n grid must be strictly increasing")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "ThresholdProfile":
        pairs = sorted(pairs)
        return cls(tuple(float(n) for n, _ in pairs), tuple(float(g) for _, g in pairs))

    @classmethod
    def power(cls, g0: float, g1: float, n_grid: Sequence[float]) -> "ThresholdProfile":
        """``gamma_n = g0 + g1/sqrt(n)``; decreasing in n for ``g1 > 0``."""
        grid = sorted(set(float(n) for n in n_grid))
        return cls(tuple(grid), tuple(g0 + g1 / math.sqrt(n) for n in grid))

    @classmethod
    def unbounded(cls, n_grid: Sequence[float]) -> "ThresholdProfile":
        """No selection: every draw is published."""
        grid = sorted(set(float(n) for n in n_grid))
        return cls(tuple(grid), tuple(-math.inf for _ in grid))

    def at(self, n: float) -> float:
        i = bisect.bisect_right(self.ns, float(n)) - 1
        return self.gammas[max(i, 0)]

    def at_many(self, ns) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.ns), np.asarray(ns, dtype=float), side="right") - 1
        return np.asarray(self.gammas)[np.clip(idx, 0, None)]

    def is_nonincreasing(self) -> bool:
        return all(b <= a for a, b in zip(self.gammas, self.gammas[1:]))

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.ns, self.gammas))


@dataclass(frozen=True)
class ProblemPreset:
    name: str
    params: CurveParams
    description: str = ""


PRESETS: dict[int, ProblemPreset] = {
    1: ProblemPreset("problem1", CurveParams(0.78, -1.24, -0.76, 0.45, 0.50), "high separability, fast convergence"),
    2: ProblemPreset("problem2", CurveParams(0.75, -0.75, -0.57, 0.85, 0.40), "low separability, slow convergence"),
    3: ProblemPreset("problem3", CurveParams(0.90, -0.80, -0.60, 0.40, 0.30), "high separability, slow convergence"),
    4: ProblemPreset("problem4", CurveParams(0.60, -0.60, -0.70, 0.70, 0.50), "low separability, fast convergence"),
    5: ProblemPreset("problem5", CurveParams(0.65, -0.55, -0.60, 0.40, 0.40), "low separability, slow convergence"),
    6: ProblemPreset("problem6", CurveParams(0.78, -1.90, -0.95, 0.25, 0.50), "high separability, fast convergence"),
    7: ProblemPreset("problem7", CurveParams(0.85, -0.70, -0.60, 0.70, 0.20), "high separability, slow convergence"),
}

DEFAULT_THRESHOLD_OFFSET = 0.15
DEFAULT_THRESHOLD_SLOPE = 0.5


def preset(problem: int) -> ProblemPreset:
    try:
        return PRESETS[int(problem)]
    except (KeyError, ValueError):
        raise NotFoundError(f"unknown problem preset {problem!r}; choose 1-7") from None


def default_profile(params: CurveParams, n_grid: Sequence[float],
                    offset: float = DEFAULT_THRESHOLD_OFFSET,
                    slope: float = DEFAULT_THRESHOLD_SLOPE) -> ThresholdProfile:
    """Decreasing stand-in threshold ``(A - offset) + slope/sqrt(n)``."""
    return ThresholdProfile.power(params.A - offset, slope, n_grid)


def log_grid(n_min: float, n_max: float, points: int) -> list[int]:
    """Log-spaced integer sample sizes; duplicates after rounding are dropped."""
    if points < 1 or n_min < 1 or n_max < n_min:
        raise InvalidArgumentError("need 1 <= n_min <= n_max and points >= 1")
    if points == 1:
        return [int(round(n_min))]
    raw = np.exp(np.linspace(math.log(n_min), math.log(n_max), points))
    return sorted(set(int(round(v)) for v in raw))


def linear_grid(n_min: float, n_max: float, points: int) -> list[int]:
    if points < 1 or n_min < 1 or n_max < n_min:
        raise InvalidArgumentError("need 1 <= n_min <= n_max and points >= 1")
    return sorted(set(int(round(v)) for v in np.linspace(n_min, n_max, points)))


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; accepts an int, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def sample_accuracy(params: CurveParams, n, rng: np.random.Generator, size=None):
    """Draw unselected accuracies ``A + alpha*n**beta + w`` at sample size n."""
    n_arr = _check_n(n)
    sd = sigma_n(params.c1, n_arr)
    noise = rng.standard_normal(size)
    mean = params.A + params.alpha * n_arr**params.beta + params.zeta / np.sqrt(n_arr)
    out = mean + sd * noise
    return float(out) if np.ndim(out) == 0 else out


def apply_selection(values: Sequence[float], gamma: float) -> tuple[list[float], int]:
    """Keep values ``>= gamma`` in order; also return how many were dropped."""
    published = [v for v in values if v >= gamma]
    return published, len(values) - len(published)


def cell_seeds(seed, count: int) -> list[np.random.SeedSequence]:
    """Independent sub-seeds, one per grid cell, derived from the run seed."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return root.spawn(count)


def run_experiment1(spec: CurveParams | ProblemPreset | int, n_grid: Sequence[int], K: int,
                    thresholds: ThresholdProfile | None = None, seed=0) -> list[AccuracyRecord]:
    """Simulate K teams per sample size and return the published records.

    Draws above 1.0 are emitted as 1.0 with ``clipped=True``; selection is
    applied to the raw draw.
    """
    if isinstance(spec, ProblemPreset):
        params = spec.params
    elif isinstance(spec, CurveParams):
        params = spec
    else:
        params = preset(spec).params
    if K < 1:
        raise InvalidArgumentError("K must be >= 1")
    grid = sorted(set(int(n) for n in n_grid))
    if not grid:
        raise InvalidArgumentError("n_grid must not be empty")
    if thresholds is None:
        thresholds = default_profile(params, grid)

    records: list[AccuracyRecord] = []
    for n, ss in zip(grid, cell_seeds(seed, len(grid))):
        draws = sample_accuracy(params, n, make_rng(ss), size=K)
        gamma = thresholds.at(n)
        for team, y in enumerate(draws):
            if y < gamma:
                continue
            clipped = y > 1.0
            records.append(AccuracyRecord(
                n=n,
                accuracy=1.0 if clipped else float(y),
                study_id=f"n{n}-t{team}",
                clipped=clipped,
            ))
    return records
