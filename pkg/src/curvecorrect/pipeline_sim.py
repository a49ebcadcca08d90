"""A real classification workflow with test-set leakage and selective reporting.

Each simulated team draws a dataset, optionally picks features on all rows
before splitting (the leak), trains a logistic-regression classifier on 70%
of the rows and reports accuracy on the held-out 30%.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateDataError, InvalidArgumentError
from .observation_sim import AccuracyRecord, ThresholdProfile, cell_seeds, make_rng

N_FEATURES = 10
DEFAULT_K = {1: 3, 2: 5}
MAX_REGENERATE = 100
L2_PENALTY = 1e-4
GD_ITERATIONS = 500

# Stand-in reporting threshold for the classification workflow.
DEFAULT_G0 = 0.63
DEFAULT_G1 = 0.5


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray  # (n, 10)
    labels: np.ndarray  # (n,) of 0/1

    def __len__(self) -> int:
        return len(self.labels)

    def rows(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx])

    def columns(self, cols) -> "LabeledDataset":
        return LabeledDataset(self.features[:, cols], self.labels)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def problem1_labels(x: np.ndarray, eps: np.ndarray) -> np.ndarray:
    y = sigmoid(0.8 * x[:, 0] - 0.3 * x[:, 1] + 0.7 * eps)
    return (y > 0.5).astype(int)


def friedman_response(x: np.ndarray, eps: np.ndarray) -> np.ndarray:
    return 5.0 * (2.0 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 4.0 * (x[:, 2] - 0.5) ** 2
                  + 2.0 * x[:, 3] + x[:, 4]) + eps


def problem2_labels(x: np.ndarray, eps: np.ndarray) -> np.ndarray:
    y = friedman_response(x, eps)
    # label 1 when 1/(1 + exp(y - mean)) > 0.5, i.e. y below the sample mean
    return (sigmoid(-(y - y.mean())) > 0.5).astype(int)


_LABELERS = {1: problem1_labels, 2: problem2_labels}


def _generate(problem: int, n: int, seed) -> LabeledDataset:
    if problem not in _LABELERS:
        raise InvalidArgumentError(f"unknown classification problem {problem!r}; choose 1 or 2")
    if n < 4:
        raise InvalidArgumentError("need n >= 4 rows")
    rng = make_rng(seed)
    for _ in range(MAX_REGENERATE):
        x = rng.standard_normal((n, N_FEATURES))
        eps = rng.standard_normal(n)
        labels = _LABELERS[problem](x, eps)
        if 0.2 <= labels.mean() <= 0.8:
            return LabeledDataset(x, labels)
    raise DegenerateDataError(f"could not draw a balanced dataset in {MAX_REGENERATE} tries")


def gen_problem1_data(n: int, seed) -> LabeledDataset:
    """Gaussian features; label 1 iff sigmoid(0.8*x1 - 0.3*x2 + 0.7*eps) > 0.5."""
    return _generate(1, n, seed)


def gen_problem2_data(n: int, seed) -> LabeledDataset:
    """Gaussian features with a Friedman-type response thresholded at its mean."""
    return _generate(2, n, seed)


def gen_data(problem: int, n: int, seed) -> LabeledDataset:
    return _generate(problem, n, seed)


def leaky_feature_select(data: LabeledDataset, k: int) -> list[int]:
    """Indices (0-based) of the k features most correlated with the labels.

    Uses every row it is given. Constant columns score 0; ties go to the lower
    index.
    """
    x = np.asarray(data.features, dtype=float)
    if not 1 <= k <= x.shape[1]:
        raise InvalidArgumentError(f"k must be in [1, {x.shape[1]}]")
    y = np.asarray(data.labels, dtype=float)
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc * xc, axis=0))
    sy = math.sqrt(float(np.sum(yc * yc)))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.abs(xc.T @ yc) / (sx * sy)
    corr = np.where((sx > 1e-12) & (sy > 1e-12), corr, 0.0)
    corr = np.nan_to_num(corr, nan=0.0)
    order = sorted(range(len(corr)), key=lambda j: (-corr[j], j))
    return sorted(order[:k])


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float

    def decision(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.decision(x) > 0).astype(int)

    def accuracy(self, data: LabeledDataset) -> float:
        return float(np.mean(self.predict(data.features) == data.labels))


def train_linear_classifier(train: LabeledDataset, iterations: int = GD_ITERATIONS,
                            l2: float = L2_PENALTY) -> LinearModel:
    """L2-penalized logistic regression by full-batch gradient descent.

    The step is the inverse of the loss's Lipschitz bound, so the schedule is
    fixed given the data and every run is deterministic.
    """
    x = np.asarray(train.features, dtype=float)
    y = np.asarray(train.labels, dtype=float)
    if len(y) < 2:
        raise DegenerateDataError("need at least 2 training rows")
    if y.min() == y.max():
        raise DegenerateDataError("training set has a single class")
    n, d = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    lipschitz = 0.25 * np.linalg.norm(xa, 2) ** 2 / n + l2
    step = 1.0 / lipschitz
    w = np.zeros(d + 1)
    for _ in range(iterations):
        p = sigmoid(xa @ w)
        grad = xa.T @ (p - y) / n
        grad[:d] += l2 * w[:d]
        w -= step * grad
    return LinearModel(w[:d].copy(), float(w[d]))


def split_indices(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random 70/30 split; the test part has floor(0.3*n) rows."""
    perm = rng.permutation(n)
    n_test = int(math.floor(0.3 * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


@dataclass(frozen=True)
class TrialResult:
    accuracy: float
    features: tuple[int, ...]
    train_idx: np.ndarray
    test_idx: np.ndarray


def run_team_trial_detail(problem: int, n: int, leak: bool, k: int | None = None, seed=0,
                          select=leaky_feature_select) -> TrialResult:
    if n < 10:
        raise InvalidArgumentError("a team trial needs n >= 10")
    k = DEFAULT_K.get(problem, 3) if k is None else k
    data_seed, split_seed, retry_seed = cell_seeds(seed, 3)
    data = gen_data(problem, n, data_seed)
    split_rng = make_rng(split_seed)
    retry_rng = make_rng(retry_seed)
    for _ in range(MAX_REGENERATE):
        train_idx, test_idx = split_indices(n, split_rng)
        train = data.rows(train_idx)
        if train.labels.min() != train.labels.max():
            break
        # single-class training split: resample the dataset
        data = gen_data(problem, n, retry_rng.integers(2**63))
    else:
        raise DegenerateDataError("no two-class training split found")
    if leak:
        feats = select(data, k)
    else:
        feats = select(train, k)
    model = train_linear_classifier(train.columns(feats))
    acc = model.accuracy(data.rows(test_idx).columns(feats))
    return TrialResult(acc, tuple(feats), train_idx, test_idx)


def run_team_trial(problem: int, n: int, leak: bool, k: int | None = None, seed=0) -> float:
    """Held-out accuracy of one team's classifier."""
    return run_team_trial_detail(problem, n, leak, k, seed).accuracy


def estimate_true_curve(problem: int, n_grid: Sequence[int], repeats: int = 100,
                        k: int | None = None, seed=0) -> list[tuple[int, float]]:
    """Leak-free mean accuracy per n: the ground-truth learning curve."""
    if repeats < 1:
        raise InvalidArgumentError("repeats must be >= 1")
    grid = sorted(set(int(n) for n in n_grid))
    out = []
    for n, ss in zip(grid, cell_seeds(seed, len(grid))):
        accs = [run_team_trial(problem, n, False, k, child) for child in ss.spawn(repeats)]
        out.append((n, float(np.mean(accs))))
    return out


def default_pipeline_profile(n_grid: Sequence[int]) -> ThresholdProfile:
    return ThresholdProfile.power(DEFAULT_G0, DEFAULT_G1, n_grid)


def run_experiment2(problem: int, n_grid: Sequence[int], K: int = 20,
                    thresholds: ThresholdProfile | None = None, k: int | None = None,
                    seed=0) -> list[AccuracyRecord]:
    """K leaky team trials per n; only accuracies >= gamma_n are published."""
    if K < 1:
        raise InvalidArgumentError("K must be >= 1")
    grid = sorted(set(int(n) for n in n_grid))
    if not grid:
        raise InvalidArgumentError("n_grid must not be empty")
    thresholds = thresholds or default_pipeline_profile(grid)
    records = []
    for n, ss in zip(grid, cell_seeds(seed, len(grid))):
        gamma = thresholds.at(n)
        for team, child in enumerate(ss.spawn(K)):
            acc = run_team_trial(problem, n, True, k, child)
            if acc >= gamma:
                records.append(AccuracyRecord(n=n, accuracy=acc, study_id=f"n{n}-t{team}"))
    return records
