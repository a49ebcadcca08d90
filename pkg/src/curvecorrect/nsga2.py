"""Elitist NSGA-II for small box-constrained problems.

Offspring come from binary-tournament parents, simulated binary crossover and
polynomial mutation (both in Deb's bounded form). Parents and offspring are
merged, sorted into fronts, and truncated by crowding distance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Evaluate = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NSGA2Settings:
    population: int = 40
    offspring: int = 10
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0
    generations: int = 300
    crossover_prob: float = 0.9
    mutation_prob: float | None = None  # defaults to 1/dimension


@dataclass
class ParetoSet:
    x: np.ndarray  # (K, D) decision vectors
    f: np.ndarray  # (K, M) objective values
    generations: int
    restarted: bool = False
    final_population: np.ndarray | None = None


def dominates(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.all(a <= b) and np.any(a < b))


def non_dominated_sort(F: np.ndarray) -> list[np.ndarray]:
    """Fronts as index arrays, best first."""
    n = len(F)
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    dominated_by = dom.sum(axis=0)
    fronts = []
    remaining = np.ones(n, dtype=bool)
    while remaining.any():
        current = np.flatnonzero(remaining & (dominated_by == 0))
        fronts.append(current)
        remaining[current] = False
        dominated_by = dominated_by - dom[current].sum(axis=0)
    return fronts


def crowding_distance(F: np.ndarray) -> np.ndarray:
    n, m = F.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        fk = F[order, k]
        dist[order[0]] = dist[order[-1]] = np.inf
        finite = np.isfinite(fk)
        if finite.sum() < 2:
            continue
        # infeasible (infinite) members keep only their boundary credit
        span = fk[finite][-1] - fk[finite][0]
        if span > 0:
            gaps = np.where(np.isfinite(fk[2:]) & np.isfinite(fk[:-2]), fk[2:] - fk[:-2], 0.0)
            dist[order[1:-1]] += gaps / span
    return dist


def _rank_and_crowd(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rank = np.empty(len(F), dtype=int)
    crowd = np.empty(len(F))
    for r, front in enumerate(non_dominated_sort(F)):
        rank[front] = r
        crowd[front] = crowding_distance(F[front])
    return rank, crowd


def _tournament(rng, rank, crowd, count):
    picks = np.empty(count, dtype=int)
    size = len(rank)
    for i in range(count):
        a, b = rng.integers(size, size=2)
        if rank[a] != rank[b]:
            picks[i] = a if rank[a] < rank[b] else b
        elif crowd[a] != crowd[b]:
            picks[i] = a if crowd[a] > crowd[b] else b
        else:
            picks[i] = a if rng.random() < 0.5 else b
    return picks


def sbx_pair(rng, p1, p2, lo, hi, eta, prob):
    c1, c2 = p1.copy(), p2.copy()
    if rng.random() > prob:
        return c1, c2
    for j in range(len(p1)):
        if rng.random() > 0.5 or abs(p1[j] - p2[j]) < 1e-14:
            continue
        y1, y2 = min(p1[j], p2[j]), max(p1[j], p2[j])
        span = y2 - y1
        u = rng.random()

        beta = 1.0 + 2.0 * (y1 - lo[j]) / span
        alpha = 2.0 - beta ** -(eta + 1.0)
        bq = (u * alpha) ** (1.0 / (eta + 1.0)) if u <= 1.0 / alpha else (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
        a_child = 0.5 * ((y1 + y2) - bq * span)

        beta = 1.0 + 2.0 * (hi[j] - y2) / span
        alpha = 2.0 - beta ** -(eta + 1.0)
        bq = (u * alpha) ** (1.0 / (eta + 1.0)) if u <= 1.0 / alpha else (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
        b_child = 0.5 * ((y1 + y2) + bq * span)

        a_child = min(max(a_child, lo[j]), hi[j])
        b_child = min(max(b_child, lo[j]), hi[j])
        if rng.random() < 0.5:
            a_child, b_child = b_child, a_child
        c1[j], c2[j] = a_child, b_child
    return c1, c2


def polynomial_mutation(rng, x, lo, hi, eta, prob):
    y = x.copy()
    for j in range(len(x)):
        if rng.random() >= prob:
            continue
        span = hi[j] - lo[j]
        if span <= 0:
            continue
        d1 = (y[j] - lo[j]) / span
        d2 = (hi[j] - y[j]) / span
        u = rng.random()
        power = 1.0 / (eta + 1.0)
        if u < 0.5:
            val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)
            dq = val ** power - 1.0
        else:
            val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)
            dq = 1.0 - val ** power
        y[j] = min(max(y[j] + dq * span, lo[j]), hi[j])
    return y


def _evaluate(evaluate: Evaluate, X: np.ndarray) -> np.ndarray:
    F = np.asarray(evaluate(X), dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    return np.where(np.isfinite(F), F, np.inf)


def _run(evaluate, lo, hi, settings: NSGA2Settings, rng) -> tuple[np.ndarray, np.ndarray]:
    dim = len(lo)
    pm = settings.mutation_prob if settings.mutation_prob is not None else 1.0 / dim
    X = lo + rng.random((settings.population, dim)) * (hi - lo)
    F = _evaluate(evaluate, X)
    rank, crowd = _rank_and_crowd(F)
    for _ in range(settings.generations):
        n_pairs = (settings.offspring + 1) // 2
        parents = _tournament(rng, rank, crowd, 2 * n_pairs)
        kids = []
        for i in range(n_pairs):
            a, b = sbx_pair(rng, X[parents[2 * i]], X[parents[2 * i + 1]], lo, hi,
                            settings.eta_crossover, settings.crossover_prob)
            kids.append(polynomial_mutation(rng, a, lo, hi, settings.eta_mutation, pm))
            kids.append(polynomial_mutation(rng, b, lo, hi, settings.eta_mutation, pm))
        Xo = np.array(kids[: settings.offspring])
        Fo = _evaluate(evaluate, Xo)
        Xa = np.vstack([X, Xo])
        Fa = np.vstack([F, Fo])
        keep = []
        for front in non_dominated_sort(Fa):
            if len(keep) + len(front) <= settings.population:
                keep.extend(front.tolist())
                continue
            cd = crowding_distance(Fa[front])
            order = np.argsort(-cd, kind="stable")
            keep.extend(front[order[: settings.population - len(keep)]].tolist())
            break
        keep = np.array(keep)
        X, F = Xa[keep], Fa[keep]
        rank, crowd = _rank_and_crowd(F)
    return X, F


def nsga2_search(evaluate: Evaluate, lower, upper, settings: NSGA2Settings | None = None,
                 seed=0) -> ParetoSet:
    """Evolve a population inside ``[lower, upper]`` and return its first front.

    ``evaluate`` maps an (P, D) array of candidates to a (P, M) array of
    objectives to minimize. If the final population has collapsed to a single
    point, the search is restarted once from a perturbed seed.
    """
    settings = settings or NSGA2Settings()
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    X, F = _run(evaluate, lo, hi, settings, np.random.Generator(np.random.PCG64(ss)))
    restarted = False
    if np.all(np.ptp(X, axis=0) == 0):
        restarted = True
        perturbed = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (0x5EED,))
        X, F = _run(evaluate, lo, hi, settings, np.random.Generator(np.random.PCG64(perturbed)))
    front = non_dominated_sort(F)[0]
    # drop exact duplicates so the front is strictly mutually non-dominated
    _, first = np.unique(np.round(X[front], 15), axis=0, return_index=True)
    front = front[np.sort(first)]
    _, first_f = np.unique(F[front], axis=0, return_index=True)
    front = front[np.sort(first_f)]
    order = np.lexsort((F[front, 1] if F.shape[1] > 1 else F[front, 0], F[front, 0]))
    front = front[order]
    return ParetoSet(x=X[front], f=F[front], generations=settings.generations,
                     restarted=restarted, final_population=X)
