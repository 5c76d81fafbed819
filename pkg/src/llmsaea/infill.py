"""Infill sampling criteria: given surrogate predictions, pick the one
candidate that receives a true (expensive) evaluation.

All criteria are deterministic given their inputs; ties are broken by the
lowest offspring index so whole runs stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import norm

from .evolution import Population, bounding_box, local_search_de
from .surrogates import GPModel, KNNModel, knn_neighbor_indices, predict_gp, predict_knn


@dataclass
class InfillContext:
    """Shared inputs of the offspring-ranking criteria."""

    offspring: np.ndarray  # (N, D) DE trial vectors
    population: Population
    archive_inputs: np.ndarray  # all evaluated vectors, (M, D)
    best_value: float


def lcb_select(gp: GPModel, ctx: InfillContext, beta: float = 2.0) -> np.ndarray:
    """Offspring minimizing the lower confidence bound mean - beta * std."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    mean, std = predict_gp(gp, ctx.offspring)
    return ctx.offspring[int(np.argmin(mean - beta * std))].copy()


def expected_improvement(mean, std, best_value: float) -> np.ndarray:
    """Closed-form expected improvement for minimization.

    EI = (best - mean) * Phi(z) + std * phi(z) with z = (best - mean)/std;
    degenerate deviations (std < 1e-12) use the limit max(best - mean, 0).
    """
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    improve = best_value - mean
    ei = np.maximum(improve, 0.0)
    ok = std >= 1e-12
    if np.any(ok):
        z = improve[ok] / std[ok]
        ei = ei.copy()
        ei[ok] = improve[ok] * norm.cdf(z) + std[ok] * norm.pdf(z)
    return ei


def ei_select(gp: GPModel, ctx: InfillContext) -> np.ndarray:
    """Offspring maximizing expected improvement over the current best."""
    mean, std = predict_gp(gp, ctx.offspring)
    ei = expected_improvement(mean, std, ctx.best_value)
    return ctx.offspring[int(np.argmax(ei))].copy()


def prescreen_select(predict: Callable[[np.ndarray], np.ndarray], ctx: InfillContext) -> np.ndarray:
    """Offspring with the lowest predicted value."""
    if len(ctx.offspring) == 0:
        raise ValueError("offspring set is empty")
    values = np.asarray(predict(ctx.offspring), dtype=float)
    return ctx.offspring[int(np.argmin(values))].copy()


def local_search_select(
    surrogate_predict: Callable[[np.ndarray], np.ndarray],
    population: Population,
    de_pop_size: int,
    dim: int,
    seed: int,
    scale_factor: float = 0.5,
    crossover_rate: float = 0.9,
    budget: Optional[int] = None,
) -> np.ndarray:
    """Minimize the surrogate over the population bounding box with DE.

    The search region is the componentwise min/max of the population and
    the default budget is 100 * dim + 1000 surrogate evaluations.
    """
    lb, ub = bounding_box(population)
    if budget is None:
        budget = 100 * dim + 1000
    return local_search_de(
        surrogate_predict, lb, ub, de_pop_size, budget, seed,
        scale_factor=scale_factor, crossover_rate=crossover_rate,
    )


def quartile_levels(values, level_count: int = 4) -> np.ndarray:
    """Assign each value a quality level 0 (best) .. level_count-1 (worst).

    Levels split the value ranking into equal quantile blocks; rank ties
    keep the earlier index in the better block.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=int)
    ranks[order] = np.arange(n)
    return np.minimum(level_count * ranks // n, level_count - 1)


def classify_levels(knn: KNNModel, X: np.ndarray, level_count: int = 4) -> np.ndarray:
    """Predict a quality level per query by majority vote of the k nearest
    training points' levels; vote ties resolve to the better level."""
    train_levels = quartile_levels(knn.train.targets, level_count)
    U = knn.train.normalize(X)
    nbrs, _ = knn_neighbor_indices(knn, U)
    votes = train_levels[nbrs]
    counts = np.zeros((X.shape[0], level_count), dtype=int)
    for j in range(votes.shape[1]):
        counts[np.arange(X.shape[0]), votes[:, j]] += 1
    return np.argmax(counts, axis=1)


def _l1_candidates(knn: KNNModel, ctx: InfillContext, level_count: int) -> np.ndarray:
    if len(ctx.population) < level_count:
        raise ValueError(f"population must have at least {level_count} members")
    levels = classify_levels(knn, ctx.offspring, level_count)
    return np.flatnonzero(levels == levels.min())


def l1_exploit_select(knn: KNNModel, ctx: InfillContext, level_count: int = 4) -> np.ndarray:
    """Among offspring predicted in the best available level, take the one
    with the smallest KNN-predicted objective value."""
    cand = _l1_candidates(knn, ctx, level_count)
    preds = predict_knn(knn, ctx.offspring[cand])
    return ctx.offspring[cand[int(np.argmin(preds))]].copy()


def l1_explore_select(knn: KNNModel, ctx: InfillContext, level_count: int = 4) -> np.ndarray:
    """Among offspring predicted in the best available level, take the one
    maximizing the minimum Euclidean distance to all archived inputs."""
    cand = _l1_candidates(knn, ctx, level_count)
    dmin = cdist(ctx.offspring[cand], ctx.archive_inputs).min(axis=1)
    return ctx.offspring[cand[int(np.argmax(dmin))]].copy()
