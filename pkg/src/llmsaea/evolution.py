"""Latin hypercube initialization and differential-evolution operators.

Two DE entry points live here: :func:`de_offspring` creates one trial per
population member for the prescreening-style infill criteria, and
:func:`local_search_de` runs a full DE optimization of a cheap surrogate
prediction inside a given hyper-rectangle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .benchmarks import Problem

log = logging.getLogger(__name__)


@dataclass(eq=False)
class EvaluatedSolution:
    """A decision vector with its true objective value and evaluation index."""

    x: np.ndarray
    value: float
    index: int


class Population:
    """Top-``capacity`` solutions ordered best-first.

    Sorting is by objective value ascending with ties keeping the
    earlier-evaluated solution first.
    """

    def __init__(self, members: Sequence[EvaluatedSolution], capacity: Optional[int] = None):
        ordered = sorted(members, key=lambda m: (m.value, m.index))
        if capacity is not None:
            ordered = ordered[:capacity]
        if not ordered:
            raise ValueError("population must contain at least one solution")
        self.members = ordered

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[EvaluatedSolution]:
        return iter(self.members)

    def __getitem__(self, i) -> EvaluatedSolution:
        return self.members[i]

    @property
    def best(self) -> EvaluatedSolution:
        return self.members[0]

    def vectors(self) -> np.ndarray:
        return np.array([m.x for m in self.members])

    def values(self) -> np.ndarray:
        return np.array([m.value for m in self.members])


@dataclass
class DEConfig:
    """Differential evolution operator parameters."""

    scale_factor: float = 0.5
    crossover_rate: float = 0.9
    rng_seed: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.scale_factor <= 1.0:
            raise ValueError("scale_factor must be in (0, 1]")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must be in [0, 1]")


def latin_hypercube(n: int, problem: Problem, seed: int) -> np.ndarray:
    """Sample ``n`` points from a Latin hypercube design over the problem box.

    Each dimension is split into ``n`` equal-width strata; every stratum
    receives exactly one point, with the stratum assignment permuted
    independently per dimension. Deterministic given ``seed``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    unit = np.empty((n, problem.dim))
    for j in range(problem.dim):
        perm = rng.permutation(n)
        jitter = rng.random(n)
        unit[:, j] = (perm + jitter) / n
    return problem.lower + unit * (problem.upper - problem.lower)


def repair(value: float, lower: float, upper: float, rng: np.random.Generator) -> float:
    """Replace an out-of-bounds coordinate by a uniform draw inside [lower, upper)."""
    if lower <= value <= upper:
        return value
    return lower + rng.random() * (upper - lower)


def de_offspring(
    population: Population,
    config: DEConfig,
    problem: Problem,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Generate one trial vector per population member.

    For parent i the mutant is ``best + F * (x_r1 - x_r2)`` with r1, r2
    drawn without replacement from the other members (r1 or r2 may be the
    best), followed by binomial crossover with a guaranteed ``j_rand``
    coordinate and per-coordinate bound repair.

    RNG consumption order, per parent: the (r1, r2) index pair, then
    j_rand, then one uniform per coordinate for crossover, then one
    uniform per repaired coordinate in ascending coordinate order.
    """
    n = len(population)
    if n < 3:
        raise ValueError("de_offspring needs a population of at least 3 members")
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    vecs = population.vectors()
    best = vecs[0]
    dim = problem.dim
    f = config.scale_factor
    cr = config.crossover_rate
    offspring = np.empty_like(vecs)
    indices = np.arange(n)
    for i in range(n):
        r1, r2 = rng.choice(np.delete(indices, i), size=2, replace=False)
        mutant = best + f * (vecs[r1] - vecs[r2])
        j_rand = int(rng.integers(dim))
        take = rng.random(dim) < cr
        take[j_rand] = True
        trial = np.where(take, mutant, vecs[i])
        for j in range(dim):
            if not problem.lower[j] <= trial[j] <= problem.upper[j]:
                trial[j] = repair(trial[j], problem.lower[j], problem.upper[j], rng)
        offspring[i] = trial
    return offspring


def bounding_box(population: Population) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise min/max over the population's decision vectors."""
    vecs = population.vectors()
    return vecs.min(axis=0), vecs.max(axis=0)


def local_search_de(
    surrogate_predict: Callable[[np.ndarray], np.ndarray],
    region_lb: np.ndarray,
    region_ub: np.ndarray,
    pop_size: int,
    budget: int,
    seed: int,
    scale_factor: float = 0.5,
    crossover_rate: float = 0.9,
) -> np.ndarray:
    """Minimize a surrogate prediction over a box with differential evolution.

    ``surrogate_predict`` must accept an (m, D) batch and return (m,)
    predictions. Evolution uses the same best/1/bin operator as
    :func:`de_offspring` with greedy one-to-one replacement; the initial
    population counts against ``budget`` and the total number of
    prediction rows never exceeds it. Coordinates with a collapsed range
    (lb == ub) stay fixed at that value. Deterministic given ``seed``.
    """
    lb = np.asarray(region_lb, dtype=float)
    ub = np.asarray(region_ub, dtype=float)
    if lb.shape != ub.shape:
        raise ValueError("region bounds must have matching shapes")
    if np.any(lb > ub):
        raise ValueError("region_lb must not exceed region_ub")
    if budget < pop_size:
        raise ValueError("budget must be at least pop_size")
    if budget > pop_size and pop_size < 3:
        raise ValueError("pop_size must be >= 3 to evolve")
    dim = lb.size
    width = ub - lb
    rng = np.random.default_rng(seed)

    points = lb + rng.random((pop_size, dim)) * width
    values = np.asarray(surrogate_predict(points), dtype=float)
    evals = pop_size
    ibest = int(np.argmin(values))
    best_x = points[ibest].copy()
    best_f = float(values[ibest])

    while evals < budget:
        n_new = min(pop_size, budget - evals)
        parents = points[:n_new]
        ib = int(np.argmin(values))

        # r1, r2 per parent: uniform without replacement, excluding the parent
        idx = np.arange(n_new)
        r1 = rng.integers(0, pop_size - 1, size=n_new)
        r1 += r1 >= idx
        r2 = rng.integers(0, pop_size - 2, size=n_new)
        lo_ex = np.minimum(idx, r1)
        hi_ex = np.maximum(idx, r1)
        r2 += r2 >= lo_ex
        r2 += r2 >= hi_ex

        mutants = points[ib] + scale_factor * (points[r1] - points[r2])
        j_rand = rng.integers(0, dim, size=n_new)
        take = rng.random((n_new, dim)) < crossover_rate
        take[idx, j_rand] = True
        trials = np.where(take, mutants, parents)

        oob = (trials < lb) | (trials > ub)
        if oob.any():
            draws = rng.random(int(oob.sum()))
            flat_lb = np.broadcast_to(lb, trials.shape)[oob]
            flat_w = np.broadcast_to(width, trials.shape)[oob]
            trials[oob] = flat_lb + draws * flat_w

        trial_values = np.asarray(surrogate_predict(trials), dtype=float)
        evals += n_new

        accept = trial_values <= values[:n_new]
        points[:n_new][accept] = trials[accept]
        values[:n_new][accept] = trial_values[accept]

        gen_best = int(np.argmin(trial_values))
        if trial_values[gen_best] < best_f:
            best_f = float(trial_values[gen_best])
            best_x = trials[gen_best].copy()

    return best_x
