"""Surrogate-assisted evolutionary optimization with expert-driven online
selection of surrogate models and infill sampling criteria.

The optimizer maintains a portfolio of eight (surrogate model, infill
criterion) actions. Each iteration a decision expert recommends which
actions to execute and a scoring expert grades the solution each executed
action produced; running per-action statistics feed back into the next
decision. Both experts can be served by a remote chat-completion model or
by deterministic local policies, which makes every experiment reproducible
offline.
"""

__version__ = "0.1.0"

from .benchmarks import Problem, make_classical, load_shifted_rotated
from .optimizer import RunConfig, Settings, run
from .harness import ExperimentSpec, run_experiment, rank_sum_test

__all__ = [
    "Problem",
    "make_classical",
    "load_shifted_rotated",
    "RunConfig",
    "Settings",
    "run",
    "ExperimentSpec",
    "run_experiment",
    "rank_sum_test",
]
