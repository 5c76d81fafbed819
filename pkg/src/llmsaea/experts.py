"""Action portfolio bookkeeping and the two expert protocols.

A decision expert proposes which (surrogate, criterion) actions to run
next and labels each proposal certain or uncertain; uncertain proposals
are replaced by a softmax/roulette draw over the running average scores.
A scoring expert grades every executed action's outcome, feeding the
per-action statistics that future decisions condition on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .evolution import EvaluatedSolution, Population

log = logging.getLogger(__name__)

CERTAIN = "certain"
UNCERTAIN = "uncertain"


@dataclass(frozen=True)
class Action:
    """One (surrogate model, infill criterion) pair from the portfolio."""

    id: int
    model: str
    criterion: str


ACTIONS: tuple[Action, ...] = (
    Action(1, "GP", "LCB"),
    Action(2, "GP", "EI"),
    Action(3, "RBF", "Prescreening"),
    Action(4, "RBF", "LocalSearch"),
    Action(5, "PRS", "Prescreening"),
    Action(6, "PRS", "LocalSearch"),
    Action(7, "KNN", "L1Exploit"),
    Action(8, "KNN", "L1Explore"),
)

ACTION_BY_ID = {a.id: a for a in ACTIONS}


@dataclass(frozen=True)
class ActionStats:
    """Running statistics of one action.

    ``avg_score`` is the mean of all scores the action has received,
    ``freq`` its selection frequency (count / executed actions so far) and
    ``count`` how many times it has been executed.
    """

    avg_score: float = 0.0
    freq: float = 0.0
    count: int = 0


@dataclass(frozen=True)
class EvalBudget:
    """True-evaluation budget snapshot passed to the decision expert."""

    max_evals: int
    used: int


@dataclass
class ExpertVerdict:
    """Decision-expert output: actions with parallel confidence labels."""

    actions: list[Action]
    labels: list[str]

    def __post_init__(self):
        if len(self.actions) != len(self.labels):
            raise ValueError("actions and labels must have equal length")
        for lab in self.labels:
            if lab not in (CERTAIN, UNCERTAIN):
                raise ValueError(f"invalid confidence label {lab!r}")


class DecisionBackend(Protocol):
    def decide(
        self,
        stats: dict[int, ActionStats],
        budget: EvalBudget,
        t: int,
        rng: np.random.Generator,
    ) -> Optional[ExpertVerdict]: ...


class ScoringBackend(Protocol):
    def score(self, n: int, population: Population, x_t: EvaluatedSolution) -> Optional[float]: ...


def softmax_probs(scores) -> np.ndarray:
    """Numerically stable softmax; strictly positive, sums to one."""
    scores = np.asarray(scores, dtype=float)
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def roulette_wheel(probs, rng: np.random.Generator) -> int:
    """Draw one index proportionally to ``probs`` using a single uniform."""
    probs = np.asarray(probs, dtype=float)
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(idx, probs.size - 1)


def score_and_update(stats: ActionStats, t: int, score: float) -> ActionStats:
    """Fold one new score into an action's running statistics.

    ``t`` is the number of actions executed before this one; the returned
    frequency is count / (t + 1), consistent with the global invariant
    that frequencies are counts divided by total executed actions.
    """
    new_count = stats.count + 1
    return ActionStats(
        avg_score=(stats.count * stats.avg_score + score) / new_count,
        freq=new_count / (t + 1),
        count=new_count,
    )


def decide(
    stats: dict[int, ActionStats],
    budget: EvalBudget,
    t: int,
    expert: DecisionBackend,
    rng: np.random.Generator,
    mode: str = "full",
    max_entries: int = 8,
) -> list[tuple[Action, str]]:
    """Build the next action set from a decision-expert verdict.

    Certain entries are inserted as-is; uncertain entries are replaced by
    a softmax/roulette draw over all eight average scores. Duplicates are
    dropped keeping the first occurrence. Modes: ``full`` (default),
    ``no_src`` treats every entry as certain, ``src_certain_only`` drops
    uncertain entries entirely. Backend failure, an empty verdict, or an
    empty result after filtering all fall back to a single roulette draw
    so the optimization always progresses.

    Returns (action, source) pairs where source records how the action
    entered the set: ``certain``, ``roulette`` or ``fallback``.
    """
    scores = np.array([stats[a.id].avg_score for a in ACTIONS])

    def _fallback() -> list[tuple[Action, str]]:
        return [(ACTIONS[roulette_wheel(softmax_probs(scores), rng)], "fallback")]

    try:
        verdict = expert.decide(stats, budget, t, rng)
    except Exception:
        log.warning("decision backend failed; falling back to roulette", exc_info=True)
        return _fallback()
    if verdict is None or not verdict.actions:
        return _fallback()

    entries = list(zip(verdict.actions, verdict.labels))
    if len(entries) > max_entries:
        log.warning("verdict lists %d actions; keeping the first %d", len(entries), max_entries)
        entries = entries[:max_entries]

    probs = softmax_probs(scores)
    selected: list[tuple[Action, str]] = []
    seen: set[int] = set()
    for action, label in entries:
        if mode == "no_src":
            label = CERTAIN
        if label == CERTAIN:
            chosen, source = action, "certain"
        else:
            if mode == "src_certain_only":
                continue
            chosen, source = ACTIONS[roulette_wheel(probs, rng)], "roulette"
        if chosen.id not in seen:
            seen.add(chosen.id)
            selected.append((chosen, source))
    if not selected:
        return _fallback()
    return selected


def grade(
    population: Population,
    x_t: EvaluatedSolution,
    expert: ScoringBackend,
    score_max: float = 10.0,
) -> float:
    """Obtain the scoring expert's grade for a newly evaluated solution.

    Backend failure or an unparseable reply falls back to the
    deterministic percentile rule; out-of-scale values are clamped with a
    warning.
    """
    raw = None
    try:
        raw = expert.score(len(population), population, x_t)
    except Exception:
        log.warning("scoring backend failed; using percentile fallback", exc_info=True)
    if raw is None:
        from .llm_client import percentile_score

        return float(percentile_score(population.values(), x_t.value, score_max))
    value = float(raw)
    clamped = min(max(value, 0.0), score_max)
    if clamped != value:
        log.warning("score %s outside [0, %s]; clamped", value, score_max)
    return clamped
