"""Main optimization loop and the interchangeable selection strategies.

One run: Latin-hypercube initialization, then iterate — form the top-N
population, obtain an action set from the configured strategy, execute
actions in random order (surrogate fit + infill selection + one true
evaluation each), grade and account each executed action, and break to
the next iteration as soon as the archive best strictly improves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .benchmarks import Problem
from .evolution import DEConfig, EvaluatedSolution, Population, de_offspring, latin_hypercube
from .experts import ACTIONS, Action, ActionStats, EvalBudget, decide, grade, score_and_update
from .infill import (
    InfillContext,
    ei_select,
    l1_exploit_select,
    l1_explore_select,
    lcb_select,
    local_search_select,
    prescreen_select,
)
from .llm_client import (
    CalibratedMockDecisionExpert,
    ChatClient,
    ChatConfig,
    LLMDecisionExpert,
    LLMScoringExpert,
    MockDecisionExpert,
    MockScoringExpert,
    TranscriptRecorder,
)
from .surrogates import (
    SurrogateTrainingError,
    TrainingSet,
    fit_gp,
    fit_knn,
    fit_prs,
    fit_rbf,
    predict_prs,
    predict_rbf,
)

log = logging.getLogger(__name__)

EXPERT_STRATEGIES = {
    "llm": "full",
    "mock": "full",
    "llm_no_src": "no_src",
    "llm_src_certain_only": "src_certain_only",
    "llm_single_expert": "single_expert",
}
SIMPLE_STRATEGIES = ("seq", "random", "alter", "qlearning")


def parse_strategy(name: str) -> tuple[str, Optional[int]]:
    """Split a strategy name into (kind, fixed-action id).

    Accepts ``fixed:3``, ``fixed(3)`` and ``fixed(a3)`` for the static
    single-action strategies; every other valid name maps to (name, None).
    """
    name = name.strip()
    if name in EXPERT_STRATEGIES or name in SIMPLE_STRATEGIES:
        return name, None
    inner = None
    if name.startswith("fixed:"):
        inner = name[6:]
    elif name.startswith("fixed(") and name.endswith(")"):
        inner = name[6:-1]
    if inner is not None:
        ident = inner.strip().lstrip("aA")
        if ident.isdigit() and 1 <= int(ident) <= len(ACTIONS):
            return "fixed", int(ident)
    raise ValueError(f"unknown strategy {name!r}")


@dataclass
class Settings:
    """Hyperparameters of one run; defaults follow the standard setup."""

    de_scale_factor: float = 0.5
    de_crossover_rate: float = 0.9
    lcb_beta: float = 2.0
    level_count: int = 4
    ls_budget: Optional[int] = None  # None -> 100 * dim + 1000
    gp_restarts: int = 3
    gp_max_evals: int = 50
    gp_nugget: float = 1e-8
    gp_max_nugget: float = 1e-2
    knn_k: int = 5
    prs_degree: int = 2
    score_max: float = 10.0
    max_verdict_entries: int = 8
    calibrated_min_count: int = 3
    q_epsilon: float = 0.1
    q_alpha: float = 0.1


@dataclass
class RunConfig:
    """One optimization run: problem, budget, seed, strategy, knobs."""

    problem: Problem
    n_init: int = 100
    max_evals: int = 1000
    seed: int = 0
    strategy: str = "mock"
    backend: str = "mock"  # mock | mock_calibrated | llm
    settings: Settings = field(default_factory=Settings)
    chat: Optional[ChatConfig] = None
    transcript_path: Optional[str] = None

    def __post_init__(self):
        if self.n_init < 4:
            raise ValueError("n_init must be at least 4")
        if self.n_init > self.max_evals:
            raise ValueError("n_init must not exceed max_evals")
        if self.backend not in ("mock", "mock_calibrated", "llm"):
            raise ValueError(f"unknown backend {self.backend!r}")
        parse_strategy(self.strategy)


@dataclass
class TraceRecord:
    """One archived evaluation: budget position, progress and provenance.

    Initialization rows carry iteration 0, action id 0, no score and
    source ``init``; action rows carry the post-update iteration counter
    and how the action entered the set.
    """

    fe_index: int
    best_value: float
    iteration: int
    action_id: int
    score: Optional[float]
    source: str


class Archive:
    """Append-only store of every true evaluation, tracking the minimum."""

    def __init__(self):
        self.solutions: list[EvaluatedSolution] = []
        self._best_index = -1

    def add(self, x, value: float) -> EvaluatedSolution:
        sol = EvaluatedSolution(np.array(x, dtype=float), float(value), len(self.solutions))
        self.solutions.append(sol)
        # strict < keeps the earliest solution on ties
        if self._best_index < 0 or sol.value < self.solutions[self._best_index].value:
            self._best_index = sol.index
        return sol

    def __len__(self) -> int:
        return len(self.solutions)

    @property
    def best(self) -> EvaluatedSolution:
        if self._best_index < 0:
            raise ValueError("archive is empty")
        return self.solutions[self._best_index]

    @property
    def best_value(self) -> float:
        return self.best.value

    def vectors(self) -> np.ndarray:
        return np.array([s.x for s in self.solutions])


TRACE_HEADER = "fe,best,t,action,score,source"


@dataclass
class RunTrace:
    """Complete record of one run."""

    problem_name: str
    strategy: str
    seed: int
    records: list[TraceRecord]
    best: EvaluatedSolution
    stats: dict[int, ActionStats]
    iterations: int

    def best_values(self) -> np.ndarray:
        """Best-so-far objective value after each true evaluation."""
        return np.array([r.best_value for r in self.records])

    def final_error(self, optimum_value: float) -> float:
        return self.best.value - optimum_value

    def to_csv_text(self) -> str:
        """Serialize to CSV with full-precision (repr) floats.

        The byte-level stability of this format backs the determinism and
        golden-run regression checks.
        """
        lines = [TRACE_HEADER]
        for r in self.records:
            score = "" if r.score is None else repr(float(r.score))
            lines.append(
                f"{r.fe_index},{repr(r.best_value)},{r.iteration},{r.action_id},{score},{r.source}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_text())


# --- selection strategies ----------------------------------------------

class _FixedStrategy:
    def __init__(self, action_id: int):
        self.action = ACTIONS[action_id - 1]

    def select(self, stats, budget, t, rng):
        return [(self.action, "fixed")]

    def observe(self, action: Action, improved: bool):
        pass


class _SeqStrategy:
    def __init__(self):
        self.counter = 0

    def select(self, stats, budget, t, rng):
        action = ACTIONS[self.counter % len(ACTIONS)]
        self.counter += 1
        return [(action, "seq")]

    def observe(self, action, improved):
        pass


class _RandomStrategy:
    def select(self, stats, budget, t, rng):
        return [(ACTIONS[rng.integers(len(ACTIONS))], "random")]

    def observe(self, action, improved):
        pass


class _AlterStrategy:
    """Repeat the previous action after an improvement, otherwise draw
    uniformly among the other seven."""

    def __init__(self):
        self.last: Optional[Action] = None
        self.improved = False

    def select(self, stats, budget, t, rng):
        if self.last is not None and self.improved:
            return [(self.last, "alter")]
        if self.last is None:
            action = ACTIONS[rng.integers(len(ACTIONS))]
        else:
            others = [a for a in ACTIONS if a.id != self.last.id]
            action = others[rng.integers(len(others))]
        return [(action, "alter")]

    def observe(self, action, improved):
        self.last = action
        self.improved = improved


class _QLearningStrategy:
    """Single-state Q-table, epsilon-greedy, 0/1 improvement reward."""

    def __init__(self, epsilon: float = 0.1, alpha: float = 0.1):
        self.epsilon = epsilon
        self.alpha = alpha
        self.q = np.zeros(len(ACTIONS))

    def select(self, stats, budget, t, rng):
        if rng.random() < self.epsilon:
            action = ACTIONS[rng.integers(len(ACTIONS))]
        else:
            action = ACTIONS[int(np.argmax(self.q))]  # ties -> lowest id
        return [(action, "qlearning")]

    def observe(self, action, improved):
        reward = 1.0 if improved else 0.0
        i = action.id - 1
        self.q[i] += self.alpha * (reward - self.q[i])


class _ExpertStrategy:
    def __init__(self, backend, mode: str, max_entries: int):
        self.backend = backend
        # single-expert ablation changes only the scoring side
        self.mode = "full" if mode == "single_expert" else mode
        self.max_entries = max_entries

    def select(self, stats, budget, t, rng):
        return decide(stats, budget, t, self.backend, rng, mode=self.mode, max_entries=self.max_entries)

    def observe(self, action, improved):
        pass


def _build_controller(config: RunConfig):
    """Resolve (strategy object, scoring backend) for a run."""
    kind, fixed_id = parse_strategy(config.strategy)
    settings = config.settings

    if kind == "fixed":
        return _FixedStrategy(fixed_id), MockScoringExpert()
    if kind == "seq":
        return _SeqStrategy(), MockScoringExpert()
    if kind == "random":
        return _RandomStrategy(), MockScoringExpert()
    if kind == "alter":
        return _AlterStrategy(), MockScoringExpert()
    if kind == "qlearning":
        return _QLearningStrategy(settings.q_epsilon, settings.q_alpha), MockScoringExpert()

    mode = EXPERT_STRATEGIES[kind]
    backend_name = "mock" if kind == "mock" else config.backend
    if backend_name == "mock":
        decision = MockDecisionExpert()
        scoring = MockScoringExpert()
    elif backend_name == "mock_calibrated":
        decision = CalibratedMockDecisionExpert(settings.calibrated_min_count)
        scoring = MockScoringExpert()
    else:
        client = ChatClient(config.chat)
        transcript = (
            TranscriptRecorder(config.transcript_path) if config.transcript_path else None
        )
        decision = LLMDecisionExpert(client, transcript)
        scoring = LLMScoringExpert(client, transcript)
    if mode == "single_expert":
        scoring = MockScoringExpert()
    return _ExpertStrategy(decision, mode, settings.max_verdict_entries), scoring


# --- action execution ---------------------------------------------------

def _execute_action(
    action: Action,
    population: Population,
    archive: Archive,
    problem: Problem,
    settings: Settings,
    rng: np.random.Generator,
    gp_warm: Optional[np.ndarray],
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Fit the action's surrogate on the population and select one point.

    RNG consumption order: offspring generation (only for offspring-based
    criteria), then one child seed for local search (only for the local
    search criterion). Returns (selected point, updated GP warm start).
    """
    data = TrainingSet(population.vectors(), population.values(), problem.lower, problem.upper)

    ctx = None
    if action.criterion != "LocalSearch":
        de_config = DEConfig(settings.de_scale_factor, settings.de_crossover_rate)
        offspring = de_offspring(population, de_config, problem, rng)
        ctx = InfillContext(
            offspring=offspring,
            population=population,
            archive_inputs=archive.vectors(),
            best_value=archive.best_value,
        )

    if action.model == "GP":
        model = fit_gp(
            data,
            n_restarts=settings.gp_restarts,
            max_evals=settings.gp_max_evals,
            nugget=settings.gp_nugget,
            max_nugget=settings.gp_max_nugget,
            warm_start=gp_warm,
        )
        gp_warm = np.log(np.append(model.lengthscales, model.signal_variance))
        if action.criterion == "LCB":
            return lcb_select(model, ctx, beta=settings.lcb_beta), gp_warm
        return ei_select(model, ctx), gp_warm

    if action.model == "KNN":
        model = fit_knn(data, k=min(settings.knn_k, data.n))
        if action.criterion == "L1Exploit":
            return l1_exploit_select(model, ctx, settings.level_count), gp_warm
        return l1_explore_select(model, ctx, settings.level_count), gp_warm

    if action.model == "RBF":
        rbf = fit_rbf(data)
        predict = lambda X: predict_rbf(rbf, X)  # noqa: E731
    else:
        prs = fit_prs(data, degree=settings.prs_degree)
        predict = lambda X: predict_prs(prs, X)  # noqa: E731

    if action.criterion == "Prescreening":
        return prescreen_select(predict, ctx), gp_warm
    return (
        local_search_select(
            predict,
            population,
            de_pop_size=len(population),
            dim=problem.dim,
            seed=int(rng.integers(2**31)),
            scale_factor=settings.de_scale_factor,
            crossover_rate=settings.de_crossover_rate,
            budget=settings.ls_budget,
        ),
        gp_warm,
    )


# --- the main loop ------------------------------------------------------

def run(config: RunConfig) -> RunTrace:
    """Execute one full optimization run.

    All randomness flows through a single generator seeded from
    ``config.seed``: initialization, strategy draws, the uniform pop of
    the pending action set, offspring generation, local-search child
    seeds and mock-expert draws, in that loop order. With mock backends
    the whole trace is a pure function of the configuration.
    """
    problem = config.problem
    settings = config.settings
    rng = np.random.default_rng(config.seed)
    strategy, scoring = _build_controller(config)

    archive = Archive()
    records: list[TraceRecord] = []
    for x in latin_hypercube(config.n_init, problem, rng):
        value = problem.evaluate(x)
        archive.add(x, value)
        records.append(TraceRecord(len(archive), archive.best_value, 0, 0, None, "init"))

    stats = {a.id: ActionStats() for a in ACTIONS}
    t = 0
    gp_warm: Optional[np.ndarray] = None

    while len(archive) < config.max_evals:
        population = Population(archive.solutions, capacity=config.n_init)
        budget = EvalBudget(max_evals=config.max_evals, used=len(archive))
        pending = strategy.select(stats, budget, t, rng)

        while pending and len(archive) < config.max_evals:
            action, source = pending.pop(int(rng.integers(len(pending))))
            try:
                x_t, gp_warm = _execute_action(
                    action, population, archive, problem, settings, rng, gp_warm
                )
            except SurrogateTrainingError:
                log.warning(
                    "action %d surrogate training failed; sampling uniformly", action.id,
                    exc_info=True,
                )
                x_t = problem.lower + rng.random(problem.dim) * (problem.upper - problem.lower)

            value = problem.evaluate(x_t)
            previous_best = archive.best_value
            solution = archive.add(x_t, value)
            improved = value < previous_best

            score = grade(population, solution, scoring, settings.score_max)
            stats[action.id] = score_and_update(stats[action.id], t, score)
            t += 1
            for aid, st in stats.items():
                stats[aid] = replace(st, freq=st.count / t)
            strategy.observe(action, improved)
            records.append(
                TraceRecord(len(archive), archive.best_value, t, action.id, score, source)
            )
            if improved:
                break

    return RunTrace(
        problem_name=problem.name,
        strategy=config.strategy,
        seed=config.seed,
        records=records,
        best=archive.best,
        stats=stats,
        iterations=t,
    )
