"""Batch experiment driver: run grids, summary statistics and artifacts.

A grid is (problems x strategies x seeds). Each cell aggregates the
final function errors of its runs; artifacts are flat CSV files that can
always be regenerated from the per-run traces.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .benchmarks import make_classical
from .optimizer import RunConfig, Settings, parse_strategy, run

log = logging.getLogger(__name__)


@dataclass
class ExperimentSpec:
    """One experiment grid over classical benchmark problems."""

    problems: list[tuple[str, int]]
    strategies: list[str]
    runs_per_cell: int = 20
    max_evals: int = 1000
    n_init: int = 100
    base_seed: int = 0
    backend: str = "mock"
    settings: Settings = field(default_factory=Settings)
    workers: int = 1
    output_dir: Optional[str] = None
    seed_list: Optional[list[int]] = None  # overrides base_seed + k when set

    def __post_init__(self):
        if not self.problems:
            raise ValueError("problems must be non-empty")
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for name in self.strategies:
            parse_strategy(name)
        if self.seed_list is not None and len(self.seed_list) != self.runs_per_cell:
            raise ValueError("seed_list length must equal runs_per_cell")

    def seeds(self) -> list[int]:
        if self.seed_list is not None:
            return list(self.seed_list)
        return [self.base_seed + k for k in range(self.runs_per_cell)]


@dataclass
class ResultCell:
    """Aggregated outcome of one (problem, strategy) cell.

    ``errors`` holds per-run final errors, or raw best values when the
    problem's optimum is unknown (``raw_best``). Summary statistics are
    always recomputed from the list, never stored.
    """

    problem: str
    dim: int
    strategy: str
    errors: list[float]
    seeds: list[int]
    raw_best: bool = False
    failed_runs: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def std(self) -> float:
        return float(np.std(self.errors))

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    @property
    def complete(self) -> bool:
        return self.failed_runs == 0


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    cells: list[ResultCell]
    convergence: dict[tuple[str, str], np.ndarray]  # (problem, strategy) -> mean curve

    def cell(self, problem: str, strategy: str) -> ResultCell:
        for c in self.cells:
            if c.problem == problem and c.strategy == strategy:
                return c
        raise KeyError(f"no cell for ({problem!r}, {strategy!r})")


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_]+", "", text)


def _single_run(task: dict) -> dict:
    """Execute one run of the grid; must stay importable for process pools."""
    problem = make_classical(task["problem"], task["dim"])
    config = RunConfig(
        problem=problem,
        n_init=task["n_init"],
        max_evals=task["max_evals"],
        seed=task["seed"],
        strategy=task["strategy"],
        backend=task["backend"],
        settings=task["settings"],
    )
    trace = run(config)
    if task.get("trace_dir"):
        name = f"{_slug(task['problem'])}{task['dim']}_{_slug(task['strategy'])}_s{task['seed']}.csv"
        trace.write_csv(Path(task["trace_dir"]) / name)
    if problem.optimum_value is not None:
        error = trace.final_error(problem.optimum_value)
        if error < -1e-9:
            raise RuntimeError(f"negative function error {error} on {problem.name}")
        raw = False
    else:
        error = trace.best.value
        raw = True
    return {
        "problem": task["problem"],
        "dim": task["dim"],
        "strategy": task["strategy"],
        "seed": task["seed"],
        "error": float(error),
        "raw": raw,
        "curve": trace.best_values(),
    }


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run the full grid and aggregate per-cell statistics.

    Individual run failures are logged and excluded; their cell is
    flagged incomplete. When ``spec.output_dir`` is set, per-run traces,
    the summary table, per-run errors and mean convergence curves are
    written beneath it.
    """
    trace_dir = None
    if spec.output_dir:
        out = Path(spec.output_dir)
        trace_dir = out / "traces"
        trace_dir.mkdir(parents=True, exist_ok=True)

    tasks = []
    for problem, dim in spec.problems:
        for strategy in spec.strategies:
            for seed in spec.seeds():
                tasks.append(
                    {
                        "problem": problem,
                        "dim": dim,
                        "strategy": strategy,
                        "seed": seed,
                        "n_init": spec.n_init,
                        "max_evals": spec.max_evals,
                        "backend": spec.backend,
                        "settings": spec.settings,
                        "trace_dir": str(trace_dir) if trace_dir else None,
                    }
                )

    outcomes: list[dict] = []
    failures: dict[tuple[str, str], int] = {}
    if spec.workers == 1:
        for task in tasks:
            try:
                outcomes.append(_single_run(task))
            except Exception:
                log.warning(
                    "run failed: %s-%sD %s seed %s",
                    task["problem"], task["dim"], task["strategy"], task["seed"],
                    exc_info=True,
                )
                key = (task["problem"], task["strategy"])
                failures[key] = failures.get(key, 0) + 1
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futures = {pool.submit(_single_run, task): task for task in tasks}
            for future in concurrent.futures.as_completed(futures):
                task = futures[future]
                try:
                    outcomes.append(future.result())
                except Exception:
                    log.warning(
                        "run failed: %s-%sD %s seed %s",
                        task["problem"], task["dim"], task["strategy"], task["seed"],
                        exc_info=True,
                    )
                    key = (task["problem"], task["strategy"])
                    failures[key] = failures.get(key, 0) + 1
    # completion order is nondeterministic under the pool; normalize
    outcomes.sort(key=lambda r: (r["problem"], r["strategy"], r["seed"]))

    cells = []
    convergence: dict[tuple[str, str], np.ndarray] = {}
    for problem, dim in spec.problems:
        for strategy in spec.strategies:
            rows = [r for r in outcomes if r["problem"] == problem and r["strategy"] == strategy]
            failed = failures.get((problem, strategy), 0)
            if not rows:
                log.warning("cell (%s, %s) has no successful runs", problem, strategy)
                continue
            cells.append(
                ResultCell(
                    problem=problem,
                    dim=dim,
                    strategy=strategy,
                    errors=[r["error"] for r in rows],
                    seeds=[r["seed"] for r in rows],
                    raw_best=any(r["raw"] for r in rows),
                    failed_runs=failed,
                )
            )
            convergence[(problem, strategy)] = np.mean([r["curve"] for r in rows], axis=0)

    result = ExperimentResult(spec=spec, cells=cells, convergence=convergence)
    if spec.output_dir:
        write_artifacts(result, spec.output_dir)
    return result


def write_artifacts(result: ExperimentResult, output_dir):
    """Write summary.csv, errors.csv and one convergence CSV per cell."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    best_mean: dict[str, float] = {}
    for cell in result.cells:
        if cell.problem not in best_mean or cell.mean < best_mean[cell.problem]:
            best_mean[cell.problem] = cell.mean

    with open(out / "summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("problem,dim,strategy,runs,failed,mean,std,median,raw_best,best_in_problem\n")
        for cell in result.cells:
            best = int(cell.mean == best_mean[cell.problem])
            fh.write(
                f"{cell.problem},{cell.dim},{cell.strategy},{len(cell.errors)},"
                f"{cell.failed_runs},{repr(cell.mean)},{repr(cell.std)},"
                f"{repr(cell.median)},{int(cell.raw_best)},{best}\n"
            )

    with open(out / "errors.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("problem,dim,strategy,seed,error\n")
        for cell in result.cells:
            for seed, error in zip(cell.seeds, cell.errors):
                fh.write(f"{cell.problem},{cell.dim},{cell.strategy},{seed},{repr(error)}\n")

    for (problem, strategy), curve in result.convergence.items():
        cell = result.cell(problem, strategy)
        name = f"convergence_{_slug(problem)}{cell.dim}_{_slug(strategy)}.csv"
        with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("fe,mean_best\n")
            for i, value in enumerate(curve, start=1):
                fh.write(f"{i},{repr(float(value))}\n")


def rank_sum_test(sample_a, sample_b) -> tuple[float, float, str]:
    """Two-sided Wilcoxon rank-sum test with midranks and tie correction.

    Returns (rank sum of sample_a, p-value from the normal approximation,
    verdict). Verdict "+" means sample_a is significantly lower (better,
    for errors) at the 0.05 level, "-" significantly higher, "=" no
    significant difference. Degenerate pooled samples (all values tied)
    yield p = 1.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")

    pooled = np.concatenate([a, b])
    n = pooled.size
    order = np.argsort(pooled, kind="stable")
    sorted_vals = pooled[order]
    ranks = np.empty(n)
    tie_term = 0.0
    i = 0
    while i < n:
        j = i
        while j < n and sorted_vals[j] == sorted_vals[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)  # midrank, 1-based
        count = j - i
        tie_term += count**3 - count
        i = j

    w = float(ranks[: a.size].sum())
    mean_w = a.size * (n + 1) / 2.0
    var_w = a.size * b.size / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var_w <= 0.0:
        return w, 1.0, "="
    z = (w - mean_w) / math.sqrt(var_w)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    if p >= 0.05:
        return w, p, "="
    return w, p, "+" if w < mean_w else "-"
