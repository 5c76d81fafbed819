"""Command-line interface: single runs, benchmark grids, plots, checks."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from .benchmarks import load_shifted_rotated, make_classical
from .harness import ExperimentSpec, run_experiment
from .llm_client import ChatConfig
from .optimizer import RunConfig, Settings, run

log = logging.getLogger(__name__)


def _load_settings(path) -> Settings:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        return Settings(**data)
    except TypeError as exc:
        raise SystemExit(f"invalid settings file {path}: {exc}") from exc


def _chat_config(args) -> ChatConfig:
    kwargs = {}
    for flag, key in (
        ("endpoint", "endpoint"),
        ("model", "model"),
        ("temperature", "temperature"),
        ("retries", "max_retries"),
        ("timeout", "timeout"),
        ("api_key_env", "api_key_env"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            kwargs[key] = value
    return ChatConfig(**kwargs)


def _add_chat_flags(parser):
    parser.add_argument("--endpoint", help="chat-completion endpoint URL")
    parser.add_argument("--model", help="chat model name")
    parser.add_argument("--temperature", type=float, help="sampling temperature")
    parser.add_argument("--retries", type=int, help="max retries per exchange")
    parser.add_argument("--timeout", type=float, help="request timeout in seconds")
    parser.add_argument(
        "--api-key-env", dest="api_key_env",
        help="name of the environment variable holding the API key",
    )


def _resolve_problem(args):
    if getattr(args, "problem_file", None):
        return load_shifted_rotated(args.problem_file)
    if not args.problem:
        raise SystemExit("either --problem or --problem-file is required")
    return make_classical(args.problem, args.dim)


def _cmd_run(args) -> int:
    problem = _resolve_problem(args)
    settings = _load_settings(args.settings) if args.settings else Settings()
    config = RunConfig(
        problem=problem,
        n_init=args.n,
        max_evals=args.mfes,
        seed=args.seed,
        strategy=args.strategy,
        backend=args.backend,
        settings=settings,
        chat=_chat_config(args) if args.backend == "llm" else None,
        transcript_path=args.transcript,
    )
    trace = run(config)
    if args.trace:
        trace.write_csv(args.trace)
        print(f"trace written to {args.trace}")
    print(f"problem: {problem.name} ({problem.dim}D)")
    print(f"strategy: {args.strategy}  backend: {args.backend}  seed: {args.seed}")
    print(f"evaluations: {len(trace.records)}  iterations: {trace.iterations}")
    print(f"best value: {trace.best.value:.6e}")
    if problem.optimum_value is not None:
        print(f"function error: {trace.final_error(problem.optimum_value):.6e}")
    return 0


def _parse_problems(text: str) -> list[tuple[str, int]]:
    problems = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise SystemExit(f"problem {chunk!r} must use name:dim form")
        name, dim = chunk.rsplit(":", 1)
        problems.append((name.strip(), int(dim)))
    return problems


def _cmd_bench(args) -> int:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    if "settings" in data and isinstance(data["settings"], dict):
        data["settings"] = Settings(**data["settings"])
    if "problems" in data:
        data["problems"] = [(name, int(dim)) for name, dim in data["problems"]]

    overrides = {
        "problems": _parse_problems(args.problems) if args.problems else None,
        "strategies": [s.strip() for s in args.strategies.split(",")] if args.strategies else None,
        "runs_per_cell": args.runs,
        "max_evals": args.mfes,
        "n_init": args.n,
        "base_seed": args.seed,
        "workers": args.workers,
        "backend": args.backend,
        "output_dir": args.output_dir,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value

    try:
        spec = ExperimentSpec(**data)
    except TypeError as exc:
        raise SystemExit(f"invalid experiment configuration: {exc}") from exc

    result = run_experiment(spec)
    print(f"{'problem':<16}{'strategy':<24}{'mean':>14}{'std':>14}{'median':>14}")
    for cell in result.cells:
        flag = "" if cell.complete else f"  [{cell.failed_runs} failed]"
        print(
            f"{cell.problem + '-' + str(cell.dim) + 'D':<16}{cell.strategy:<24}"
            f"{cell.mean:>14.4e}{cell.std:>14.4e}{cell.median:>14.4e}{flag}"
        )
    if spec.output_dir:
        print(f"artifacts written to {spec.output_dir}")
    return 0


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    results = Path(args.results)
    out = Path(args.output) if args.output else results
    out.mkdir(parents=True, exist_ok=True)
    pattern = re.compile(r"^convergence_(.+)_(.+)\.csv$")
    groups: dict[str, list[tuple[str, Path]]] = {}
    for path in sorted(results.glob("convergence_*.csv")):
        m = pattern.match(path.name)
        if not m:
            continue
        groups.setdefault(m.group(1), []).append((m.group(2), path))
    if not groups:
        raise SystemExit(f"no convergence CSV files found in {results}")

    for problem, curves in groups.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        for strategy, path in curves:
            rows = np.loadtxt(path, delimiter=",", skiprows=1)
            ax.plot(rows[:, 0], rows[:, 1], label=strategy)
        ax.set_xlabel("true evaluations")
        ax.set_ylabel("mean best objective value")
        ax.set_yscale("log")
        ax.set_title(problem)
        ax.legend(fontsize=8)
        fig.tight_layout()
        target = out / f"{problem}.png"
        fig.savefig(target, dpi=150)
        plt.close(fig)
        print(f"plot written to {target}")
    return 0


def _cmd_validate(args) -> int:
    problem = _resolve_problem(args)
    settings = _load_settings(args.settings) if args.settings else Settings()
    config = RunConfig(
        problem=problem,
        n_init=args.n,
        max_evals=args.mfes,
        seed=args.seed,
        strategy=args.strategy,
        backend=args.backend if args.backend != "llm" else "mock",
        settings=settings,
    )
    failures = 0

    def check(name: str, ok: bool):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures += 1

    trace = run(config)
    again = run(config)

    check("deterministic replay (byte-identical trace)", trace.to_csv_text() == again.to_csv_text())
    check("budget exactness (archive length == MFEs)", len(trace.records) == config.max_evals)
    best = trace.best_values()
    check("best-so-far nonincreasing", bool(np.all(np.diff(best) <= 0.0)))
    total = sum(s.count for s in trace.stats.values())
    check("selection counts sum to iteration count", total == trace.iterations)
    freq_ok = all(
        trace.iterations > 0 and s.freq == s.count / trace.iterations
        for s in trace.stats.values()
    )
    check("selection frequencies are counts / iterations", freq_ok)
    score_lists: dict[int, list[float]] = {}
    for record in trace.records:
        if record.action_id:
            score_lists.setdefault(record.action_id, []).append(record.score)
    mean_ok = all(
        abs(np.mean(score_lists.get(aid, [0.0])) - s.avg_score) <= 1e-12
        for aid, s in trace.stats.items()
        if s.count
    )
    check("average scores match mean of assigned scores", mean_ok)
    if problem.optimum_value is not None:
        check(
            "function error nonnegative",
            trace.final_error(problem.optimum_value) >= -1e-9,
        )
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="llmsaea",
        description=(
            "Surrogate-assisted evolutionary optimization with expert-selected "
            "(surrogate model, infill criterion) actions."
        ),
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="enable info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one optimization run")
    run_p.add_argument("--problem", help="classical benchmark name")
    run_p.add_argument("--dim", type=int, default=10, help="problem dimension")
    run_p.add_argument("--problem-file", help="JSON spec of a shifted/rotated problem")
    run_p.add_argument("--n", type=int, default=100, help="population size")
    run_p.add_argument("--mfes", type=int, default=1000, help="true-evaluation budget")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--strategy", default="mock")
    run_p.add_argument("--backend", default="mock", choices=["mock", "mock_calibrated", "llm"])
    run_p.add_argument("--trace", help="write the run trace CSV to this path")
    run_p.add_argument("--transcript", help="record expert exchanges to this JSONL path")
    run_p.add_argument("--settings", help="JSON file of hyperparameter overrides")
    _add_chat_flags(run_p)
    run_p.set_defaults(func=_cmd_run)

    bench_p = sub.add_parser("bench", help="run an experiment grid")
    bench_p.add_argument("--config", help="experiment JSON file")
    bench_p.add_argument("--problems", help="comma list of name:dim pairs")
    bench_p.add_argument("--strategies", help="comma list of strategy names")
    bench_p.add_argument("--runs", type=int, help="runs per (problem, strategy) cell")
    bench_p.add_argument("--mfes", type=int, help="true-evaluation budget per run")
    bench_p.add_argument("--n", type=int, help="population size")
    bench_p.add_argument("--seed", type=int, help="base seed (run k uses seed base+k)")
    bench_p.add_argument("--workers", type=int, help="parallel worker processes")
    bench_p.add_argument("--backend", choices=["mock", "mock_calibrated", "llm"])
    bench_p.add_argument("--output-dir", dest="output_dir", help="artifact directory")
    bench_p.set_defaults(func=_cmd_bench)

    plot_p = sub.add_parser("plot", help="render convergence curves to images")
    plot_p.add_argument("--results", required=True, help="directory with convergence CSVs")
    plot_p.add_argument("--output", help="image output directory (default: results dir)")
    plot_p.set_defaults(func=_cmd_plot)

    val_p = sub.add_parser("validate", help="run the invariant suite on a configuration")
    val_p.add_argument("--problem", default="ellipsoid")
    val_p.add_argument("--dim", type=int, default=5)
    val_p.add_argument("--problem-file", help="JSON spec of a shifted/rotated problem")
    val_p.add_argument("--n", type=int, default=20)
    val_p.add_argument("--mfes", type=int, default=80)
    val_p.add_argument("--seed", type=int, default=0)
    val_p.add_argument("--strategy", default="mock")
    val_p.add_argument("--backend", default="mock", choices=["mock", "mock_calibrated", "llm"])
    val_p.add_argument("--settings", help="JSON file of hyperparameter overrides")
    val_p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
