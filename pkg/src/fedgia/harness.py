"""Multi-trial experiment runner: builds seeded problem instances, runs each
configured trainer on identical instances, and writes summary/trace CSVs."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import BaselineKind, default_baseline_params, run_fedavg, run_fedpd, run_fedprox
from .core import AlgoParams, RunTrace, run
from .data import FederatedProblem, SyntheticSpec, generate_linear_noniid, load_dataset, partition_dataset
from .losses import LossKind, LossModel

SUMMARY_HEADER = ["algorithm", "k0", "alpha", "trials", "obj_mean", "cr_mean", "time_mean_s", "err_mean"]
TRACE_HEADER = ["k", "tau", "cr", "objective", "error", "lagrangian", "elapsed_s"]

ALGORITHMS = ("fedavg", "fedprox", "fedpd", "fedgia-d", "fedgia-g")
COMPARE_ALGORITHMS = list(ALGORITHMS)


class ConfigError(ValueError):
    """Raised for a malformed experiment configuration; names the bad key."""


@dataclass
class ExperimentConfig:
    loss: str = "ls"
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    k0_list: list[int] = field(default_factory=lambda: [1])
    alpha_list: list[float] = field(default_factory=lambda: [1.0])
    trials: int = 20
    seed: int = 0
    out_dir: str = "results"
    # synthetic problem spec
    problem: str = "synthetic"  # or "dataset"
    m: int = 128
    n: int = 100
    dmin: int = 50
    dmax: int = 150
    # dataset problem spec
    data_path: str | None = None
    data_format: str = "csv"
    # solver knobs; None -> per-loss defaults
    t: float | None = None
    tol: float | None = None
    max_iter: int = 10_000

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if not self.k0_list or not self.alpha_list:
            raise ConfigError("k0_list/alpha_list: must be nonempty")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"algorithms: unknown algorithm {a!r}")
        if self.problem not in ("synthetic", "dataset"):
            raise ConfigError(f"problem: must be synthetic or dataset, got {self.problem!r}")
        if self.problem == "dataset" and not self.data_path:
            raise ConfigError("data_path: required when problem = dataset")
        LossModel(self.loss)  # validates the loss tag


@dataclass
class SummaryRow:
    algorithm: str
    k0: int
    alpha: float
    trials: int
    obj_mean: float
    cr_mean: float
    time_mean_s: float
    err_mean: float


@dataclass
class ExperimentResult:
    rows: list[SummaryRow]
    traces: dict[tuple, RunTrace]  # (algorithm, k0, alpha, trial) -> trace
    failures: list[tuple]  # (algorithm, k0, alpha, trial, reason)
    summary_path: str | None = None


_CONFIG_LIST_KEYS = {"algorithms": str, "k0_list": int, "alpha_list": float}
_CONFIG_SCALAR_KEYS = {
    "loss": str,
    "trials": int,
    "seed": int,
    "out_dir": str,
    "problem": str,
    "m": int,
    "n": int,
    "dmin": int,
    "dmax": int,
    "data_path": str,
    "data_format": str,
    "t": float,
    "tol": float,
    "max_iter": int,
}


def parse_config(path: str) -> ExperimentConfig:
    """Flat key = value file; '#' starts a comment, lists are comma-separated."""
    kwargs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            try:
                if key in _CONFIG_LIST_KEYS:
                    cast = _CONFIG_LIST_KEYS[key]
                    kwargs[key] = [cast(v.strip()) for v in value.split(",") if v.strip()]
                elif key in _CONFIG_SCALAR_KEYS:
                    kwargs[key] = _CONFIG_SCALAR_KEYS[key](value)
                else:
                    raise ConfigError(f"{key}: unknown configuration key")
            except (ValueError, TypeError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"{key}: bad value {value!r}") from None
    return ExperimentConfig(**kwargs)


def instance_seed(master_seed: int, trial: int) -> int:
    """Derived per-trial seed, independent of the algorithm under test."""
    return int(np.random.SeedSequence([master_seed, trial]).generate_state(1)[0])


def build_problem(config: ExperimentConfig, trial: int) -> FederatedProblem:
    seed = instance_seed(config.seed, trial)
    loss = LossModel(config.loss)
    if config.problem == "synthetic":
        spec = SyntheticSpec(config.m, config.n, (config.dmin, config.dmax), seed)
        return generate_linear_noniid(spec, loss)
    features, labels = load_dataset(config.data_path, config.data_format)
    return partition_dataset(features, labels, config.m, seed, loss)


def default_tol(loss: LossModel, d_total: int) -> float:
    if loss.kind is LossKind.LEAST_SQUARES:
        return 1e-7
    return (5.0 / d_total) * 1e-6


def run_algorithm(
    algorithm: str,
    problem: FederatedProblem,
    k0: int,
    alpha: float,
    tol: float | None = None,
    t: float | None = None,
    max_iter: int = 10_000,
    seed: int = 0,
    n_workers: int = 1,
) -> RunTrace:
    """Dispatch one trainer on one problem with default settings filled in."""
    if tol is None:
        tol = default_tol(problem.loss, problem.d)
    if algorithm in ("fedgia-d", "fedgia-g"):
        variant = "diag" if algorithm.endswith("d") else "gram"
        params = AlgoParams(
            k0=k0, t=t, alpha=alpha, variant=variant, tol=tol, max_iter=max_iter, seed=seed
        )
        return run(problem, params, n_workers=n_workers)
    try:
        kind = BaselineKind(algorithm)
    except ValueError:
        raise ValueError(f"unknown algorithm {algorithm!r}") from None
    params = default_baseline_params(kind, problem, k0=k0, tol=tol, max_iter=max_iter, seed=seed)
    runner = {
        BaselineKind.FEDAVG: run_fedavg,
        BaselineKind.FEDPROX: run_fedprox,
        BaselineKind.FEDPD: run_fedpd,
    }[kind]
    return runner(problem, params)


def summarize(traces: list[RunTrace]) -> tuple[float, float, float, float]:
    """Arithmetic means of (final objective, total CR, total time, final error)."""
    if not traces:
        raise ValueError("no traces to summarize")
    k = len(traces)
    return (
        sum(tr.final_objective for tr in traces) / k,
        sum(tr.total_cr for tr in traces) / k,
        sum(tr.total_time for tr in traces) / k,
        sum(tr.final_error for tr in traces) / k,
    )


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))  # plain float repr even for numpy scalars
    return str(v)


def write_trace_csv(trace: RunTrace, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for row in trace.rows:
            writer.writerow(
                [row.k, row.tau, row.cr, _fmt(row.objective), _fmt(row.error),
                 _fmt(row.lagrangian), _fmt(row.elapsed_s)]
            )


def write_summary_csv(rows: list[SummaryRow], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for r in rows:
            writer.writerow(
                [r.algorithm, r.k0, _fmt(r.alpha), r.trials, _fmt(r.obj_mean),
                 _fmt(r.cr_mean), _fmt(r.time_mean_s), _fmt(r.err_mean)]
            )


def trace_filename(algorithm: str, k0: int, alpha: float, trial: int) -> str:
    return f"trace_{algorithm}_k0{k0}_alpha{alpha:g}_trial{trial}.csv"


def run_experiment(
    config: ExperimentConfig, n_workers: int = 1, write_files: bool = True
) -> ExperimentResult:
    """Run every (algorithm, k0, alpha, trial) cell on shared seeded instances."""
    if write_files:
        os.makedirs(config.out_dir, exist_ok=True)

    problems = {}

    def problem_for(trial: int) -> FederatedProblem:
        if trial not in problems:
            problems[trial] = build_problem(config, trial)
        return problems[trial]

    cells = [
        (algo, k0, alpha)
        for algo in config.algorithms
        for k0 in config.k0_list
        for alpha in config.alpha_list
    ]
    jobs = [(algo, k0, alpha, trial) for algo, k0, alpha in cells for trial in range(config.trials)]

    def run_job(job):
        algo, k0, alpha, trial = job
        problem = problem_for(trial)
        return run_algorithm(
            algo, problem, k0, alpha,
            tol=config.tol, t=config.t, max_iter=config.max_iter,
            seed=instance_seed(config.seed, trial),
        )

    # materialize problems up front so parallel trials never race the cache
    for trial in range(config.trials):
        problem_for(trial)

    traces: dict[tuple, RunTrace] = {}
    failures: list[tuple] = []
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(lambda j: _safe_run(run_job, j), jobs))
    else:
        outcomes = [_safe_run(run_job, j) for j in jobs]
    for job, (trace, reason) in zip(jobs, outcomes):
        if trace is not None and trace.status != "Diverged":
            traces[job] = trace
            if write_files:
                write_trace_csv(trace, os.path.join(config.out_dir, trace_filename(*job)))
        else:
            failures.append(job + (reason or trace.status,))

    rows = []
    for algo, k0, alpha in cells:
        cell_traces = [
            traces[(algo, k0, alpha, trial)]
            for trial in range(config.trials)
            if (algo, k0, alpha, trial) in traces
        ]
        if not cell_traces:
            continue
        obj, cr, t_mean, err = summarize(cell_traces)
        rows.append(SummaryRow(algo, k0, alpha, len(cell_traces), obj, cr, t_mean, err))

    summary_path = None
    if write_files:
        summary_path = os.path.join(config.out_dir, "summary.csv")
        write_summary_csv(rows, summary_path)
    return ExperimentResult(rows, traces, failures, summary_path)


def _safe_run(fn, job):
    try:
        return fn(job), None
    except Exception as exc:  # a single failed run must not sink the sweep
        return None, f"{type(exc).__name__}: {exc}"


def failure_rate(result: ExperimentResult, config: ExperimentConfig) -> float:
    total = len(config.algorithms) * len(config.k0_list) * len(config.alpha_list) * config.trials
    return len(result.failures) / total if total else 0.0
