"""Comparison trainers sharing the trace schema and stopping rule of the
main solver: full-batch FedAvg, FedProx, and FedPD (oracle I, option I).

All three run with full client participation and a decaying learning rate
gamma_k(a) = a / log2(k+2). FedProx and FedPD solve their local sub-problems
approximately with a fixed number of inner GD steps, anchored at the current
global iterate and warm-started from the client's local iterate.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import DIVERGENCE_CAP, RunTrace, TraceRow, objective, objective_gradient
from .data import FederatedProblem
from .losses import LossKind, loss_gradient

Array = np.ndarray


class BaselineKind(str, Enum):
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    FEDPD = "fedpd"


@dataclass
class BaselineParams:
    kind: BaselineKind
    step_base: float  # a in gamma_k(a) = a / log2(k+2)
    prox_mu: float = 1e-4
    inner_iters: int = 5
    eta: float = 1.0
    eta1_base: float = 0.05
    k0: int = 1
    alpha: float = 1.0  # kept for interface parity; baselines use full participation
    tol: float = 1e-7
    max_iter: int = 10_000
    seed: int = 0

    def __post_init__(self):
        self.kind = BaselineKind(self.kind)
        if self.step_base <= 0:
            raise ValueError("step_base must be > 0")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.k0 < 1 or self.max_iter < 1 or self.tol <= 0:
            raise ValueError("invalid schedule parameters")


def gamma(a: float, k: int) -> float:
    """Decaying learning rate a / log2(k+2)."""
    return a / math.log2(k + 2)


def default_baseline_params(
    kind: BaselineKind | str,
    problem: FederatedProblem,
    k0: int = 1,
    tol: float = 1e-7,
    max_iter: int = 10_000,
    seed: int = 0,
) -> BaselineParams:
    """Experimental settings per algorithm and loss family."""
    kind = BaselineKind(kind)
    linear = problem.loss.kind is LossKind.LEAST_SQUARES
    d, m = problem.d, problem.m
    logistic_a = 0.5 * d / m
    if kind is BaselineKind.FEDAVG:
        a = 0.01 if linear else logistic_a
        return BaselineParams(kind, a, k0=k0, tol=tol, max_iter=max_iter, seed=seed)
    if kind is BaselineKind.FEDPROX:
        a = 0.001 if linear else logistic_a
        return BaselineParams(kind, a, k0=k0, tol=tol, max_iter=max_iter, seed=seed)
    if linear:
        return BaselineParams(
            kind, 0.05, eta=1.0, eta1_base=0.05, k0=k0, tol=tol, max_iter=max_iter, seed=seed
        )
    return BaselineParams(
        kind,
        logistic_a,
        eta=max(400.0, d / 50.0),
        eta1_base=logistic_a,
        k0=k0,
        tol=tol,
        max_iter=max_iter,
        seed=seed,
    )


def _run_loop(problem: FederatedProblem, params: BaselineParams, aggregate_fn, local_fn) -> RunTrace:
    """Shared schedule: aggregate/record/stop at k in {0, k0, 2k0, ...},
    one local update per client per iteration otherwise."""
    trace = RunTrace()
    k = 0
    cr = 0
    round_idx = 0
    x_glob = np.zeros(problem.n)
    start = time.perf_counter()
    while True:
        if k % params.k0 == 0:
            x_glob = aggregate_fn(x_glob)
            grad = objective_gradient(problem, x_glob)
            err = float(grad @ grad)
            obj = objective(problem, x_glob)
            cr += 2
            trace.rows.append(
                TraceRow(k, round_idx, cr, obj, err, math.nan, time.perf_counter() - start)
            )
            if not math.isfinite(obj) or obj > DIVERGENCE_CAP:
                trace.status = "Diverged"
                break
            if err <= params.tol:
                trace.status = "Converged"
                break
            round_idx += 1
        if k >= params.max_iter:
            trace.status = "IterCap"
            break
        local_fn(x_glob, k)
        k += 1
    return trace


def run_fedavg(problem: FederatedProblem, params: BaselineParams) -> RunTrace:
    """Non-stochastic FedAvg: one full-gradient step per client per iteration."""
    m = problem.m
    xs = [np.zeros(problem.n) for _ in range(m)]

    def aggregate_fn(_x_glob: Array) -> Array:
        new = sum(xs, np.zeros(problem.n)) / m
        for i in range(m):
            xs[i] = new.copy()
        return new

    def local_fn(_x_glob: Array, k: int) -> None:
        step = gamma(params.step_base, k)
        for i, data in enumerate(problem.clients):
            xs[i] = xs[i] - step * loss_gradient(problem.loss, data, xs[i])

    return _run_loop(problem, params, aggregate_fn, local_fn)


def run_fedprox(problem: FederatedProblem, params: BaselineParams) -> RunTrace:
    """FedAvg plus a proximal pull toward the round's global iterate; each
    iteration runs a few GD steps on the regularized sub-problem."""
    m = problem.m
    xs = [np.zeros(problem.n) for _ in range(m)]

    def aggregate_fn(_x_glob: Array) -> Array:
        new = sum(xs, np.zeros(problem.n)) / m
        for i in range(m):
            xs[i] = new.copy()
        return new

    def local_fn(x_glob: Array, k: int) -> None:
        step = gamma(params.step_base, k)
        for i, data in enumerate(problem.clients):
            y = xs[i]
            for _ in range(params.inner_iters):
                g = loss_gradient(problem.loss, data, y)
                if params.prox_mu:
                    g = g + params.prox_mu * (y - x_glob)
                y = y - step * g
            xs[i] = y

    return _run_loop(problem, params, aggregate_fn, local_fn)


def run_fedpd(problem: FederatedProblem, params: BaselineParams) -> RunTrace:
    """Primal-dual trainer: inner GD on the penalized local objective, dual
    ascent on the consensus gap. Each client keeps a local anchor x0_i that
    tracks x_i + eta * lambda_i between aggregations; aggregation replaces
    every anchor with their mean. The local term is f_i/m, the client's share
    of the global objective, matching the consensus formulation of the main
    solver (a bare f_i makes the dual iteration unstable at these steps)."""
    m = problem.m
    xs = [np.zeros(problem.n) for _ in range(m)]
    lams = [np.zeros(problem.n) for _ in range(m)]
    anchors = [np.zeros(problem.n) for _ in range(m)]
    eta = params.eta

    def aggregate_fn(_x_glob: Array) -> Array:
        new = sum(anchors, np.zeros(problem.n)) / m
        for i in range(m):
            anchors[i] = new.copy()
        return new

    def local_fn(_x_glob: Array, k: int) -> None:
        step = gamma(params.eta1_base, k)
        for i, data in enumerate(problem.clients):
            y = xs[i]
            for _ in range(params.inner_iters):
                g = loss_gradient(problem.loss, data, y) / m + lams[i] + (y - anchors[i]) / eta
                y = y - step * g
            xs[i] = y
            lams[i] = lams[i] + (xs[i] - anchors[i]) / eta
            anchors[i] = xs[i] + eta * lams[i]

    return _run_loop(problem, params, aggregate_fn, local_fn)
