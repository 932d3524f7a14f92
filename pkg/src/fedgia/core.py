"""Hybrid GD / inexact-ADMM trainer with periodic aggregation.

One server round covers k0 local iterations. At each aggregation the server
averages the clients' z-vectors, broadcasts the result, picks the subset of
clients that will run the full inexact-ADMM update this round, and every
client refreshes its cached scaled gradient. Non-selected clients apply a
single assignment-style GD hold at the first step of the round and are then
inert until the next aggregation.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import FederatedProblem
from .losses import (
    BoundVariant,
    CurvatureBound,
    LossKind,
    LossModel,
    curvature_bound,
    loss_gradient,
    loss_value,
)

Array = np.ndarray

DIVERGENCE_CAP = 1e12


@dataclass
class AlgoParams:
    k0: int = 1
    t: float | None = None  # None -> default for the loss family
    alpha: float = 1.0
    variant: BoundVariant = BoundVariant.GRAM
    tol: float = 1e-7
    max_iter: int = 10_000
    seed: int = 0

    def __post_init__(self):
        self.variant = BoundVariant(self.variant)
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")
        if self.t is not None and self.t <= 0:
            raise ValueError("t must be > 0")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class ClientState:
    x: Array
    pi: Array
    z: Array
    H: CurvatureBound
    solve_cache: object  # cho_factor result (gram) or scalar 1/(c/m + sigma) (diag)
    g_bar: Array

    def solve(self, v: Array) -> Array:
        """Apply (H/m + sigma*I)^-1 using the cached factorization."""
        if self.H.variant is BoundVariant.GRAM:
            return cho_solve(self.solve_cache, v)
        return self.solve_cache * v


@dataclass
class ServerState:
    x_global: Array
    k: int = 0
    tau: int = 0
    selected: frozenset = frozenset()
    sigma: float = 0.0
    r: float = 0.0


@dataclass
class TraceRow:
    k: int
    tau: int
    cr: int
    objective: float
    error: float
    lagrangian: float
    elapsed_s: float


@dataclass
class InvariantRecord:
    """Per-iteration residuals of the runtime identities, for diagnostics."""

    k: int
    state_identity: float  # max_i ||z_i - x_i - pi_i/sigma|| / (1 + ||z_i||)
    first_order: float  # max_i ||g_bar_i + pi_i + H_i(x_i - x)/m||
    aggregation: float  # ||sum_i (pi_i/sigma + x_i - x)|| right after aggregation
    lagrangian: float
    descent: float  # L_k+1 - L_k
    varpi: float  # sum_i (||dx_glob||^2 + ||dx_i||^2)
    f_global: float


@dataclass
class RunTrace:
    rows: list[TraceRow] = field(default_factory=list)
    status: str = "IterCap"
    invariants: list[InvariantRecord] = field(default_factory=list)
    initial_lagrangian: float = math.nan
    sigma: float = math.nan
    server: ServerState | None = None
    clients: list[ClientState] | None = None

    @property
    def final_objective(self) -> float:
        return self.rows[-1].objective

    @property
    def final_error(self) -> float:
        return self.rows[-1].error

    @property
    def total_cr(self) -> int:
        return self.rows[-1].cr

    @property
    def total_time(self) -> float:
        return self.rows[-1].elapsed_s


def default_t(loss: LossModel, d_total: int, n: int) -> float:
    """Default sigma multiplier t from the experimental configuration."""
    if loss.kind is LossKind.LEAST_SQUARES:
        return 0.15
    return max(0.025, 4.0 * math.log(d_total) / n)


def objective(problem: FederatedProblem, x: Array) -> float:
    """f(x) = (1/m) sum_i f_i(x)."""
    return sum(loss_value(problem.loss, c, x) for c in problem.clients) / problem.m


def objective_gradient(problem: FederatedProblem, x: Array) -> Array:
    g = np.zeros(problem.n)
    for c in problem.clients:
        g += loss_gradient(problem.loss, c, x)
    return g / problem.m


def aggregate(z_list: list[Array]) -> Array:
    if not z_list:
        raise ValueError("nothing to aggregate")
    out = np.zeros_like(z_list[0])
    for z in z_list:  # fixed index order keeps the reduction deterministic
        if z.shape != out.shape:
            raise ValueError("aggregation vectors must share a length")
        out += z
    return out / len(z_list)


def select_clients(m: int, alpha: float, rng: np.random.Generator) -> frozenset:
    """Uniform sample without replacement of round-half-up(alpha*m), at least 1."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    count = max(1, int(math.floor(alpha * m + 0.5)))
    return frozenset(int(i) for i in rng.choice(m, size=count, replace=False))


def initialize(
    problem: FederatedProblem, params: AlgoParams
) -> tuple[ServerState, list[ClientState]]:
    """Zero-initialize all client iterates and build the cached solves."""
    n = problem.n
    m = problem.m
    bounds = [curvature_bound(problem.loss, c, params.variant) for c in problem.clients]
    r = max(b.norm() for b in bounds)
    if r <= 0:
        raise ValueError("all-zero data: curvature bound r = 0 would give sigma = 0")
    t = params.t if params.t is not None else default_t(problem.loss, problem.d, n)
    sigma = t * r / m
    clients = []
    for b in bounds:
        if b.variant is BoundVariant.GRAM:
            cache = cho_factor(b.matrix / m + sigma * np.eye(n))
        else:
            cache = 1.0 / (b.scale / m + sigma)
        clients.append(
            ClientState(
                x=np.zeros(n),
                pi=np.zeros(n),
                z=np.zeros(n),
                H=b,
                solve_cache=cache,
                g_bar=np.zeros(n),
            )
        )
    server = ServerState(x_global=np.zeros(n), sigma=sigma, r=r)
    return server, clients


def refresh_gradients(
    clients: list[ClientState], x_global: Array, problem: FederatedProblem
) -> None:
    """Cache g_bar_i = (1/m) grad f_i(x_global) for every client."""
    m = problem.m
    for state, data in zip(clients, problem.clients):
        state.g_bar = loss_gradient(problem.loss, data, x_global) / m


def local_admm_step(client: ClientState, x_global: Array, sigma: float) -> ClientState:
    client.x = x_global - client.solve(client.g_bar + client.pi)
    client.pi = client.pi + sigma * (client.x - x_global)
    client.z = client.x + client.pi / sigma
    return client


def local_gd_hold(client: ClientState, x_global: Array, sigma: float) -> ClientState:
    client.x = x_global.copy()
    client.pi = -client.g_bar
    client.z = x_global - client.g_bar / sigma
    return client


def augmented_lagrangian(
    server: ServerState, clients: list[ClientState], problem: FederatedProblem
) -> float:
    m = problem.m
    x = server.x_global
    total = 0.0
    for state, data in zip(clients, problem.clients):
        dx = state.x - x
        total += (
            loss_value(problem.loss, data, state.x) / m
            + float(state.pi @ dx)
            + 0.5 * server.sigma * float(dx @ dx)
        )
    return total


def stationarity_residuals(
    server: ServerState, clients: list[ClientState], problem: FederatedProblem
) -> dict[str, float]:
    m = problem.m
    grad_res = 0.0
    consensus_res = 0.0
    pi_sum = np.zeros(problem.n)
    for state, data in zip(clients, problem.clients):
        g = loss_gradient(problem.loss, data, state.x) / m
        grad_res = max(grad_res, float(np.linalg.norm(g + state.pi)))
        consensus_res = max(consensus_res, float(np.linalg.norm(state.x - server.x_global)))
        pi_sum += state.pi
    return {
        "grad_res": grad_res,
        "consensus_res": consensus_res,
        "dual_res": float(np.linalg.norm(pi_sum)),
    }


def _update_clients(
    clients: list[ClientState],
    selected: frozenset,
    x_global: Array,
    sigma: float,
    first_step: bool,
    pool: ThreadPoolExecutor | None,
) -> None:
    def step(i: int) -> None:
        if i in selected:
            local_admm_step(clients[i], x_global, sigma)
        elif first_step:
            local_gd_hold(clients[i], x_global, sigma)
        # non-selected clients are inert for the rest of the round: the hold
        # update is an assignment, so repeating it would be a no-op

    if pool is None:
        for i in range(len(clients)):
            step(i)
    else:
        list(pool.map(step, range(len(clients))))


def run(
    problem: FederatedProblem,
    params: AlgoParams,
    n_workers: int = 1,
    collect_invariants: bool = False,
) -> RunTrace:
    """Run the trainer until the squared-gradient stopping rule or the cap."""
    server, clients = initialize(problem, params)
    rng = np.random.default_rng(params.seed)
    m = problem.m
    sigma = server.sigma
    trace = RunTrace(sigma=sigma)
    trace.initial_lagrangian = augmented_lagrangian(server, clients, problem)

    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    prev_lag = trace.initial_lagrangian
    prev_x_glob = server.x_global.copy()
    prev_xi = [c.x.copy() for c in clients] if collect_invariants else None
    f_glob = math.nan

    k = 0
    cr = 0
    round_idx = 0
    start = time.perf_counter()
    try:
        while True:
            agg_residual = math.nan
            if k % params.k0 == 0:
                new_x = aggregate([c.z for c in clients])
                if collect_invariants:
                    s = sum((c.pi / sigma + c.x - new_x for c in clients), np.zeros(problem.n))
                    agg_residual = float(np.linalg.norm(s))
                server.x_global = new_x
                server.tau = round_idx
                server.selected = select_clients(m, params.alpha, rng)
                refresh_gradients(clients, new_x, problem)
                grad = sum((c.g_bar for c in clients), np.zeros(problem.n))
                err = float(grad @ grad)
                obj = objective(problem, new_x)
                f_glob = obj
                lag = augmented_lagrangian(server, clients, problem)
                cr += 2
                trace.rows.append(
                    TraceRow(k, round_idx, cr, obj, err, lag, time.perf_counter() - start)
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
            first_step = k % params.k0 == 0
            _update_clients(clients, server.selected, server.x_global, sigma, first_step, pool)
            k += 1
            if collect_invariants:
                i1 = max(
                    float(np.linalg.norm(c.z - c.x - c.pi / sigma))
                    / (1.0 + float(np.linalg.norm(c.z)))
                    for c in clients
                )
                i2 = max(
                    float(
                        np.linalg.norm(
                            c.g_bar + c.pi + c.H.apply(c.x - server.x_global) / m
                        )
                    )
                    for c in clients
                )
                lag_now = augmented_lagrangian(server, clients, problem)
                dx_glob = float(np.linalg.norm(server.x_global - prev_x_glob) ** 2)
                varpi = m * dx_glob + sum(
                    float(np.linalg.norm(c.x - px) ** 2) for c, px in zip(clients, prev_xi)
                )
                trace.invariants.append(
                    InvariantRecord(
                        k=k,
                        state_identity=i1,
                        first_order=i2,
                        aggregation=agg_residual,
                        lagrangian=lag_now,
                        descent=lag_now - prev_lag,
                        varpi=varpi,
                        f_global=f_glob,
                    )
                )
                prev_lag = lag_now
                prev_x_glob = server.x_global.copy()
                prev_xi = [c.x.copy() for c in clients]
    finally:
        if pool is not None:
            pool.shutdown()
    server.k = k
    trace.server = server
    trace.clients = clients
    return trace
