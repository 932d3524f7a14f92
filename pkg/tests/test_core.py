import math

import numpy as np
import pytest

from fedgia.core import (
    AlgoParams,
    aggregate,
    augmented_lagrangian,
    initialize,
    local_admm_step,
    local_gd_hold,
    objective,
    objective_gradient,
    default_t,
    refresh_gradients,
    run,
    select_clients,
    stationarity_residuals,
)
from fedgia.data import FederatedProblem, SyntheticSpec, generate_linear_noniid
from fedgia.losses import ClientDataset, LossModel, loss_gradient


def identity_problem():
    return FederatedProblem([ClientDataset(np.eye(2), np.zeros(2))], LossModel("ls"), 2)


def ls_problem(rng, m=4, n=6, d=12):
    clients = [
        ClientDataset(rng.standard_normal((d, n)), rng.standard_normal(d)) for _ in range(m)
    ]
    return FederatedProblem(clients, LossModel("ls"), n)


def weighted_normal_solution(problem):
    """Minimizer of (1/m) sum_i (1/(2 d_i)) ||A_i x - b_i||^2."""
    n = problem.n
    lhs = np.zeros((n, n))
    rhs = np.zeros(n)
    for c in problem.clients:
        lhs += c.features.T @ c.features / c.d
        rhs += c.features.T @ c.labels / c.d
    return np.linalg.solve(lhs, rhs)


class TestInitialize:
    def test_identity_sigma(self):
        server, clients = initialize(identity_problem(), AlgoParams(t=0.15))
        np.testing.assert_allclose(clients[0].H.matrix, np.eye(2) / 2)
        assert server.r == pytest.approx(0.5)
        assert server.sigma == pytest.approx(0.075)

    def test_zero_initial_state_identity(self):
        _, clients = initialize(identity_problem(), AlgoParams())
        for c in clients:
            assert not c.x.any() and not c.pi.any() and not c.z.any()

    @pytest.mark.parametrize("variant", ["gram", "diag"])
    def test_solve_cache_round_trip(self, variant):
        rng = np.random.default_rng(0)
        problem = ls_problem(rng)
        server, clients = initialize(problem, AlgoParams(variant=variant))
        m = problem.m
        for c in clients:
            for _ in range(10):
                v = rng.standard_normal(problem.n)
                back = c.H.apply(c.solve(v)) / m + server.sigma * c.solve(v)
                np.testing.assert_allclose(back, v, atol=1e-10)

    def test_all_zero_data_rejected(self):
        prob = FederatedProblem([ClientDataset(np.zeros((2, 2)), np.zeros(2))], LossModel("ls"), 2)
        with pytest.raises(ValueError, match="sigma"):
            initialize(prob, AlgoParams())

    def test_default_t_values(self):
        assert default_t(LossModel("ls"), 100, 10) == 0.15
        d, n = 8992, 1024
        assert default_t(LossModel("logl2"), d, n) == max(0.025, 4 * math.log(d) / n)


class TestAggregate:
    def test_mean(self):
        out = aggregate([np.array([1.0, 1.0]), np.array([3.0, 3.0])])
        np.testing.assert_array_equal(out, [2.0, 2.0])

    def test_idempotent_on_copies(self):
        v = np.array([0.3, -1.2, 4.0])
        out = aggregate([v.copy() for _ in range(7)])
        np.testing.assert_allclose(out, v)

    def test_matches_elementwise_mean_oracle(self):
        rng = np.random.default_rng(2)
        vecs = [rng.standard_normal(6) for _ in range(5)]
        np.testing.assert_allclose(aggregate(vecs), np.mean(vecs, axis=0), atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])


class TestSelectClients:
    def test_full_participation(self):
        rng = np.random.default_rng(0)
        assert select_clients(4, 1.0, rng) == frozenset({0, 1, 2, 3})

    def test_half_of_128(self):
        rng = np.random.default_rng(0)
        picked = select_clients(128, 0.5, rng)
        assert len(picked) == 64
        assert all(0 <= i < 128 for i in picked)

    def test_minimum_one(self):
        rng = np.random.default_rng(0)
        assert len(select_clients(10, 0.01, rng)) == 1

    def test_uniform_inclusion_frequency(self):
        rng = np.random.default_rng(123)
        counts = np.zeros(10)
        draws = 10_000
        for _ in range(draws):
            for i in select_clients(10, 0.3, rng):
                counts[i] += 1
        freq = counts / draws
        assert np.all(np.abs(freq - 0.3) < 0.02)


class TestLocalUpdates:
    def _state(self, variant="diag"):
        problem = identity_problem()
        server, clients = initialize(problem, AlgoParams(variant=variant, t=0.15))
        return problem, server, clients[0]

    def test_admm_stationary_client(self):
        _, server, c = self._state()
        x_glob = np.array([1.0, -2.0])
        c.g_bar = np.zeros(2)
        local_admm_step(c, x_glob, server.sigma)
        np.testing.assert_allclose(c.x, x_glob)
        np.testing.assert_allclose(c.pi, 0.0, atol=1e-15)
        np.testing.assert_allclose(c.z, x_glob)

    def test_admm_diagonal_closed_form(self):
        problem, server, c = self._state("diag")
        x_glob = np.array([0.5, 1.5])
        c.g_bar = np.array([0.1, -0.2])
        c.pi = np.array([0.05, 0.0])
        cval = c.H.scale
        expected_x = x_glob - (c.g_bar + c.pi) / (cval / problem.m + server.sigma)
        local_admm_step(c, x_glob, server.sigma)
        np.testing.assert_allclose(c.x, expected_x, atol=1e-14)

    @pytest.mark.parametrize("variant", ["gram", "diag"])
    def test_admm_first_order_identity(self, variant):
        rng = np.random.default_rng(3)
        problem = ls_problem(rng)
        server, clients = initialize(problem, AlgoParams(variant=variant))
        x_glob = rng.standard_normal(problem.n)
        refresh_gradients(clients, x_glob, problem)
        for c in clients:
            c.pi = rng.standard_normal(problem.n)
            local_admm_step(c, x_glob, server.sigma)
            res = c.g_bar + c.pi + c.H.apply(c.x - x_glob) / problem.m
            assert np.linalg.norm(res) < 1e-10

    def test_gd_hold_zero_gradient(self):
        _, server, c = self._state()
        x_glob = np.array([1.0, 2.0])
        c.g_bar = np.zeros(2)
        local_gd_hold(c, x_glob, server.sigma)
        np.testing.assert_allclose(c.x, x_glob)
        np.testing.assert_allclose(c.pi, 0.0)
        np.testing.assert_allclose(c.z, x_glob)

    def test_gd_hold_direct_substitution(self):
        _, _, c = self._state()
        c.g_bar = np.array([0.2, 0.0])
        local_gd_hold(c, np.array([1.0, 0.0]), 0.5)
        np.testing.assert_allclose(c.z, [0.6, 0.0])
        np.testing.assert_allclose(c.pi, [-0.2, 0.0])

    def test_gd_hold_idempotent(self):
        _, server, c = self._state()
        c.g_bar = np.array([0.3, -0.4])
        x_glob = np.array([1.0, 1.0])
        local_gd_hold(c, x_glob, server.sigma)
        snap = (c.x.copy(), c.pi.copy(), c.z.copy())
        local_gd_hold(c, x_glob, server.sigma)
        for a, b in zip(snap, (c.x, c.pi, c.z)):
            np.testing.assert_array_equal(a, b)

    def test_state_identity_after_updates(self):
        rng = np.random.default_rng(4)
        problem = ls_problem(rng)
        server, clients = initialize(problem, AlgoParams())
        x_glob = rng.standard_normal(problem.n)
        refresh_gradients(clients, x_glob, problem)
        local_admm_step(clients[0], x_glob, server.sigma)
        local_gd_hold(clients[1], x_glob, server.sigma)
        for c in clients[:2]:
            res = np.linalg.norm(c.z - c.x - c.pi / server.sigma)
            assert res < 1e-10 * (1 + np.linalg.norm(c.z))


class TestRefreshGradients:
    def test_identical_clients_share_gradient(self):
        ds = ClientDataset(np.eye(3), np.arange(3.0))
        problem = FederatedProblem([ds, ClientDataset(np.eye(3), np.arange(3.0))], LossModel("ls"), 3)
        _, clients = initialize(problem, AlgoParams())
        refresh_gradients(clients, np.ones(3), problem)
        np.testing.assert_array_equal(clients[0].g_bar, clients[1].g_bar)

    def test_pooled_gradient_oracle(self):
        rng = np.random.default_rng(5)
        problem = ls_problem(rng)
        _, clients = initialize(problem, AlgoParams())
        x = rng.standard_normal(problem.n)
        refresh_gradients(clients, x, problem)
        pooled = sum(c.g_bar for c in clients)
        np.testing.assert_allclose(pooled, objective_gradient(problem, x), atol=1e-14)

    def test_cache_constant_within_round(self):
        rng = np.random.default_rng(6)
        problem = ls_problem(rng, m=2)
        server, clients = initialize(problem, AlgoParams())
        x = rng.standard_normal(problem.n)
        refresh_gradients(clients, x, problem)
        before = [c.g_bar.tobytes() for c in clients]
        for _ in range(5):
            for c in clients:
                local_admm_step(c, x, server.sigma)
        after = [c.g_bar.tobytes() for c in clients]
        assert before == after


class TestRun:
    def test_m1_least_squares_normal_equations(self):
        rng = np.random.default_rng(8)
        A = rng.standard_normal((15, 4))
        b = rng.standard_normal(15)
        problem = FederatedProblem([ClientDataset(A, b)], LossModel("ls"), 4)
        trace = run(problem, AlgoParams(k0=1, alpha=1.0, tol=1e-10))
        assert trace.status == "Converged"
        x_star = np.linalg.solve(A.T @ A, A.T @ b)
        x_final = trace.server.x_global
        assert np.linalg.norm(x_final - x_star) < 1e-3

    def test_quadratic_mean_problem(self):
        rng = np.random.default_rng(9)
        n = 3
        centers = [rng.standard_normal(n) for _ in range(4)]
        clients = [ClientDataset(np.eye(n), c) for c in centers]
        problem = FederatedProblem(clients, LossModel("ls"), n)
        trace = run(problem, AlgoParams(k0=2, alpha=1.0, tol=1e-10))
        assert trace.status == "Converged"
        np.testing.assert_allclose(trace.server.x_global, np.mean(centers, axis=0), atol=1e-3)

    def test_schedule_contract(self):
        rng = np.random.default_rng(10)
        problem = ls_problem(rng, m=3)
        trace = run(problem, AlgoParams(k0=5, tol=1e-12, max_iter=40))
        ks = [r.k for r in trace.rows]
        assert ks == [k for k in range(0, ks[-1] + 1, 5)]
        assert [r.cr for r in trace.rows] == [2 * (i + 1) for i in range(len(ks))]

    def test_m4_weighted_normal_equations(self):
        rng = np.random.default_rng(12)
        problem = ls_problem(rng, m=4, n=5, d=18)
        trace = run(problem, AlgoParams(k0=3, alpha=1.0, tol=1e-10))
        assert trace.status == "Converged"
        x_star = weighted_normal_solution(problem)
        assert np.linalg.norm(trace.server.x_global - x_star) < 1e-3

    def test_partial_participation_converges(self):
        problem = generate_linear_noniid(SyntheticSpec(m=16, n=20, d_range=(50, 150), seed=14))
        trace = run(problem, AlgoParams(k0=2, alpha=0.5, tol=1e-8, seed=1))
        assert trace.status == "Converged"

    def test_worker_count_does_not_change_trajectory(self):
        prob_spec = SyntheticSpec(m=8, n=10, d_range=(10, 20), seed=21)
        params = AlgoParams(k0=3, alpha=0.5, tol=1e-9, seed=5)
        t1 = run(generate_linear_noniid(prob_spec), params, n_workers=1)
        t8 = run(generate_linear_noniid(prob_spec), params, n_workers=8)
        assert [r.objective for r in t1.rows] == [r.objective for r in t8.rows]
        assert [r.error for r in t1.rows] == [r.error for r in t8.rows]
        np.testing.assert_array_equal(t1.server.x_global, t8.server.x_global)


class TestDiagnostics:
    def test_lagrangian_at_consensus_equals_objective(self):
        rng = np.random.default_rng(15)
        problem = ls_problem(rng)
        server, clients = initialize(problem, AlgoParams())
        x = rng.standard_normal(problem.n)
        server.x_global = x
        for c in clients:
            c.x = x.copy()
            c.pi = np.zeros(problem.n)
        lag = augmented_lagrangian(server, clients, problem)
        assert lag == pytest.approx(objective(problem, x), rel=1e-12)

    def test_lagrangian_scalar_hand_case(self):
        # one client, n=1: L = f(x1) + pi*(x1-x) + sigma/2 (x1-x)^2
        ds = ClientDataset(np.array([[1.0]]), np.array([2.0]))
        problem = FederatedProblem([ds], LossModel("ls"), 1)
        server, clients = initialize(problem, AlgoParams(t=0.15))
        server.x_global = np.array([1.0])
        clients[0].x = np.array([3.0])
        clients[0].pi = np.array([0.25])
        f1 = 0.5 * (3.0 - 2.0) ** 2
        expected = f1 + 0.25 * (3.0 - 1.0) + server.sigma / 2 * (3.0 - 1.0) ** 2
        assert augmented_lagrangian(server, clients, problem) == pytest.approx(expected)

    def test_stationarity_residuals_zero_at_stationary_state(self):
        rng = np.random.default_rng(16)
        problem = ls_problem(rng, m=2)
        server, clients = initialize(problem, AlgoParams())
        x = weighted_normal_solution(problem)
        server.x_global = x
        for c, data in zip(clients, problem.clients):
            c.x = x.copy()
            c.pi = -loss_gradient(problem.loss, data, x) / problem.m
        res = stationarity_residuals(server, clients, problem)
        assert res["grad_res"] < 1e-12
        assert res["consensus_res"] == 0.0
        assert res["dual_res"] < 1e-12

    def test_residuals_nonnegative(self):
        rng = np.random.default_rng(17)
        problem = ls_problem(rng, m=2)
        server, clients = initialize(problem, AlgoParams())
        res = stationarity_residuals(server, clients, problem)
        assert all(v >= 0 for v in res.values())

    def test_converged_run_residuals_small(self):
        rng = np.random.default_rng(18)
        problem = ls_problem(rng, m=1, n=4, d=10)
        trace = run(problem, AlgoParams(k0=1, tol=1e-10))
        res = stationarity_residuals(trace.server, trace.clients, problem)
        assert all(v < 1e-3 for v in res.values())


class TestParams:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(k0=0), dict(t=-1.0), dict(alpha=0.0), dict(alpha=1.5), dict(tol=0.0), dict(max_iter=0)],
    )
    def test_invalid_params_rejected(self, kwargs):
        with pytest.raises(ValueError):
            AlgoParams(**kwargs)
