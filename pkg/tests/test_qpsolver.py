import numpy as np
import pytest
import scipy.sparse as sp

from relurepair.qpsolver import (DUAL_INFEASIBLE, MAX_ITERATIONS,
                                 PRIMAL_INFEASIBLE, SOLVED, QpConfig,
                                 QpProblem, QpSolver, kkt_residuals, solve_qp)


def _equality_example():
    # min 0.5(z1^2 + z2^2) s.t. z1 + z2 = 2  ->  z = (1, 1), y = -1
    return QpProblem(sp.eye(2, format="csc"), np.zeros(2),
                     sp.csr_matrix(np.array([[1.0, 1.0]])),
                     np.array([2.0]), np.array([2.0]))


def _random_qp(rng, n, m, feasible=True):
    M = rng.normal(size=(n, n))
    P = M.T @ M + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    z0 = rng.normal(size=n)
    slack = rng.uniform(0.5, 2.0, size=m)
    lo, up = A @ z0 - slack, A @ z0 + slack
    return QpProblem(sp.csc_matrix(P), q, sp.csc_matrix(A), lo, up)


class TestSolveQp:
    def test_equality_constrained_symmetric(self):
        res = solve_qp(_equality_example())
        assert res.status == SOLVED
        assert np.allclose(res.z, [1.0, 1.0], atol=1e-8)
        assert res.objective == pytest.approx(1.0, abs=1e-8)

    def test_clamped_box(self):
        # min (z-3)^2 s.t. 0 <= z <= 1  ->  z = 1, objective 4
        prob = QpProblem(sp.csc_matrix(np.array([[2.0]])), np.array([-6.0]),
                         sp.csr_matrix(np.array([[1.0]])),
                         np.array([0.0]), np.array([1.0]))
        res = solve_qp(prob)
        assert res.status == SOLVED
        assert np.allclose(res.z, [1.0], atol=1e-8)
        assert res.objective + 9.0 == pytest.approx(4.0, abs=1e-8)

    def test_primal_infeasible(self):
        A = sp.csr_matrix(np.array([[1.0], [1.0]]))
        prob = QpProblem(sp.csc_matrix(np.array([[2.0]])), np.zeros(1), A,
                         np.array([1.0, -np.inf]), np.array([np.inf, 0.0]))
        assert solve_qp(prob).status == PRIMAL_INFEASIBLE

    def test_dual_infeasible(self):
        prob = QpProblem(sp.csc_matrix((1, 1)), np.array([-1.0]),
                         sp.csr_matrix(np.array([[1.0]])),
                         np.array([0.0]), np.array([np.inf]))
        assert solve_qp(prob).status == DUAL_INFEASIBLE

    def test_unconstrained(self):
        prob = QpProblem(sp.csc_matrix(np.array([[2.0]])), np.array([-4.0]),
                         sp.csr_matrix((0, 1)), np.zeros(0), np.zeros(0))
        res = solve_qp(prob)
        assert res.status == SOLVED
        assert np.allclose(res.z, [2.0], atol=1e-6)

    def test_max_iterations_status(self):
        rng = np.random.default_rng(0)
        prob = _random_qp(rng, 20, 40)
        res = solve_qp(prob, QpConfig(max_iter=25, polish=False))
        assert res.status == MAX_ITERATIONS

    def test_objective_matches_recomputation(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            prob = _random_qp(rng, int(rng.integers(2, 20)), int(rng.integers(1, 30)))
            res = solve_qp(prob)
            assert res.status == SOLVED
            dense = 0.5 * res.z @ (prob.P.toarray() @ res.z) + prob.q @ res.z
            assert abs(res.objective - dense) <= 1e-8 * max(1.0, abs(dense))

    def test_random_psd_batch_kkt(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n, m = int(rng.integers(2, 50)), int(rng.integers(1, 100))
            prob = _random_qp(rng, n, m)
            res = solve_qp(prob)
            assert res.status == SOLVED
            stat, prim, comp = kkt_residuals(prob, res.z, res.y)
            assert stat <= 1e-6 and prim <= 1e-6

    def test_equality_constrained_matches_dense_kkt_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n = int(rng.integers(2, 15))
            m = int(rng.integers(1, n + 1))
            M = rng.normal(size=(n, n))
            P = M.T @ M + 0.5 * np.eye(n)
            q = rng.normal(size=n)
            A = rng.normal(size=(m, n))
            b = rng.normal(size=m)
            prob = QpProblem(sp.csc_matrix(P), q, sp.csc_matrix(A), b.copy(), b.copy())
            res = solve_qp(prob)
            assert res.status == SOLVED
            K = np.block([[P, A.T], [A, np.zeros((m, m))]])
            sol = np.linalg.solve(K, np.concatenate([-q, b]))
            assert np.allclose(res.z, sol[:n], atol=1e-6)

    def test_warm_start_reuses_iterations(self):
        rng = np.random.default_rng(4)
        prob = _random_qp(rng, 20, 40)
        solver = QpSolver(prob.P, prob.A)
        cold = solver.solve(prob.q, prob.lower, prob.upper)
        warm = solver.solve(prob.q, prob.lower, prob.upper, warm=(cold.z, cold.y))
        assert warm.status == SOLVED
        assert warm.iterations <= cold.iterations


class TestKktResiduals:
    def test_polished_equality_example_below_1e9(self):
        prob = _equality_example()
        res = solve_qp(prob)
        assert res.polished
        stat, prim, comp = kkt_residuals(prob, res.z, res.y)
        assert stat < 1e-9 and prim < 1e-9 and comp < 1e-9

    def test_perturbation_scales_stationarity(self):
        prob = _equality_example()
        res = solve_qp(prob)
        stat, _, _ = kkt_residuals(prob, res.z + 1e-3, res.y)
        assert 1e-4 < stat < 1e-2  # ||P . delta|| scale

    def test_zero_problem(self):
        prob = QpProblem(sp.csc_matrix((2, 2)), np.zeros(2),
                         sp.csr_matrix((0, 2)), np.zeros(0), np.zeros(0))
        assert kkt_residuals(prob, np.zeros(2), np.zeros(0)) == (0.0, 0.0, 0.0)

    def test_complementarity_flags_wrong_multiplier(self):
        prob = QpProblem(sp.csc_matrix(np.array([[2.0]])), np.array([-6.0]),
                         sp.csr_matrix(np.array([[1.0]])),
                         np.array([0.0]), np.array([1.0]))
        res = solve_qp(prob)
        # active upper bound with a slack-side multiplier: comp must light up
        _, _, comp = kkt_residuals(prob, np.array([0.5]), res.y)
        assert comp > 1e-3
