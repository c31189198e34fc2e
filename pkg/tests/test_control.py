import numpy as np
import pytest

from yieldvi.control import (
    ControlProblem,
    adjoint_solve,
    evaluate,
    optimize,
    reduced_gradient,
    reduced_objective,
    state_solve,
)
from yieldvi.mesh import assemble_stiffness, build_grid, inner_l2
from yieldvi.smoothing import Smoothing
from yieldvi.vi import continuation_solve


def kkt_oracle(A, z_d, alpha):
    """Dense solve of A u = W f, A p = W (u - z_d), alpha f + p = 0."""
    n = A.grid.size
    w = A.grid.weight
    M = A.matrix.toarray()
    I, Z = np.eye(n), np.zeros((n, n))
    K = np.block([[M, -w * I, Z], [-w * I, Z, M], [Z, alpha * I, I]])
    rhs = np.concatenate([np.zeros(n), -w * z_d, np.zeros(n)])
    u, f, p = np.split(np.linalg.solve(K, rhs), 3)
    return u, f, p


@pytest.fixture
def small():
    return assemble_stiffness(build_grid(1, 3))


@pytest.fixture
def wave_instance():
    g = build_grid(1, 64)
    A = assemble_stiffness(g)
    z_d = g.sample(lambda x: np.sin(np.pi * x))
    f = g.sample(lambda x: 3 * np.sin(2 * np.pi * x) + 1)
    return A, z_d, f


class TestObjective:
    def test_zero(self, small):
        cp = ControlProblem(small, np.zeros(3))
        assert reduced_objective(np.zeros(3), cp, 1e3) == 0.0

    def test_tracking_vanishes(self, op1d):
        f = np.full(op1d.grid.size, 2.0)
        cp = ControlProblem(op1d, np.zeros(op1d.grid.size), alpha=0.1)
        u = state_solve(f, cp, 1e3)
        cp = ControlProblem(op1d, u, alpha=0.1)
        assert reduced_objective(f, cp, 1e3) == pytest.approx(0.05 * inner_l2(op1d.grid, f, f), rel=1e-12)

    def test_linear_zero_control(self, small):
        cp = ControlProblem(small, np.ones(3), alpha=1.0, beta=0.0)
        assert reduced_objective(np.zeros(3), cp, 10.0) == pytest.approx(0.5 * 3 * 0.25)

    def test_bad_gamma(self, small):
        with pytest.raises(ValueError):
            reduced_objective(np.zeros(3), ControlProblem(small, np.zeros(3)), 0.0)

    @pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"beta": -1.0}, {"method": "newton"}, {"schedule": ()}])
    def test_invalid_problem(self, small, kw):
        with pytest.raises(ValueError):
            ControlProblem(small, np.zeros(3), **kw)


class TestAdjoint:
    def test_zero_rhs(self, op1d):
        u = np.linspace(0, 1, op1d.grid.size)
        cp = ControlProblem(op1d, u)
        assert not np.any(adjoint_solve(u, cp, 1e3))

    def test_linear_case(self, op1d, rng):
        z_d = rng.standard_normal(op1d.grid.size)
        cp = ControlProblem(op1d, z_d, beta=0.0)
        u = rng.standard_normal(op1d.grid.size)
        np.testing.assert_allclose(adjoint_solve(u, cp, 1e3), op1d.solve(op1d.grid.weight * (u - z_d)),
                                   atol=1e-12)

    def test_maximum_principle(self, op1d, rng):
        u = rng.standard_normal(op1d.grid.size) * 0.01
        z_d = u + np.abs(rng.standard_normal(u.size))
        cp = ControlProblem(op1d, z_d)
        assert np.all(adjoint_solve(u, cp, 1e3) <= 0)


class TestGradient:
    def test_linear_oracle(self):
        A = assemble_stiffness(build_grid(1, 5))
        z_d = np.array([0.1, 0.4, 0.2, -0.3, 0.5])
        alpha = 0.05
        cp = ControlProblem(A, z_d, alpha=alpha, beta=0.0)
        f = np.array([1.0, -2.0, 0.5, 0.3, 1.2])
        w = A.grid.weight
        M = A.matrix.toarray()
        u = np.linalg.solve(M, w * f)
        # Riesz representative in L2 of d/df [1/2 ||u - z_d||^2 + alpha/2 ||f||^2].
        grad = alpha * f + np.linalg.solve(M, w * (u - z_d))
        np.testing.assert_allclose(reduced_gradient(f, cp, 10.0), grad, atol=1e-12)

    def test_central_differences(self, wave_instance):
        A, z_d, f = wave_instance
        cp = ControlProblem(A, z_d, alpha=1e-2, beta=1.0, forward_tol=1e-13)
        rng = np.random.default_rng(4)
        g = reduced_gradient(f, cp, 1e3)
        t = 1e-5
        for _ in range(3):
            h = rng.standard_normal(f.size)
            fd = (reduced_objective(f + t * h, cp, 1e3) - reduced_objective(f - t * h, cp, 1e3)) / (2 * t)
            exact = inner_l2(A.grid, g, h)
            assert abs(fd - exact) / abs(exact) <= 1e-5

    def test_zero_at_stationary_point(self, small):
        z_d = np.ones(3)
        cp = ControlProblem(small, z_d, alpha=1e-2, beta=0.0, schedule=(1e3,), tol_opt=1e-12)
        it, hist = optimize(cp)
        assert it.gradient_norm <= hist.tol_opt


class TestOptimize:
    def test_trivial_minimum(self, op1d):
        cp = ControlProblem(op1d, np.zeros(op1d.grid.size))
        it, hist = optimize(cp)
        assert not np.any(it.f)
        assert len(hist.rows) == len(cp.gammas())

    @pytest.mark.parametrize("method", ["gradient", "lbfgs"])
    def test_linear_kkt(self, small, method):
        z_d = np.ones(3)
        cp = ControlProblem(small, z_d, alpha=1e-2, beta=0.0, schedule=(1e3,), tol_opt=1e-12, method=method)
        it, _ = optimize(cp)
        u, f, p = kkt_oracle(small, z_d, 1e-2)
        np.testing.assert_allclose(it.f, f, atol=1e-8)
        np.testing.assert_allclose(it.u, u, atol=1e-8)
        np.testing.assert_allclose(it.p, p, atol=1e-8)

    def test_descent_below_zero_control(self):
        g = build_grid(1, 32)
        A = assemble_stiffness(g)
        z_d = continuation_solve(A, np.full(g.size, 2.0), Smoothing("huber-local", 1.0, 10.0)).u
        cp = ControlProblem(A, z_d, alpha=1e-4, beta=1.0, f0=np.full(g.size, 1.5), schedule=(10.0, 100.0, 1e3),
                            method="lbfgs", max_iter=500)
        j0 = reduced_objective(np.zeros(g.size), cp, 1e3)
        it, _ = optimize(cp)
        assert it.J < j0

    def test_history_monotone_per_stage(self, wave_instance):
        A, z_d, f = wave_instance
        cp = ControlProblem(A, z_d, alpha=1e-3, f0=f, schedule=(10.0, 100.0, 1e3), tol_opt=1e-8)
        it, hist = optimize(cp)
        for gamma in cp.gammas():
            J = [r.J for r in hist.stage_rows(gamma)]
            assert all(b <= a for a, b in zip(J, J[1:]))
        assert it.gradient_norm <= hist.tol_opt or hist.stalled
        assert len(hist.stages) == 3

    def test_lbfgs_agrees_with_gradient(self, wave_instance):
        A, z_d, f = wave_instance
        base = dict(alpha=1e-2, f0=f, schedule=(100.0,), tol_opt=1e-9)
        a, _ = optimize(ControlProblem(A, z_d, **base))
        b, _ = optimize(ControlProblem(A, z_d, method="lbfgs", **base))
        assert np.sqrt(A.grid.weight) * np.linalg.norm(a.f - b.f) < 1e-6

    def test_evaluate_consistent(self, wave_instance):
        A, z_d, f = wave_instance
        cp = ControlProblem(A, z_d)
        it = evaluate(f, cp, 100.0)
        np.testing.assert_allclose(it.gradient, cp.alpha * f + it.p)
        assert it.J == pytest.approx(reduced_objective(f, cp, 100.0), rel=1e-12)
