import numpy as np
import pytest

from yieldvi.mesh import assemble_stiffness, build_grid
from yieldvi.bingham import (
    DuctProblem,
    PipeProblem,
    detect_plug,
    duct_energy,
    mosolov_exact,
    plug_radius_orders,
    solve_duct,
    solve_radial,
)

MOSOLOV = PipeProblem(R=1.0, mu=1.0, beta=0.25, f=1.0, n=512)


class TestMosolovExact:
    def test_sheared_value(self):
        assert mosolov_exact(MOSOLOV, 0.75) == pytest.approx(0.046875)

    @pytest.mark.parametrize("r", [0.0, 0.2, 0.5])
    def test_plug_value(self, r):
        assert mosolov_exact(MOSOLOV, r) == pytest.approx(0.0625)

    def test_critical_no_flow(self):
        p = PipeProblem(R=1.0, mu=1.0, beta=1.0, f=2.0)
        np.testing.assert_array_equal(mosolov_exact(p, np.linspace(0, 1, 11)), 0.0)

    def test_newtonian_limit(self):
        p = PipeProblem(R=2.0, mu=3.0, beta=0.0, f=1.5)
        r = np.linspace(0, 2, 9)
        np.testing.assert_allclose(mosolov_exact(p, r), 1.5 * (4 - r**2) / 12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            mosolov_exact(MOSOLOV, 1.5)

    def test_zero_load(self):
        p = PipeProblem(beta=0.3, f=0.0)
        assert not np.any(mosolov_exact(p, np.linspace(0, 1, 5)))

    def test_continuous_c1_at_plug(self):
        r0 = 0.5
        d = 1e-7
        slope = (mosolov_exact(MOSOLOV, r0 + d) - mosolov_exact(MOSOLOV, r0)) / d
        assert abs(slope) < 1e-6


class TestRadial:
    def test_matches_closed_form(self):
        sol = solve_radial(MOSOLOV)
        exact = mosolov_exact(MOSOLOV, sol.r)
        assert np.max(np.abs(sol.u - exact)) / np.max(exact) <= 1e-2

    def test_newtonian_second_order(self):
        errs = []
        for n in (32, 64):
            p = PipeProblem(beta=0.0, n=n)
            sol = solve_radial(p, schedule=[10.0])
            errs.append(np.max(np.abs(sol.u - mosolov_exact(p, sol.r))))
        assert errs[1] < errs[0] / 3.0

    def test_no_flow_below_threshold(self):
        p = PipeProblem(beta=0.6, f=1.0, n=128)
        assert np.max(np.abs(solve_radial(p).u)) <= 1e-8

    def test_monotone_profile(self):
        assert np.all(np.diff(solve_radial(MOSOLOV).u) <= 1e-10)

    def test_energy_nonincreasing_over_stages(self):
        e = [en for _, en in solve_radial(PipeProblem(n=128)).stage_energies]
        assert all(b <= a + 1e-12 * abs(a) for a, b in zip(e, e[1:]))

    def test_plug_radius(self):
        rep = detect_plug(solve_radial(MOSOLOV))
        assert abs(rep.plug_radius - 0.5) <= 2 * MOSOLOV.h
        assert 0 <= rep.measure <= np.pi

    def test_plug_radius_first_order(self):
        _, orders = plug_radius_orders(MOSOLOV, sizes=(64, 128, 256, 512))
        assert np.all(orders >= 0.8)

    def test_newtonian_plug_vanishes(self):
        measures = []
        for n in (64, 128):
            rep = detect_plug(solve_radial(PipeProblem(beta=0.0, n=n), schedule=[10.0]))
            measures.append(rep.measure)
        assert measures[1] <= measures[0] and measures[1] < 1e-2

    def test_bad_problem(self):
        with pytest.raises(ValueError):
            PipeProblem(mu=0.0)


def _symmetries(v):
    return [v, v[::-1], v[:, ::-1], v[::-1, ::-1], v.T, v.T[::-1], v.T[:, ::-1], v.T[::-1, ::-1]]


class TestDuct:
    grid = build_grid(2, 31)

    def test_newtonian_is_poisson(self):
        p = DuctProblem(self.grid, beta=0.0, f=1.0)
        u = solve_duct(p, schedule=[10.0]).u
        ref = assemble_stiffness(self.grid).solve(self.grid.weight * np.ones(self.grid.size))
        np.testing.assert_allclose(u, ref, atol=1e-12)

    def test_zero_load(self):
        assert not np.any(solve_duct(DuctProblem(self.grid, beta=0.1, f=0.0)).u)

    def test_symmetry(self):
        u = solve_duct(DuctProblem(self.grid, beta=0.1, f=1.0)).u.reshape(self.grid.shape)
        for v in _symmetries(u):
            np.testing.assert_allclose(v, u, atol=1e-8)

    def test_maximum_at_centre(self):
        u = solve_duct(DuctProblem(self.grid, beta=0.1, f=1.0)).u.reshape(self.grid.shape)
        c = self.grid.n // 2
        assert u[c, c] == pytest.approx(u.max())

    def test_energy_nonincreasing_over_stages(self):
        e = [en for _, en in solve_duct(DuctProblem(self.grid, beta=0.1)).stage_energies]
        assert all(b <= a + 1e-12 * abs(a) for a, b in zip(e, e[1:]))

    def test_central_plug(self):
        sol = solve_duct(DuctProblem(self.grid, beta=0.1))
        rep = detect_plug(sol)
        c = self.grid.n // 2
        assert rep.mask[c : c + 2, c : c + 2].all()
        assert 0 < rep.measure < 1

    def test_minimizes_duct_energy(self, rng):
        p = DuctProblem(self.grid, beta=0.1)
        u = solve_duct(p).u
        e0 = duct_energy(p, u)
        for _ in range(10):
            assert duct_energy(p, u + 1e-4 * rng.standard_normal(u.size)) >= e0 - 1e-12

    def test_zero_field_fully_masked(self):
        p = DuctProblem(self.grid, beta=0.1)
        from yieldvi.bingham import DuctSolution

        rep = detect_plug(DuctSolution(p, np.zeros(self.grid.size), gamma_final=1e8))
        assert rep.mask.all()
        assert rep.measure == pytest.approx(1.0)

    def test_needs_2d_grid(self):
        with pytest.raises(ValueError):
            DuctProblem(build_grid(1, 5))
