"""Scalar viscoplastic (Bingham) flow: yield functional ``beta * int |grad u|``.

Two geometries are provided:

* the circular pipe in radial form (Mosolov problem), with its closed-form
  velocity profile as an oracle, and
* the square duct on a uniform 2D grid.

Both minimize ``int mu/2 |grad u|^2 + beta |grad u| - f u`` with the norm
replaced by a smoothed version and ``gamma`` driven up along a schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .newton import newton_minimize
from .mesh import Grid, gradient_operators
from .smoothing import Smoothing, phi, phi_prime, phi_second
from .vi import default_schedule


@dataclass(frozen=True)
class PipeProblem:
    R: float = 1.0
    mu: float = 1.0
    beta: float = 0.25
    f: float = 1.0
    n: int = 256

    def __post_init__(self):
        if not (self.R > 0 and self.mu > 0):
            raise ValueError("R and mu must be positive")
        if not (self.beta >= 0 and self.f >= 0):
            raise ValueError("beta and f must be nonnegative")
        if self.n < 2:
            raise ValueError("need at least two radial nodes")

    @property
    def h(self) -> float:
        return self.R / self.n

    @property
    def plug_radius(self) -> float:
        """Exact plug radius ``min(2 beta / f, R)``."""
        if self.f == 0:
            return self.R
        return min(2.0 * self.beta / self.f, self.R)


@dataclass(frozen=True)
class DuctProblem:
    grid: Grid
    mu: float = 1.0
    beta: float = 0.1
    f: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.grid.dim != 2:
            raise ValueError("duct flow needs a 2D grid")
        if not self.mu > 0 or not self.beta >= 0:
            raise ValueError("need mu > 0 and beta >= 0")

    def load(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.f, dtype=float), (self.grid.size,)).copy()


@dataclass
class RadialProfile:
    """Nodal radial velocity ``u(r_i)``, ``r_i = i h``, with ``u(R) = 0`` appended."""

    problem: PipeProblem
    r: np.ndarray
    u: np.ndarray
    gamma_final: float
    newton_iterations: int = 0
    stage_energies: list[tuple[float, float]] = field(default_factory=list)

    @property
    def cell_gradient(self) -> np.ndarray:
        return np.diff(self.u) / self.problem.h

    @property
    def cell_centers(self) -> np.ndarray:
        return 0.5 * (self.r[1:] + self.r[:-1])


@dataclass
class DuctSolution:
    problem: DuctProblem
    u: np.ndarray
    gamma_final: float
    newton_iterations: int = 0
    stage_energies: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class RigidZoneReport:
    mask: np.ndarray
    measure: float
    eps_plug: float
    plug_radius: float | None = None


def mosolov_exact(p: PipeProblem, r):
    """Closed-form Bingham pipe profile.

    Shear stress magnitude is ``f r / 2`` by force balance; the fluid yields
    where it exceeds ``beta``.  Integrating ``-mu u' = f r / 2 - beta``
    inward from ``u(R) = 0`` gives the sheared profile; inside
    ``r0 = 2 beta / f`` the velocity is constant.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > p.R * (1 + 1e-14)):
        raise ValueError(f"radius out of range [0, {p.R}]")
    if p.f == 0:
        return np.zeros_like(r)
    r0 = 2.0 * p.beta / p.f
    if r0 >= p.R:
        return np.zeros_like(r)

    def sheared(x):
        return p.f * (p.R**2 - x**2) / (4 * p.mu) - p.beta * (p.R - x) / p.mu

    return np.where(r >= r0, sheared(r), sheared(r0))


# --- radial pipe --------------------------------------------------------------


def _radial_operators(p: PipeProblem):
    n, h = p.n, p.h
    # cell j spans [r_j, r_{j+1}]; u_n = 0 is eliminated.
    D = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n)) / h
    rm = (np.arange(n) + 0.5) * h
    load = h * h * np.arange(n, dtype=float)
    load[0] = h * h / 6.0
    return sp.csr_matrix(D), h * rm, load


def radial_energy(p: PipeProblem, u: np.ndarray, s: Smoothing | None = None) -> float:
    """Energy of interior radial values ``u_0..u_{n-1}``; exact yield term when ``s`` is None."""
    D, cw, load = _radial_operators(p)
    g = D @ u
    yld = p.beta * np.abs(g) if s is None else phi(g, s)
    return float(np.sum(cw * (0.5 * p.mu * g * g + yld)) - p.f * load @ u)


def solve_radial(p: PipeProblem, schedule=None, tol: float = 1e-12, kind: str = "huber-local",
                 max_iter: int = 200) -> RadialProfile:
    """Smoothed Newton on the r-weighted 1D energy along a gamma path."""
    D, cw, load = _radial_operators(p)
    Dt = D.T.tocsr()
    b = p.f * load
    if schedule is None:
        schedule = default_schedule(p.beta)
    u = np.zeros(p.n)
    total = 0
    energies = []
    gamma = schedule[-1]
    for gamma in schedule:
        s = Smoothing(kind, p.beta, gamma)

        def grad(v, s=s):
            g = D @ v
            return Dt @ (cw * (p.mu * g + phi_prime(g, s))) - b

        def hess(v, s=s):
            g = D @ v
            curv = np.minimum(phi_second(g, s), 1e16)
            return (Dt @ sp.diags(cw * (p.mu + curv)) @ D).tocsr()

        u, it, _ = newton_minimize(lambda v, s=s: radial_energy(p, v, s), grad, hess, u, tol, max_iter, gamma, b)
        total += it
        energies.append((gamma, radial_energy(p, u)))
    r = p.h * np.arange(p.n + 1)
    return RadialProfile(
        problem=p,
        r=r,
        u=np.append(u, 0.0),
        gamma_final=float(gamma),
        newton_iterations=total,
        stage_energies=energies,
    )


# --- square duct --------------------------------------------------------------


def duct_energy(p: DuctProblem, u: np.ndarray, s: Smoothing | None = None) -> float:
    grid = p.grid
    gx, gy = gradient_operators(grid)
    m = np.hypot(gx @ u, gy @ u)
    yld = p.beta * m if s is None else phi(m, s)
    quad = 0.5 * p.mu * u @ (grid.unit_stiffness @ u)
    return float(quad + grid.weight * np.sum(yld) - grid.weight * p.load() @ u)


def solve_duct(p: DuctProblem, schedule=None, tol: float = 1e-12, kind: str = "huber-local",
               max_iter: int = 200) -> DuctSolution:
    """Smoothed Newton for the duct energy.

    The viscous term uses the 5-point stiffness; the yield term uses the
    cell-centred averaged gradient of :func:`gradient_operators`.
    """
    grid = p.grid
    gx, gy = gradient_operators(grid)
    gxt, gyt = gx.T.tocsr(), gy.T.tocsr()
    cell = grid.h**2
    K = p.mu * grid.unit_stiffness
    b = grid.weight * p.load()
    if schedule is None:
        schedule = default_schedule(p.beta)
    u = np.zeros(grid.size)
    total = 0
    energies = []
    gamma = schedule[-1]
    for gamma in schedule:
        s = Smoothing(kind, p.beta, gamma)

        def parts(v, s=s):
            ax, ay = gx @ v, gy @ v
            m = np.hypot(ax, ay)
            dpsi = phi_prime(m, s)
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = np.where(m > 0, dpsi / m, phi_second(0.0, s))
            return ax, ay, m, dpsi, ratio

        def grad(v, s=s):
            ax, ay, m, dpsi, ratio = parts(v)
            return K @ v + gxt @ (cell * ratio * ax) + gyt @ (cell * ratio * ay) - b

        def hess(v, s=s):
            ax, ay, m, dpsi, ratio = parts(v)
            curv = np.minimum(phi_second(m, s), 1e16)
            with np.errstate(invalid="ignore", divide="ignore"):
                nx = np.where(m > 0, ax / m, 0.0)
                ny = np.where(m > 0, ay / m, 0.0)
            diff = curv - ratio
            hxx = cell * (ratio + diff * nx * nx)
            hyy = cell * (ratio + diff * ny * ny)
            hxy = cell * diff * nx * ny
            H = (
                K
                + gxt @ sp.diags(hxx) @ gx
                + gyt @ sp.diags(hyy) @ gy
                + gxt @ sp.diags(hxy) @ gy
                + gyt @ sp.diags(hxy) @ gx
            )
            return H.tocsr()

        u, it, _ = newton_minimize(lambda v, s=s: duct_energy(p, v, s), grad, hess, u, tol, max_iter, gamma, b)
        total += it
        energies.append((gamma, duct_energy(p, u)))
    return DuctSolution(problem=p, u=u, gamma_final=float(gamma), newton_iterations=total,
                        stage_energies=energies)


# --- rigid zones --------------------------------------------------------------


def default_eps_plug(beta: float, gamma: float, gradients: np.ndarray) -> float:
    """Gradient level below which the smoothed law cannot resolve plug from shear.

    For ``beta > 0`` this is the upper huber-local breakpoint
    ``(beta + 1/(2 gamma)) / gamma``; for ``beta == 0`` a relative round-off level.
    """
    if beta > 0:
        return (beta + 0.5 / gamma) / gamma
    return max(1e-8 * float(np.max(np.abs(gradients), initial=0.0)), 1e-14)


def detect_plug(solution, eps_plug: float | None = None) -> RigidZoneReport:
    """Mask cells whose gradient magnitude is at most ``eps_plug``.

    Accepts a :class:`RadialProfile` (also reports the plug radius as the
    centre of the outermost cell of the masked run starting at ``r = 0``)
    or a :class:`DuctSolution`.
    """
    if isinstance(solution, RadialProfile):
        p = solution.problem
        g = np.abs(solution.cell_gradient)
        eps = default_eps_plug(p.beta, solution.gamma_final, g) if eps_plug is None else eps_plug
        if not eps > 0:
            raise ValueError("eps_plug must be positive")
        mask = g <= eps
        ring = np.pi * (solution.r[1:] ** 2 - solution.r[:-1] ** 2)
        unmasked = np.flatnonzero(~mask)
        run = mask.size if unmasked.size == 0 else unmasked[0]
        if run == 0:
            radius = 0.0
        elif run == mask.size:
            radius = p.R
        else:
            radius = float(solution.cell_centers[run - 1])
        return RigidZoneReport(mask=mask, measure=float(ring[mask].sum()), eps_plug=eps,
                               plug_radius=radius)
    if isinstance(solution, DuctSolution):
        p = solution.problem
        grid = p.grid
        gx, gy = gradient_operators(grid)
        m = np.hypot(gx @ solution.u, gy @ solution.u)
        eps = default_eps_plug(p.beta, solution.gamma_final, m) if eps_plug is None else eps_plug
        if not eps > 0:
            raise ValueError("eps_plug must be positive")
        mask = (m <= eps).reshape((grid.n + 1,) * 2)
        return RigidZoneReport(mask=mask, measure=float(mask.sum() * grid.h**2), eps_plug=eps)
    raise TypeError(f"cannot detect plugs on {type(solution).__name__}")


def plug_radius_orders(base: PipeProblem, sizes=(128, 256, 512), schedule=None):
    """Plug-radius errors on a refinement ladder and the observed orders between levels."""
    errors = []
    for n in sizes:
        p = PipeProblem(R=base.R, mu=base.mu, beta=base.beta, f=base.f, n=n)
        rep = detect_plug(solve_radial(p, schedule))
        errors.append(abs(rep.plug_radius - p.plug_radius))
    errors = np.array(errors)
    ratios = np.array(sizes[1:], dtype=float) / np.array(sizes[:-1], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log(errors[:-1] / errors[1:]) / np.log(ratios)
    return errors, orders
