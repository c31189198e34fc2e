"""Empirical checks of Lipschitz continuity and directional differentiability of the solution map.

``S(f)`` is the forward solution of :func:`yieldvi.vi.continuation_solve`.
The directional derivative ``eta = S'(f; h)`` is predicted by the
first-kind inequality over the critical cone of ``(u, q)`` and compared to
difference quotients ``(S(f + t h) - S(f)) / t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import EllipticOperator, Grid, assemble_stiffness, inner_l2, norm_dual, norm_v
from .smoothing import Smoothing
from .vi import VISolution, continuation_solve, critical_cone, solve_vi_first_kind

__all__ = [
    "SolverConfig",
    "DerivativeProbe",
    "LipschitzProbe",
    "smooth_random_field",
    "forward",
    "directional_derivative",
    "fd_compare",
    "lipschitz_probe",
]

DEFAULT_STEPS = (1e-1, 1e-2, 1e-3)


@dataclass(frozen=True)
class SolverConfig:
    """Forward-solve settings shared by every solve of a probe."""

    beta: float = 1.0
    kind: str = "huber-local"
    schedule: tuple[float, ...] | None = None
    tol: float = 1e-10
    exact: bool = True

    def smoothing(self) -> Smoothing:
        gamma = self.schedule[0] if self.schedule else 10.0
        return Smoothing(self.kind, self.beta, gamma)


def forward(A: EllipticOperator, f, cfg: SolverConfig) -> VISolution:
    return continuation_solve(A, f, cfg.smoothing(), schedule=cfg.schedule, tol=cfg.tol, exact=cfg.exact)


def smooth_random_field(grid: Grid, rng: np.random.Generator, modes: int = 4, amplitude: float = 1.0):
    """Sum of a few low-frequency sine modes with normal coefficients."""
    coords = grid.coords()
    L = grid.extent
    out = np.zeros(grid.size)
    ks = np.arange(1, modes + 1)
    if grid.dim == 1:
        (x,) = coords
        for k, c in zip(ks, rng.standard_normal(modes)):
            out += c * np.sin(k * np.pi * x / L) / k
    else:
        x, y = coords
        for k in ks:
            for m in ks:
                c = rng.standard_normal()
                out += c * np.sin(k * np.pi * x / L) * np.sin(m * np.pi * y / L) / (k * m)
    return amplitude * out


def directional_derivative(A: EllipticOperator, f, h, cfg: SolverConfig, base: VISolution | None = None):
    """Predicted derivative ``eta`` of ``S`` at ``f`` in direction ``h``.

    ``eta`` solves the first-kind inequality with right-hand side ``W h`` over
    the critical cone: free where ``u != 0``, zero where ``|q| < beta``, and
    sign-constrained by ``q`` on the biactive set.
    """
    h = np.asarray(h, dtype=float)
    A.grid.check(h)
    if not np.any(h):
        return np.zeros_like(h)
    sol = forward(A, f, cfg) if base is None else base
    cone = critical_cone(sol.sets, sol.q, cfg.beta)
    return solve_vi_first_kind(A, A.grid.weight * h, cone)


@dataclass
class DerivativeProbe:
    f: np.ndarray
    h: np.ndarray
    t_list: tuple[float, ...] = DEFAULT_STEPS
    eta: np.ndarray | None = None
    quotients: list[np.ndarray] = field(default_factory=list, repr=False)
    backward: list[np.ndarray] = field(default_factory=list, repr=False)
    errors_v: list[float] = field(default_factory=list)
    backward_errors_v: list[float] = field(default_factory=list)
    pairing_errors: list[np.ndarray] = field(default_factory=list, repr=False)
    eta_norm: float = 0.0

    def __post_init__(self):
        t = tuple(float(s) for s in self.t_list)
        if not t or any(s <= 0 for s in t) or any(b >= a for a, b in zip(t, t[1:])):
            raise ValueError("t_list must be positive and strictly decreasing")
        self.t_list = t

    @property
    def monotone(self) -> bool:
        e = self.errors_v
        return all(b < a for a, b in zip(e, e[1:]))

    def relative_final(self) -> float:
        if not self.errors_v:
            return np.nan
        return self.errors_v[-1] / self.eta_norm if self.eta_norm > 0 else self.errors_v[-1]


def _validate_steps(t_list, tol):
    # Below 1e-4 the quotient error is dominated by the forward tolerance unless it scales down too.
    t_min = min(t_list)
    if t_min < 1e-4 and tol > 1e-10 * t_min / 1e-4:
        raise ValueError(
            f"step {t_min:g} is below 1e-4; tighten the forward tolerance to at most "
            f"{1e-10 * t_min / 1e-4:g} (got {tol:g})"
        )


def fd_compare(A: EllipticOperator, probe: DerivativeProbe, cfg: SolverConfig, probes=None,
               two_sided: bool = False) -> DerivativeProbe:
    """Fill quotients, their V-distances to ``eta`` and pairing errors.

    ``probes`` is a list of nodal test fields ``w``; the pairing error of a
    quotient is ``|<quotient - eta, w>_{L2}|``.  With ``two_sided`` the
    backward quotients ``(S(f - t h) - S(f)) / (-t)`` are filled as well.
    """
    _validate_steps(probe.t_list, cfg.tol)
    grid = A.grid
    base = forward(A, probe.f, cfg)
    if probe.eta is None:
        probe.eta = directional_derivative(A, probe.f, probe.h, cfg, base)
    probe.eta_norm = norm_v(grid, probe.eta)
    probes = [] if probes is None else list(probes)
    probe.quotients, probe.errors_v, probe.pairing_errors = [], [], []
    probe.backward, probe.backward_errors_v = [], []
    for t in probe.t_list:
        qt = (forward(A, probe.f + t * probe.h, cfg).u - base.u) / t
        probe.quotients.append(qt)
        probe.errors_v.append(norm_v(grid, qt - probe.eta))
        probe.pairing_errors.append(np.array([abs(inner_l2(grid, qt - probe.eta, w)) for w in probes]))
        if two_sided:
            qb = (forward(A, probe.f - t * probe.h, cfg).u - base.u) / (-t)
            probe.backward.append(qb)
            probe.backward_errors_v.append(norm_v(grid, qb - probe.eta))
    return probe


@dataclass
class LipschitzProbe:
    ratios: np.ndarray
    bound: float
    pairs: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list, repr=False)

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios, initial=0.0))

    def holds(self, slack: float = 1e-8) -> bool:
        return self.max_ratio <= self.bound + slack


def lipschitz_ratio(A: EllipticOperator, f1, f2, cfg: SolverConfig) -> float:
    """``||S(f1) - S(f2)||_V / ||f1 - f2||_{V'}``, defined as 0 when ``f1 == f2``."""
    df = np.asarray(f1, dtype=float) - np.asarray(f2, dtype=float)
    den = norm_dual(A.grid, df)
    if den == 0:
        return 0.0
    du = forward(A, f1, cfg).u - forward(A, f2, cfg).u
    return norm_v(A.grid, du) / den


def lipschitz_probe(grid: Grid, mu: float, n_samples: int, cfg: SolverConfig, seed: int = 0,
                    amplitude: float = 4.0, modes: int = 4) -> LipschitzProbe:
    """Seeded pairs of smooth random loads and their solution-map ratios against ``1/mu``."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    A = assemble_stiffness(grid, mu)
    rng = np.random.default_rng(seed)
    ratios, pairs = [], []
    for _ in range(n_samples):
        f1 = smooth_random_field(grid, rng, modes, amplitude)
        f2 = smooth_random_field(grid, rng, modes, amplitude)
        pairs.append((f1, f2))
        ratios.append(lipschitz_ratio(A, f1, f2, cfg))
    return LipschitzProbe(ratios=np.asarray(ratios), bound=1.0 / mu, pairs=pairs)
