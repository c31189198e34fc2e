"""Tracking-type optimal control of the threshold inequality.

The problem is

    minimize  J(f) = 1/2 ||u - z_d||^2 + alpha/2 ||f||^2,   u = S(f),

with ``S`` the solution map of the forward inequality.  It is handled by
regularize-then-optimize: for each ``gamma`` of a schedule the smoothed
state equation replaces ``S``, the reduced gradient ``alpha f + p`` comes
from the adjoint equation

    (A + W diag(phi''(u))) p = W (u - z_d),

and a descent loop with Armijo backtracking drives it to zero.  Controls
and states are warm-started across the schedule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import LineSearchFailure, NewtonNonconvergence
from .mesh import EllipticOperator, inner_l2, solve_sparse_spd
from .smoothing import Smoothing
from .vi import _curvature, default_schedule, extract_multiplier, solve_regularized

log = logging.getLogger(__name__)

__all__ = [
    "ControlProblem",
    "ControlIterate",
    "HistoryRow",
    "OptimizationHistory",
    "state_solve",
    "reduced_objective",
    "adjoint_solve",
    "reduced_gradient",
    "evaluate",
    "optimize",
]

ARMIJO_C = 1e-4
BACKTRACK = 0.5
MIN_STEP = 1e-14
STALL_STEPS = 10


@dataclass(frozen=True)
class ControlProblem:
    """Data of the control problem.

    ``tol_opt`` is the L2 gradient-norm target of every stage; ``None``
    means ``1e-8 * max(1, ||grad J(f0)||)``.  ``method`` selects steepest
    descent (``"gradient"``) or limited-memory BFGS (``"lbfgs"``).
    """

    A: EllipticOperator
    z_d: np.ndarray
    alpha: float = 1e-2
    beta: float = 1.0
    f0: np.ndarray | None = None
    schedule: tuple[float, ...] | None = None
    kind: str = "huber-local"
    tol_opt: float | None = None
    max_iter: int = 2000
    forward_tol: float = 1e-12
    method: str = "gradient"
    memory: int = 10

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.method not in ("gradient", "lbfgs"):
            raise ValueError(f"unknown method {self.method!r}")
        object.__setattr__(self, "z_d", np.asarray(self.z_d, dtype=float))
        self.A.grid.check(self.z_d)
        if self.f0 is not None:
            object.__setattr__(self, "f0", np.asarray(self.f0, dtype=float))
            self.A.grid.check(self.f0)
        if self.schedule is not None:
            sched = tuple(float(g) for g in self.schedule)
            if not sched or any(b <= a for a, b in zip(sched, sched[1:])):
                raise ValueError("gamma schedule must be nonempty and strictly increasing")
            object.__setattr__(self, "schedule", sched)

    @property
    def grid(self):
        return self.A.grid

    def gammas(self) -> tuple[float, ...]:
        if self.schedule is not None:
            return self.schedule
        return tuple(default_schedule(self.beta))

    def smoothing(self, gamma: float) -> Smoothing:
        return Smoothing(self.kind, self.beta, gamma)

    def initial_control(self) -> np.ndarray:
        return np.zeros(self.grid.size) if self.f0 is None else self.f0.copy()


@dataclass
class ControlIterate:
    f: np.ndarray
    u: np.ndarray
    p: np.ndarray
    J: float
    gradient: np.ndarray
    gradient_norm: float
    gamma: float
    grid_weight: float = 1.0

    def multiplier(self, cp: ControlProblem) -> np.ndarray:
        """Dual multiplier ``q = f - (A u) / w`` of the state."""
        return extract_multiplier(cp.A, self.u, self.f)


@dataclass
class HistoryRow:
    gamma: float
    iteration: int
    J: float
    gradient_norm: float
    step: float


@dataclass
class OptimizationHistory:
    rows: list[HistoryRow] = field(default_factory=list)
    stages: list[ControlIterate] = field(default_factory=list)
    tol_opt: float = 0.0
    stalled: list[float] = field(default_factory=list)

    def stage_rows(self, gamma: float) -> list[HistoryRow]:
        return [r for r in self.rows if r.gamma == gamma]

    def stage_differences(self) -> np.ndarray:
        """L2 distances between the controls of consecutive schedule stages."""
        out = []
        for a, b in zip(self.stages, self.stages[1:]):
            out.append(np.sqrt(b.grid_weight * np.sum((a.f - b.f) ** 2)))
        return np.asarray(out)


def state_solve(f, cp: ControlProblem, gamma: float, u0=None) -> np.ndarray:
    """Smoothed state at ``gamma``; falls back to continuation when a warm start fails."""
    s = cp.smoothing(gamma)
    try:
        return solve_regularized(cp.A, f, s, u0=u0, tol=cp.forward_tol)
    except NewtonNonconvergence:
        log.info("warm-started state solve failed at gamma=%g; restarting the path", gamma)
    u = None
    for g in cp.gammas():
        if g >= gamma:
            break
        u = solve_regularized(cp.A, f, cp.smoothing(g), u0=u, tol=cp.forward_tol)
    return solve_regularized(cp.A, f, s, u0=u, tol=cp.forward_tol)


def _objective(cp: ControlProblem, f, u) -> float:
    d = u - cp.z_d
    return 0.5 * inner_l2(cp.grid, d, d) + 0.5 * cp.alpha * inner_l2(cp.grid, f, f)


def reduced_objective(f, cp: ControlProblem, gamma: float, u0=None) -> float:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    f = np.asarray(f, dtype=float)
    cp.grid.check(f)
    return _objective(cp, f, state_solve(f, cp, gamma, u0))


def adjoint_solve(u, cp: ControlProblem, gamma: float) -> np.ndarray:
    """Solve ``(A + W diag phi''(u)) p = W (u - z_d)``."""
    u = np.asarray(u, dtype=float)
    cp.grid.check(u)
    w = cp.grid.weight
    curv = _curvature(u, cp.smoothing(gamma))
    M = (cp.A.matrix + sp.diags(w * curv)).tocsr()
    return solve_sparse_spd(M, w * (u - cp.z_d), tol=cp.forward_tol)


def evaluate(f, cp: ControlProblem, gamma: float, u0=None) -> ControlIterate:
    """State, adjoint, objective and L2 gradient at ``f``."""
    f = np.asarray(f, dtype=float)
    cp.grid.check(f)
    u = state_solve(f, cp, gamma, u0)
    p = adjoint_solve(u, cp, gamma)
    g = cp.alpha * f + p
    return ControlIterate(
        f=f,
        u=u,
        p=p,
        J=_objective(cp, f, u),
        gradient=g,
        gradient_norm=float(np.sqrt(inner_l2(cp.grid, g, g))),
        gamma=float(gamma),
        grid_weight=cp.grid.weight,
    )


def reduced_gradient(f, cp: ControlProblem, gamma: float, u0=None) -> np.ndarray:
    return evaluate(f, cp, gamma, u0).gradient


class _LBFGS:
    """Two-loop recursion in the L2 inner product."""

    def __init__(self, grid, memory):
        self.grid = grid
        self.memory = memory
        self.pairs = []

    def dot(self, a, b):
        return inner_l2(self.grid, a, b)

    def update(self, s, y):
        sy = self.dot(s, y)
        if sy > 1e-12 * np.sqrt(self.dot(s, s) * self.dot(y, y)):
            self.pairs.append((s, y, 1.0 / sy))
            del self.pairs[: -self.memory]

    def direction(self, g):
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * self.dot(s, q)
            alphas.append(a)
            q -= a * y
        if self.pairs:
            s, y, _ = self.pairs[-1]
            q *= self.dot(s, y) / self.dot(y, y)
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * self.dot(y, q)
            q += (a - b) * s
        return -q


def _run_stage(cp: ControlProblem, it: ControlIterate, gamma: float, tol: float,
               history: OptimizationHistory) -> ControlIterate:
    grid = cp.grid
    qn = _LBFGS(grid, cp.memory) if cp.method == "lbfgs" else None
    step0 = 1.0 / cp.alpha
    prev = None
    k = 0
    flat = 0
    history.rows.append(HistoryRow(gamma, 0, it.J, it.gradient_norm, 0.0))
    while it.gradient_norm > tol:
        if flat >= STALL_STEPS:
            log.info("gamma=%g: objective flat at round-off, gradient norm %.3e", gamma, it.gradient_norm)
            history.stalled.append(gamma)
            return it
        if k >= cp.max_iter:
            raise LineSearchFailure(
                f"no convergence in {cp.max_iter} descent steps at gamma={gamma:g} "
                f"(gradient norm {it.gradient_norm:.3e} > {tol:.3e})"
            )
        d = -it.gradient if qn is None else qn.direction(it.gradient)
        slope = inner_l2(grid, it.gradient, d)
        if slope >= 0:
            d, slope = -it.gradient, -it.gradient_norm**2
            if qn is not None:
                qn.pairs.clear()
        if prev is not None and qn is None:
            # Barzilai-Borwein trial step; Armijo still decides acceptance.
            s, y = it.f - prev.f, it.gradient - prev.gradient
            sy = inner_l2(grid, s, y)
            t = inner_l2(grid, s, s) / sy if sy > 0 else step0
        else:
            t = 1.0 if qn is not None and qn.pairs else step0
        noise = 64 * np.finfo(float).eps * max(abs(it.J), np.finfo(float).tiny)
        roundoff = True
        while True:
            trial = evaluate(it.f + t * d, cp, gamma, u0=it.u)
            if trial.J <= it.J + ARMIJO_C * t * slope:
                break
            roundoff &= abs(trial.J - it.J) <= noise
            t *= BACKTRACK
            if t < MIN_STEP:
                if roundoff:
                    # Objective differences are pure round-off: the stage is as converged as it gets.
                    log.info("gamma=%g: stopped at round-off, gradient norm %.3e", gamma, it.gradient_norm)
                    history.stalled.append(gamma)
                    return it
                raise LineSearchFailure(
                    f"Armijo step fell below {MIN_STEP:g} at gamma={gamma:g} "
                    f"(gradient norm {it.gradient_norm:.3e})"
                )
        if qn is not None:
            qn.update(trial.f - it.f, trial.gradient - it.gradient)
        # Accepted steps whose decrease is below round-off make no progress.
        flat = flat + 1 if it.J - trial.J <= noise else 0
        prev, it = it, trial
        k += 1
        history.rows.append(HistoryRow(gamma, k, it.J, it.gradient_norm, t))
    return it


def optimize(cp: ControlProblem) -> tuple[ControlIterate, OptimizationHistory]:
    """Nested loops: descent to ``tol_opt`` at each ``gamma``, warm-started along the schedule.

    Returns the final iterate and the history, whose ``stages`` list holds
    the converged iterate of every schedule level.
    """
    gammas = cp.gammas()
    history = OptimizationHistory()
    it = evaluate(cp.initial_control(), cp, gammas[0])
    tol = cp.tol_opt if cp.tol_opt is not None else 1e-8 * max(1.0, it.gradient_norm)
    history.tol_opt = tol
    for i, gamma in enumerate(gammas):
        if i > 0:
            it = evaluate(it.f, cp, gamma, u0=it.u)
        it = _run_stage(cp, it, gamma, tol, history)
        history.stages.append(it)
    return it, history
