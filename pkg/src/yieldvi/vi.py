"""Forward solver for the threshold inequality with ``K = identity``.

The discrete problem is

    minimize  1/2 u^T A u + beta * sum_i w_i |u_i| - sum_i w_i f_i u_i

whose optimality system reads ``A u + W q = W f``, ``q_i u_i = beta |u_i|``,
``|q_i| <= beta``.  It is solved by semismooth Newton on a smoothed system
along an increasing ``gamma`` path, optionally finished by an exact
active-set step on the unsmoothed system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CycleDetected, NewtonNonconvergence, SolverError
from .mesh import EllipticOperator, norm_v, solve_sparse_spd
from .newton import newton_minimize
from .smoothing import Smoothing, phi, phi_prime, phi_second

log = logging.getLogger(__name__)

# Stand-in for an infinite curvature (global-power at zero) inside Newton matrices.
_CURVATURE_CAP = 1e16


@dataclass(frozen=True)
class SetMask:
    """Node classification on the active / inactive / biactive sets."""

    active: np.ndarray
    inactive: np.ndarray
    biactive: np.ndarray
    dual_slack: np.ndarray
    eps_u: float
    eps_q: float

    @property
    def strictly_active(self) -> np.ndarray:
        """Active nodes that are not biactive."""
        return self.active & ~self.biactive


@dataclass
class StageRecord:
    gamma: float
    u: np.ndarray
    newton_iterations: int
    residual: float


@dataclass
class VISolution:
    u: np.ndarray
    q: np.ndarray
    gamma_final: float
    newton_iterations: int
    residual: float
    sets: SetMask
    beta: float
    mu: float
    schedule: tuple[float, ...] = ()
    exact: bool = False
    path: list[StageRecord] = field(default_factory=list, repr=False)

    def complementarity(self) -> float:
        return float(np.max(np.abs(self.q * self.u - self.beta * np.abs(self.u)), initial=0.0))

    def dual_excess(self) -> float:
        return float(np.max(np.abs(self.q) - self.beta, initial=-np.inf))


def default_schedule(beta: float = 1.0, start: float = 10.0, stop: float = 1e8) -> list[float]:
    """Powers of ten from ``start`` to ``stop``, dropping levels too coarse for huber-local."""
    gammas = 10.0 ** np.arange(np.log10(start), np.log10(stop) + 0.5)
    return [float(g) for g in gammas if beta == 0 or beta - 0.5 / g > 0]


def _curvature(u, s):
    d = phi_second(u, s)
    return np.minimum(d, _CURVATURE_CAP)


def regularized_residual(A: EllipticOperator, u, f, s: Smoothing) -> np.ndarray:
    w = A.grid.weight
    return A @ u + w * phi_prime(u, s) - w * f


def regularized_energy(A: EllipticOperator, u, f, s: Smoothing) -> float:
    w = A.grid.weight
    return float(0.5 * u @ (A @ u) + w * np.sum(phi(u, s)) - w * f @ u)


def energy(A: EllipticOperator, u, f, beta: float) -> float:
    """Unsmoothed discrete energy."""
    w = A.grid.weight
    return float(0.5 * u @ (A @ u) + w * beta * np.sum(np.abs(u)) - w * f @ u)


def solve_regularized(
    A: EllipticOperator,
    f: np.ndarray,
    s: Smoothing,
    u0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
    return_info: bool = False,
):
    """Damped semismooth Newton for ``A u + W phi'(u) = W f``.

    The system is the gradient of the convex smoothed energy, so steps are
    backtracked with an Armijo test on that energy.  Returns ``u`` (and
    ``(iterations, residual)`` when ``return_info``) once the Euclidean
    residual norm is at most ``tol`` or at the round-off floor.
    """
    grid = A.grid
    f = np.asarray(f, dtype=float)
    grid.check(f)
    u = np.zeros(grid.size) if u0 is None else np.array(u0, dtype=float)
    grid.check(u)
    w = grid.weight
    u, it, res = newton_minimize(
        lambda v: regularized_energy(A, v, f, s),
        lambda v: regularized_residual(A, v, f, s),
        lambda v: (A.matrix + sp.diags(w * _curvature(v, s))).tocsr(),
        u,
        tol,
        max_iter,
        s.gamma,
        w * f,
    )
    if return_info:
        return u, it, float(res)
    return u


def extract_multiplier(A: EllipticOperator, u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Dual multiplier closing ``A u + W q = W f`` exactly: ``q = f - (A u) / w``."""
    A.grid.check(u, f)
    return np.asarray(f, dtype=float) - A.strong(u)


def classify_sets(u, q, beta: float, eps_u: float | None = None, eps_q: float | None = None) -> SetMask:
    """Split nodes into active ``|u| <= eps_u``, inactive, and biactive ``active & |q| >= beta - eps_q``.

    Defaults: ``eps_u = max(1e-8 ||u||_inf, 1e-12)`` and ``eps_q = 1e-6 beta``.
    """
    u = np.asarray(u, dtype=float)
    q = np.asarray(q, dtype=float)
    if eps_u is None:
        eps_u = max(1e-8 * float(np.max(np.abs(u), initial=0.0)), 1e-12)
    if eps_q is None:
        eps_q = 1e-6 * beta
    if not (eps_u > 0 and eps_q >= 0):
        raise ValueError("classification tolerances must be positive")
    active = np.abs(u) <= eps_u
    high = np.abs(q) >= beta - eps_q
    return SetMask(
        active=active,
        inactive=~active,
        biactive=active & high,
        dual_slack=active & ~high,
        eps_u=float(eps_u),
        eps_q=float(eps_q),
    )


def exact_active_set(A: EllipticOperator, f, beta: float, u, q, c: float, max_iter: int = 100):
    """Primal-dual active-set iteration on the unsmoothed optimality system.

    Starting from ``(u, q)`` the sign prediction ``q + c u`` splits nodes into
    positive, negative and zero sets; ``u`` is solved on the nonzero nodes
    with ``q = +-beta`` there.  A repeated prediction is an exact discrete
    solution.  Returns ``(u, q)`` or ``None`` if the iteration fails to settle.
    """
    w = A.grid.weight
    f = np.asarray(f, dtype=float)
    M = A.matrix.tocsr()
    prev = None
    for _ in range(max_iter):
        z = q + c * u
        sign = np.where(z > beta, 1.0, np.where(z < -beta, -1.0, 0.0))
        if prev is not None and np.array_equal(sign, prev):
            return (u, q) if _is_exact(u, q, sign, beta) else None
        prev = sign
        free = sign != 0
        u = np.zeros_like(u)
        if free.any():
            idx = np.flatnonzero(free)
            Aff = M[idx][:, idx]
            u[idx] = solve_sparse_spd(Aff, w * (f[idx] - beta * sign[idx]))
        q = f - (M @ u) / w
    return None


def _is_exact(u, q, sign, beta, rtol=1e-10):
    """Sign consistency on nonzero nodes and the dual bound on zero nodes."""
    free = sign != 0
    ok_sign = np.all(sign[free] * u[free] >= 0)
    ok_dual = np.all(np.abs(q[~free]) <= beta * (1 + rtol))
    return bool(ok_sign and ok_dual)


def continuation_solve(
    A: EllipticOperator,
    f: np.ndarray,
    s0: Smoothing,
    schedule=None,
    tol: float = 1e-10,
    exact: bool = True,
    u0: np.ndarray | None = None,
    max_iter: int = 200,
) -> VISolution:
    """Warm-started smoothed solves along ``schedule``, then multiplier recovery.

    With ``exact=True`` the final smoothed iterate seeds
    :func:`exact_active_set`; its output replaces the smoothed state only
    when the active-set iteration settles.
    """
    if schedule is None:
        schedule = default_schedule(s0.beta)
    schedule = [float(g) for g in schedule]
    if not schedule:
        raise ValueError("gamma schedule is empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("gamma schedule must be strictly increasing")
    f = np.asarray(f, dtype=float)
    u = np.zeros(A.grid.size) if u0 is None else np.asarray(u0, dtype=float)
    total = 0
    path = []
    res = 0.0
    for g in schedule:
        s = s0.with_gamma(g)
        try:
            u, it, res = solve_regularized(A, f, s, u, tol=tol, max_iter=max_iter, return_info=True)
        except NewtonNonconvergence as err:
            err.gamma = g
            raise
        total += it
        path.append(StageRecord(gamma=g, u=u.copy(), newton_iterations=it, residual=res))
    q = extract_multiplier(A, u, f)
    polished = False
    if exact and s0.beta > 0:
        # Jacobi scaling of the sign prediction; large multiples amplify smoothing residue.
        c = float(A.matrix.diagonal().max()) / A.grid.weight
        out = exact_active_set(A, f, s0.beta, u, q, c=c)
        if out is not None:
            u, q = out
            polished = True
        else:
            log.warning("exact active-set step did not settle; keeping smoothed state")
    elif exact:
        u = A.solve(A.grid.weight * f)
        q = extract_multiplier(A, u, f)
        polished = True
    if polished:
        sets = classify_sets(u, q, s0.beta)
    else:
        sets = classify_sets(u, q, s0.beta, eps_u=smoothed_eps_u(u, s0.with_gamma(schedule[-1])))
    return VISolution(
        u=u,
        q=q,
        gamma_final=schedule[-1],
        newton_iterations=total,
        residual=float(np.linalg.norm(regularized_residual(A, u, f, s0.with_gamma(schedule[-1])))),
        sets=sets,
        beta=s0.beta,
        mu=A.mu,
        schedule=tuple(schedule),
        exact=polished,
        path=path,
    )


def smoothed_eps_u(u, s: Smoothing) -> float:
    """Active-set tolerance for a smoothed state: every unsaturated node counts as active.

    Below the upper huber-local breakpoint ``(beta + 1/(2 gamma)) / gamma``
    the smoothed law cannot tell a small nonzero value from an exact zero.
    """
    base = max(1e-8 * float(np.max(np.abs(u), initial=0.0)), 1e-12)
    if s.beta == 0:
        return base
    return max(base, s.breakpoints[1])


def path_distances(A: EllipticOperator, solution: VISolution, reference: np.ndarray | None = None):
    """``||u_gamma - reference||_V`` along the continuation path (default: last stage)."""
    ref = solution.path[-1].u if reference is None else reference
    return [(rec.gamma, norm_v(A.grid, rec.u - ref)) for rec in solution.path]


# --- first-kind inequality over the critical cone ---------------------------


@dataclass(frozen=True)
class Cone:
    """Polyhedral cone ``{v : v = 0 on zero, sign * v >= 0 on signed}``."""

    free: np.ndarray
    zero: np.ndarray
    signed: np.ndarray
    sign: np.ndarray


def critical_cone(sets: SetMask, q: np.ndarray, beta: float | None = None) -> Cone:
    """Cone of admissible directions built from a classified solution.

    With ``beta == 0`` there is no threshold and every direction is admissible.
    """
    sign = np.sign(np.asarray(q, dtype=float))
    if beta == 0:
        everything = np.ones_like(sets.active)
        nothing = np.zeros_like(sets.active)
        return Cone(free=everything, zero=nothing, signed=nothing, sign=sign)
    signed = sets.biactive & (sign != 0)
    # a biactive node with q == 0 only happens for beta == 0; treat it as free.
    free = sets.inactive | (sets.biactive & (sign == 0))
    return Cone(free=free, zero=sets.strictly_active, signed=signed, sign=sign)


def solve_vi_first_kind(A: EllipticOperator, rhs: np.ndarray, cone: Cone, max_iter: int = 200) -> np.ndarray:
    """Solve ``eta in K, <A eta - rhs, v - eta> >= 0 for all v in K`` by primal-dual active sets.

    ``rhs`` is a functional (e.g. ``W h``).  Signed nodes start in the
    "zero" state.  The loop stops when the guess repeats; revisiting an older
    guess raises :class:`CycleDetected`.
    """
    rhs = np.asarray(rhs, dtype=float)
    A.grid.check(rhs)
    M = A.matrix.tocsr()
    diag = M.diagonal()
    signed = np.flatnonzero(cone.signed)
    s = cone.sign[signed]
    clamped = np.ones(signed.size, dtype=bool)
    seen = {}
    history = []
    eta = np.zeros(A.grid.size)
    for k in range(max_iter):
        key = clamped.tobytes()
        if key in seen:
            if seen[key] == k - 1:
                return eta
            raise CycleDetected(
                "active-set guesses cycle in the first-kind inequality",
                iterates=history[-2:],
            )
        seen[key] = k
        open_ = cone.free.copy()
        open_[signed[~clamped]] = True
        eta = np.zeros(A.grid.size)
        idx = np.flatnonzero(open_)
        if idx.size:
            Aoo = M[idx][:, idx]
            try:
                eta[idx] = solve_sparse_spd(Aoo, rhs[idx])
            except (SolverError, RuntimeError) as err:
                raise SolverError(f"singular reduced system: {err}") from err
        history.append(eta.copy())
        lam = s * (M @ eta - rhs)[signed]
        y = s * eta[signed]
        clamped = lam - diag[signed] * y > 0
    raise SolverError(f"first-kind active-set loop exceeded {max_iter} iterations")
