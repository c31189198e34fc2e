"""Uniform Dirichlet grids, the stiffness operator and the discrete V / L2 / V' norms.

Nodal arrays hold values on interior nodes only, flattened in C order of an
``(n,)`` or ``(n, n)`` array indexed ``[ix, iy]``.  Boundary nodes carry the
homogeneous Dirichlet value and are eliminated from every system.

Two kinds of vectors appear throughout the package:

* nodal functions (``u``, ``f``, ``q``, ``p``), and
* functionals, i.e. nodal functions multiplied by the lumped quadrature
  weight ``w = h**dim`` (``A @ u``, ``W f``).

The stiffness matrix ``A = mu * A1`` maps nodal functions to functionals;
``A1`` is the unit-viscosity stiffness, whose quadratic form defines the
discrete H^1_0 seminorm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GridError, SolverError

__all__ = [
    "Grid",
    "QuadratureWeights",
    "EllipticOperator",
    "build_grid",
    "assemble_stiffness",
    "solve_spd",
    "solve_sparse_spd",
    "round_off_floor",
    "norm_v",
    "norm_dual",
    "inner_l2",
    "pad_dirichlet",
    "gradient_operators",
    "gradient_magnitude",
]


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[0, extent]**dim`` with ``n`` interior nodes per axis."""

    dim: int
    n: int
    extent: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"invalid-dimension: dim must be 1 or 2, got {self.dim}")
        if int(self.n) != self.n or self.n < 2:
            raise GridError(f"invalid-size: n must be an integer >= 2, got {self.n}")
        if not self.extent > 0:
            raise GridError(f"invalid-size: extent must be positive, got {self.extent}")

    @property
    def h(self) -> float:
        return self.extent / (self.n + 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def weight(self) -> float:
        """Lumped quadrature weight of every interior node."""
        return self.h**self.dim

    @cached_property
    def quadrature(self) -> "QuadratureWeights":
        w = np.full(self.size, self.weight)
        return QuadratureWeights(w=w, total=float(w.sum()))

    def axis(self) -> np.ndarray:
        """Interior node coordinates along one axis."""
        return self.h * np.arange(1, self.n + 1)

    def coords(self) -> tuple[np.ndarray, ...]:
        """Flattened coordinate arrays, one per dimension."""
        x = self.axis()
        if self.dim == 1:
            return (x,)
        X, Y = np.meshgrid(x, x, indexing="ij")
        return X.ravel(), Y.ravel()

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(*coords)`` on the interior nodes."""
        return np.asarray(func(*self.coords()), dtype=float) * np.ones(self.size)

    def check(self, *arrays: np.ndarray) -> None:
        for a in arrays:
            if np.shape(a) != (self.size,):
                raise GridError(
                    f"grid mismatch: expected shape ({self.size},), got {np.shape(a)}"
                )

    @cached_property
    def unit_stiffness(self) -> sp.csr_matrix:
        """Weighted stiffness of ``-Laplace`` (unit viscosity), shape ``(size, size)``."""
        n, h = self.n, self.h
        T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
        if self.dim == 1:
            A1 = T / h
        else:
            eye = sp.identity(n)
            A1 = sp.kron(T, eye) + sp.kron(eye, T)
        return sp.csr_matrix(A1)

    @cached_property
    def _unit_factor(self):
        return spla.splu(sp.csc_matrix(self.unit_stiffness))


@dataclass(frozen=True)
class QuadratureWeights:
    w: np.ndarray
    total: float


@dataclass(frozen=True)
class EllipticOperator:
    """Stiffness of ``-mu * Laplace`` on a grid, mapping nodal values to functionals."""

    grid: Grid
    mu: float
    matrix: sp.csr_matrix = field(repr=False)
    symmetric: bool = True

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def strong(self, v: np.ndarray) -> np.ndarray:
        """Nodal action ``-mu * Laplace_h v``, i.e. ``(A v) / w``."""
        return (self.matrix @ v) / self.grid.weight

    def strong_full(self, full: np.ndarray) -> np.ndarray:
        """``-mu * Laplace_h`` of a full node array with arbitrary boundary values, at interior nodes."""
        g = self.grid
        full = np.asarray(full, dtype=float).reshape((g.n + 2,) * g.dim)
        inner = (slice(1, -1),) * g.dim
        out = 2 * g.dim * full[inner]
        for axis in range(g.dim):
            lo = list(inner)
            hi = list(inner)
            lo[axis], hi[axis] = slice(0, -2), slice(2, None)
            out = out - full[tuple(lo)] - full[tuple(hi)]
        return self.mu * out.ravel() / g.h**2

    @cached_property
    def _factor(self):
        return spla.splu(sp.csc_matrix(self.matrix))

    def solve(self, rhs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return solve_spd(self, rhs, tol)


def build_grid(dim: int, n: int, extent: float = 1.0) -> Grid:
    return Grid(dim=dim, n=n, extent=extent)


def assemble_stiffness(grid: Grid, mu: float = 1.0) -> EllipticOperator:
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    return EllipticOperator(grid=grid, mu=float(mu), matrix=(mu * grid.unit_stiffness).tocsr())


def _refined_solve(matrix, factor_solve, rhs, tol, refine=3):
    """Factor solve plus iterative refinement.

    A residual is accepted once it is below ``tol * ||rhs||`` or below the
    backward-error floor ``32 eps (||A|| ||x|| + ||rhs||)``, which no
    double-precision method can beat on ill-conditioned stencils.
    """
    x = factor_solve(rhs)
    bnorm = np.linalg.norm(rhs)
    anorm = spla.norm(matrix, np.inf)
    res = rhs - matrix @ x
    for _ in range(refine):
        floor = 32 * np.finfo(float).eps * (anorm * np.linalg.norm(x) + bnorm)
        if np.linalg.norm(res) <= max(tol * bnorm, floor):
            break
        x = x + factor_solve(res)
        res = rhs - matrix @ x
    floor = 32 * np.finfo(float).eps * (anorm * np.linalg.norm(x) + bnorm)
    rnorm = np.linalg.norm(res)
    return x, rnorm, max(tol * bnorm, floor)


def solve_spd(op: EllipticOperator, rhs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Solve ``op @ w = rhs`` with ``||op @ w - rhs|| <= tol * ||rhs||``.

    Uses a cached sparse factorization of the operator plus up to three
    steps of iterative refinement.  Raises :class:`SolverError` when the
    residual stays above both ``tol * ||rhs||`` and the round-off floor.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    rhs = np.asarray(rhs, dtype=float)
    op.grid.check(rhs)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    x, rnorm, limit = _refined_solve(op.matrix, op._factor.solve, rhs, tol)
    if rnorm > limit:
        raise SolverError(f"SPD solve stalled at residual {rnorm:.3e} > {limit:.3e}")
    return x


def solve_sparse_spd(matrix, rhs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Factor-and-solve for a one-off sparse SPD system (Newton and adjoint steps)."""
    rhs = np.asarray(rhs, dtype=float)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    factor = spla.splu(sp.csc_matrix(matrix))
    x, rnorm, limit = _refined_solve(matrix, factor.solve, rhs, tol)
    if rnorm > limit:
        raise SolverError(f"sparse solve stalled at residual {rnorm:.3e} > {limit:.3e}")
    return x


def round_off_floor(matrix, u: np.ndarray, rhs: np.ndarray | None = None) -> float:
    """Residual norm that is pure round-off in ``matrix @ u - rhs`` or in representing ``u``."""
    scale = np.abs(matrix.diagonal()).max() * float(np.abs(u).max(initial=0.0))
    if rhs is not None:
        scale += float(np.abs(rhs).max(initial=0.0))
    return 64 * np.finfo(float).eps * scale * np.sqrt(u.size)


def norm_v(grid: Grid, v: np.ndarray) -> float:
    """Discrete H^1_0 seminorm ``sqrt(v^T A1 v)``."""
    grid.check(v)
    return float(np.sqrt(max(v @ (grid.unit_stiffness @ v), 0.0)))


def norm_dual(grid: Grid, r: np.ndarray) -> float:
    """Dual norm of the nodal function ``r`` acting through lumped quadrature."""
    grid.check(r)
    rw = grid.weight * np.asarray(r, dtype=float)
    if not np.any(rw):
        return 0.0
    return float(np.sqrt(max(rw @ grid._unit_factor.solve(rw), 0.0)))


def inner_l2(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    grid.check(a, b)
    return float(grid.weight * np.dot(a, b))


def pad_dirichlet(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Embed interior values into the full ``(n + 2)**dim`` node array with zero boundary."""
    grid.check(u)
    full = np.zeros((grid.n + 2,) * grid.dim)
    inner = (slice(1, -1),) * grid.dim
    full[inner] = np.reshape(u, grid.shape)
    return full


def gradient_operators(grid: Grid) -> tuple[sp.csr_matrix, ...]:
    """Sparse maps from interior nodal values to cell-centred gradient components.

    There are ``(n + 1)**dim`` cells.  In 1D the component is the forward
    difference over each interval; in 2D each component is the forward
    difference averaged over the two parallel cell edges.
    """
    n, h = grid.n, grid.h
    # D maps interior values to the n+1 forward differences (boundary zeros folded in).
    D = sp.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n)) / h
    if grid.dim == 1:
        return (sp.csr_matrix(D),)
    # M averages the two endpoint values of each interval into its midpoint.
    M = sp.diags([0.5 * np.ones(n), 0.5 * np.ones(n)], [0, -1], shape=(n + 1, n))
    gx = sp.kron(D, M)
    gy = sp.kron(M, D)
    return sp.csr_matrix(gx), sp.csr_matrix(gy)


def _full_gradient_magnitude(full: np.ndarray, h: float) -> np.ndarray:
    if full.ndim == 1:
        return np.abs(np.diff(full)) / h
    dx = np.diff(full, axis=0)
    dy = np.diff(full, axis=1)
    gx = 0.5 * (dx[:, 1:] + dx[:, :-1]) / h
    gy = 0.5 * (dy[1:, :] + dy[:-1, :]) / h
    return np.hypot(gx, gy)


def gradient_magnitude(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Cell-centred Euclidean norm of the finite-difference gradient.

    ``u`` is either an interior nodal array (zero boundary assumed) or a full
    node array of shape ``(n + 2,) * dim`` that includes boundary values.
    Returns an array of shape ``(n + 1,) * dim``.
    """
    u = np.asarray(u, dtype=float)
    full_shape = (grid.n + 2,) * grid.dim
    if u.shape == full_shape:
        full = u
    elif u.size == (grid.n + 2) ** grid.dim and u.ndim == 1:
        full = u.reshape(full_shape)
    else:
        full = pad_dirichlet(grid, u.ravel())
    return _full_gradient_magnitude(full, grid.h)
