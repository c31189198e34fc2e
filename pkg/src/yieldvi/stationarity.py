"""Residual reports for the weak, C- and strong stationarity systems of the control problem.

A candidate is a tuple ``(u, q, p, xi, f)``.  The multiplier ``xi`` is a
discrete functional (weighted nodal values); it is only ever evaluated
through Euclidean pairings with nodal test vectors.

Every residual is stored raw together with the scale it is divided by, so a
report can be read both in absolute terms and at a scaled tolerance.
Reports never raise on a violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .mesh import EllipticOperator, Grid
from .vi import SetMask, classify_sets

__all__ = [
    "Residual",
    "StationarityReport",
    "StructuralReport",
    "recover_xi",
    "check_weak",
    "check_clarke",
    "check_strong",
    "check_structural",
    "cone_test_family",
]

WEAK = ("state_eq", "complementarity", "dual_bound", "adjoint_eq", "gradient_eq")
CLARKE = ("p_on_I", "xi_p_pairing", "xi_u_pairing")
STRONG = ("pq_on_B",)


@dataclass
class Residual:
    """One condition of an optimality system.

    ``signed`` residuals (the pairings) pass on a one- or two-sided test
    instead of ``value <= tol``.
    """

    name: str
    value: float
    scale: float
    tol: float
    kind: str = "abs"  # "abs", "lower" (value >= -tol) or "two-sided"
    nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int), repr=False)

    @property
    def scaled(self) -> float:
        return self.value / self.scale if self.scale > 0 else self.value

    @property
    def passed(self) -> bool:
        x = self.scaled
        if self.kind == "lower":
            return x >= -self.tol
        if self.kind == "two-sided":
            return abs(x) <= self.tol
        return x <= self.tol


@dataclass
class StationarityReport:
    residuals: dict[str, Residual] = field(default_factory=dict)
    sign_condition: str | None = None
    witness: np.ndarray | None = field(default=None, repr=False)
    witness_pairing: float | None = None
    tol: float = 1e-6

    def add(self, r: Residual) -> None:
        self.residuals[r.name] = r

    def passes(self, names) -> bool:
        return all(n in self.residuals and self.residuals[n].passed for n in names)

    @property
    def level(self) -> str:
        """Highest system whose conditions all pass: ``strong``, ``clarke``, ``weak`` or ``none``."""
        if not self.passes(WEAK):
            return "none"
        if not self.passes(CLARKE):
            return "weak"
        if self.passes(STRONG) and self.sign_condition == "not-falsified":
            return "strong"
        return "clarke"

    def failures(self) -> list[str]:
        out = [n for n, r in self.residuals.items() if not r.passed]
        if self.sign_condition == "falsified":
            out.append("sign_condition")
        return out

    def rows(self):
        """``(condition, raw, scaled, tolerance, passed)`` tuples in insertion order."""
        for r in self.residuals.values():
            yield r.name, r.value, r.scaled, r.tol, r.passed
        if self.sign_condition is not None:
            yield "sign_condition", self.witness_pairing or 0.0, self.witness_pairing or 0.0, self.tol, (
                self.sign_condition == "not-falsified"
            )


def _inf(x) -> float:
    return float(np.max(np.abs(x), initial=0.0))


@dataclass(frozen=True)
class _Scales:
    state: float  # max(|u|, |z_d|)
    adjoint: float  # max(|p|, |A^-1 W (u - z_d)|)
    xi: float  # l1 size of the terms making up xi


def _scales(A, u, p, xi, z_d) -> _Scales:
    load = A.grid.weight * (u - z_d)
    p_lin = A.solve(load) if np.any(load) else np.zeros_like(load)
    return _Scales(
        state=max(_inf(u), _inf(z_d)),
        adjoint=max(_inf(p), _inf(p_lin)),
        xi=max(float(np.sum(np.abs(xi))), float(np.sum(np.abs(load))),
               float(np.sum(np.abs(A.matrix.T @ p)))),
    )


def recover_xi(u, p, z_d, A: EllipticOperator) -> np.ndarray:
    """``xi = W (u - z_d) - A^T p``, the functional closing the adjoint equation."""
    u, p, z_d = (np.asarray(a, dtype=float) for a in (u, p, z_d))
    A.grid.check(u, p, z_d)
    return A.grid.weight * (u - z_d) - A.matrix.T @ p


def check_weak(A: EllipticOperator, u, q, p, xi, f, z_d, alpha: float, beta: float,
               tol: float = 1e-6) -> StationarityReport:
    """State equation, complementarity, dual bound, adjoint equation and gradient equation."""
    u, q, p, xi, f, z_d = (np.asarray(a, dtype=float) for a in (u, q, p, xi, f, z_d))
    A.grid.check(u, q, p, xi, f, z_d)
    w = A.grid.weight
    Au = A @ u
    rep = StationarityReport(tol=tol)

    r = Au + w * q - w * f
    rep.add(Residual("state_eq", _inf(r), max(_inf(Au), _inf(w * f), _inf(w * q)), tol))

    sc = _scales(A, u, p, xi, z_d)
    comp = q * u - beta * np.abs(u)
    rep.add(Residual("complementarity", _inf(comp), beta * sc.state, tol,
                     nodes=np.flatnonzero(np.abs(comp) > tol * max(beta * sc.state, 1e-300))))

    excess = np.maximum(np.abs(q) - beta, 0.0)
    rep.add(Residual("dual_bound", _inf(excess), beta, tol,
                     nodes=np.flatnonzero(excess > tol * max(beta, 1e-300))))

    Ap = A.matrix.T @ p
    load = w * (u - z_d)
    rep.add(Residual("adjoint_eq", _inf(Ap + xi - load), max(_inf(Ap), _inf(load), _inf(xi)), tol))

    g = alpha * f + p
    rep.add(Residual("gradient_eq", _inf(g), max(alpha * _inf(f), sc.adjoint), tol))
    return rep


def check_clarke(A: EllipticOperator, u, q, p, xi, f, z_d, alpha: float, beta: float,
                 sets: SetMask | None = None, tol: float = 1e-6) -> StationarityReport:
    """Weak residuals plus ``p = 0`` on ``{|q| < beta}``, ``<xi, p> >= 0`` and ``<xi, u> = 0``."""
    rep = check_weak(A, u, q, p, xi, f, z_d, alpha, beta, tol)
    u, q, p, xi = (np.asarray(a, dtype=float) for a in (u, q, p, xi))
    if sets is None:
        sets = classify_sets(u, q, beta)
    sc = _scales(A, u, p, xi, np.asarray(z_d, dtype=float))
    slack = np.abs(q) < beta - sets.eps_q
    viol = slack & (np.abs(p) > tol * sc.adjoint)
    rep.add(Residual("p_on_I", _inf(p[slack]), sc.adjoint, tol, nodes=np.flatnonzero(viol)))
    rep.add(Residual("xi_p_pairing", float(xi @ p), sc.xi * sc.adjoint, tol, kind="lower"))
    rep.add(Residual("xi_u_pairing", float(xi @ u), sc.xi * sc.state, tol, kind="two-sided"))
    return rep


def cone_test_family(sets: SetMask, q, n_random: int = 100, seed: int = 0):
    """Test directions of the cone ``{v = 0 on |q| < beta, v q >= 0 on the biactive set}``.

    Yields signed indicators of biactive nodes, ``+-`` indicators of free
    nodes, then ``n_random`` random nonnegative combinations of those.
    """
    q = np.asarray(q, dtype=float)
    size = q.size
    sign = np.where(q >= 0, 1.0, -1.0)
    basis = []
    for i in np.flatnonzero(sets.biactive):
        basis.append((i, sign[i]))
    for i in np.flatnonzero(sets.inactive):
        basis.append((i, 1.0))
        basis.append((i, -1.0))
    for i, s in basis:
        v = np.zeros(size)
        v[i] = s
        yield v
    if not basis:
        return
    rng = np.random.default_rng(seed)
    idx = np.array([i for i, _ in basis])
    sg = np.array([s for _, s in basis])
    for _ in range(n_random):
        k = min(len(basis), int(rng.integers(1, 9)))
        pick = rng.choice(len(basis), size=k, replace=False)
        v = np.zeros(size)
        np.add.at(v, idx[pick], sg[pick] * rng.random(k))
        yield v


def check_strong(A: EllipticOperator, u, q, p, xi, f, z_d, alpha: float, beta: float,
                 sets: SetMask | None = None, tol: float = 1e-6, n_random: int = 100,
                 seed: int = 0) -> StationarityReport:
    """Clarke residuals plus ``p q = 0`` on the biactive set and the cone sign condition.

    The sign condition ``<xi, v> >= 0`` is sampled on :func:`cone_test_family`;
    it can be falsified by a witness but never proved.
    """
    u, q, p, xi = (np.asarray(a, dtype=float) for a in (u, q, p, xi))
    if sets is None:
        sets = classify_sets(u, q, beta)
    rep = check_clarke(A, u, q, p, xi, f, z_d, alpha, beta, sets, tol)
    B = sets.biactive
    pq = np.abs(p * q)[B]
    sc = _scales(A, u, p, xi, np.asarray(z_d, dtype=float))
    rep.add(Residual("pq_on_B", _inf(pq), max(beta, _inf(q)) * sc.adjoint, tol,
                     nodes=np.flatnonzero(B)[pq > 0] if pq.size else np.zeros(0, dtype=int)))
    rep.sign_condition = "not-falsified"
    worst = 0.0
    for v in cone_test_family(sets, q, n_random, seed):
        pairing = float(xi @ v)
        scaled = pairing / (sc.xi * _inf(v)) if sc.xi > 0 else pairing
        worst = min(worst, scaled)
        if scaled < -tol:
            rep.sign_condition = "falsified"
            rep.witness = v
            rep.witness_pairing = scaled
            return rep
    rep.witness_pairing = worst
    return rep


@dataclass
class StructuralReport:
    n_components: int
    measures: np.ndarray
    has_interior: np.ndarray
    min_distance: float
    small_components: np.ndarray

    @property
    def flagged(self) -> bool:
        """Any component without an interior node."""
        return bool(self.n_components) and not bool(np.all(self.has_interior))


def check_structural(mask, grid: Grid) -> StructuralReport:
    """Connected components of the active mask on a 2D grid.

    A component has an interior node when some node survives one step of
    4-neighbour erosion.  Distances between components are Euclidean node
    distances in units of ``h`` (1 for touching diagonals).  Components with
    measure below ``4 h**2`` are listed in ``small_components``.
    """
    if grid.dim != 2:
        raise ValueError("structural checks need a 2D grid")
    m = mask.active if isinstance(mask, SetMask) else np.asarray(mask, dtype=bool)
    m = m.reshape(grid.shape)
    labels, count = ndimage.label(m)
    measures = np.zeros(count)
    interior = np.zeros(count, dtype=bool)
    eroded = ndimage.binary_erosion(m, border_value=0)
    points = []
    for k in range(1, count + 1):
        comp = labels == k
        measures[k - 1] = comp.sum() * grid.h**2
        interior[k - 1] = bool(np.any(eroded & comp))
        points.append(np.argwhere(comp))
    dmin = np.inf
    for a in range(count):
        tree = cKDTree(points[a])
        for b in range(a + 1, count):
            d, _ = tree.query(points[b], k=1)
            dmin = min(dmin, float(d.min()))
    return StructuralReport(
        n_components=count,
        measures=measures,
        has_interior=interior,
        min_distance=dmin,
        small_components=np.flatnonzero(measures < 4 * grid.h**2),
    )
