"""Damped Newton for smooth convex energies with an energy line search."""

from __future__ import annotations

import numpy as np

from .errors import NewtonNonconvergence
from .mesh import round_off_floor, solve_sparse_spd


def newton_minimize(energy_fn, grad_fn, hess_fn, u, tol, max_iter, gamma, load):
    """Damped Newton with Armijo backtracking on the smoothed energy.

    Once energy differences reach round-off, a step is accepted when it
    lowers the gradient norm instead.
    Stops at ``||grad|| <= tol`` or at the round-off floor set by the
    Hessian diagonal, whichever is larger.
    """
    g = grad_fn(u)
    res = np.linalg.norm(g)
    E = energy_fn(u)
    it = 0
    while True:
        H = hess_fn(u)
        if res <= max(tol, round_off_floor(H, u, load)):
            return u, it, res
        if it >= max_iter:
            raise NewtonNonconvergence(
                f"Newton did not converge in {max_iter} iterations at gamma={gamma:g} "
                f"(residual {res:.3e})",
                gamma=gamma,
                residual=res,
            )
        d = solve_sparse_spd(H, -g)
        slope = g @ d
        t = 1.0
        while True:
            trial = u + t * d
            E_new = energy_fn(trial)
            if E_new <= E + 1e-4 * t * slope:
                break
            # Energy differences drowned in round-off: fall back to residual decrease.
            if abs(E_new - E) <= 1e3 * np.finfo(float).eps * abs(E):
                g_trial = grad_fn(trial)
                if np.linalg.norm(g_trial) < res:
                    break
            t *= 0.5
            if t < 2.0**-40:
                raise NewtonNonconvergence(
                    f"line search failed at gamma={gamma:g} (residual {res:.3e})",
                    gamma=gamma,
                    residual=res,
                )
        u, E = trial, E_new
        g = grad_fn(u)
        res = np.linalg.norm(g)
        it += 1
