"""Threshold flow in 1D: the solution map, its dead zone and its directional derivative.

Run with ``python3 demos/threshold_1d.py``.
"""

import numpy as np

from yieldvi import Smoothing, assemble_stiffness, build_grid, continuation_solve
from yieldvi.sensitivity import DerivativeProbe, SolverConfig, fd_compare, smooth_random_field

grid = build_grid(1, 511)
A = assemble_stiffness(grid, mu=1.0)
s = Smoothing("huber-local", beta=1.0, gamma=10.0)
(x,) = grid.coords()

# Constant loads: flow once |f| exceeds the threshold, rest below it.
for load in (0.5, 1.0, 2.0, 3.0):
    sol = continuation_solve(A, np.full(grid.size, load), s)
    exact = max(load - 1.0, 0.0) * x * (1 - x) / 2
    print(f"f={load:3.1f}  u(0.5)={sol.u[grid.n // 2]:.6f}  |u-exact|_inf={np.max(np.abs(sol.u - exact)):.2e}"
          f"  active nodes={sol.sets.active.sum()}")

# A load that crosses the threshold produces a rigid region near x = 1.
f = 2.4 * (1 - x)
sol = continuation_solve(A, f, s)
print(f"\nramp load: flow on x < {x[sol.sets.inactive].max():.3f}, q in [{sol.q.min():.3f}, {sol.q.max():.3f}]")

# Difference quotients approach the derivative predicted by the cone inequality.
h = smooth_random_field(grid, np.random.default_rng(1))
probe = fd_compare(A, DerivativeProbe(f=f, h=h), SolverConfig(beta=1.0))
for t, e in zip(probe.t_list, probe.errors_v):
    print(f"t={t:.0e}  ||quotient - eta||_V = {e:.3e}")
