"""Optimal control of the threshold inequality and the stationarity report of its output.

Run with ``python3 demos/control_stationarity.py``.
"""

import numpy as np

from yieldvi import ControlProblem, Smoothing, assemble_stiffness, build_grid, continuation_solve, optimize
from yieldvi.stationarity import check_strong, recover_xi
from yieldvi.vi import classify_sets, smoothed_eps_u

grid = build_grid(1, 64)
A = assemble_stiffness(grid)
load = grid.sample(lambda x: 3 * np.sin(2 * np.pi * x) + 1)
z_d = continuation_solve(A, load, Smoothing("huber-local", 1.0, 10.0)).u

cp = ControlProblem(A, z_d, alpha=1e-3, beta=1.0, f0=load, tol_opt=1e-10)
it, hist = optimize(cp)
print(f"J={it.J:.6e}  gradient norm={it.gradient_norm:.2e}  steps={len(hist.rows) - len(hist.stages)}")
print("distance between consecutive stage controls:", np.array2string(hist.stage_differences(), precision=2))

q = it.multiplier(cp)
sets = classify_sets(it.u, q, cp.beta, eps_u=smoothed_eps_u(it.u, cp.smoothing(it.gamma)))
rep = check_strong(A, it.u, q, it.p, recover_xi(it.u, it.p, z_d, A), it.f, z_d, cp.alpha, cp.beta, sets)
for name, raw, scaled, tol, ok in rep.rows():
    print(f"  {name:16s} raw={raw: .2e} scaled={scaled: .2e} {'pass' if ok else 'FAIL'}")
print(f"level: {rep.level}  (active {sets.active.sum()}, biactive {sets.biactive.sum()})")
