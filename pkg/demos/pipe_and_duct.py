"""Bingham flow: plug radius in a pipe and rigid zones in a square duct.

Run with ``python3 demos/pipe_and_duct.py``.
"""

import numpy as np

from yieldvi import DuctProblem, PipeProblem, build_grid, detect_plug, mosolov_exact, solve_duct, solve_radial
from yieldvi.bingham import plug_radius_orders

p = PipeProblem(R=1.0, mu=1.0, beta=0.25, f=1.0, n=512)
sol = solve_radial(p)
exact = mosolov_exact(p, sol.r)
print(f"pipe: relative error {np.max(np.abs(sol.u - exact)) / exact.max():.2e}, "
      f"plug radius {detect_plug(sol).plug_radius:.4f} (exact {p.plug_radius})")
errors, orders = plug_radius_orders(p, sizes=(128, 256, 512))
print("plug radius errors", np.array2string(errors, formatter={"float": "{:.2e}".format}), "orders", np.round(orders, 2))

# The square stops flowing once beta exceeds f / (2 + sqrt(pi)), about 0.265.
grid = build_grid(2, 63)
for beta in (0.05, 0.1, 0.2, 0.25, 0.3):
    d = solve_duct(DuctProblem(grid, mu=1.0, beta=beta, f=1.0))
    rep = detect_plug(d)
    U = d.u.reshape(grid.shape)
    print(f"duct beta={beta:4.2f}: u_max={U.max():.3e}  plug area={rep.measure:.3f}  "
          f"corner/u_max={abs(U[0, 0]) / U.max():.1e}")
