"""Penalized approximation of the hard density cap.

Replacing the hard constraint m <= mbar by a penalty of width eps gives a
family of smooth problems; as eps shrinks, the overshoot above the cap decays
and the solutions approach the hard-capped one.
"""

import numpy as np

from mfgcap import solver
from mfgcap.problems import (TP2_EPS, named_grid, named_problem,
                             named_solver_options)

grid = named_grid("TP1", nx=64, nt=64)
hard = solver.run(named_problem("TP1"), grid, named_solver_options("TP1"))
mbar = 3.0

print(f"{'eps':>6} {'max overshoot':>14} {'L2 dist to hard':>16}")
for eps in TP2_EPS:
    problem = named_problem("TP2", eps=eps)
    sol = solver.run(problem, grid, named_solver_options("TP2"))
    overshoot = max(float(np.max(sol.m)) - mbar, 0.0)
    l2 = float(np.sqrt(np.sum((sol.m - hard.m) ** 2) * grid.dx * grid.dt))
    print(f"{eps:>6} {overshoot:>14.4f} {l2:>16.4f}")
