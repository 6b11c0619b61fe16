"""Solve the testbench problems with the collocation solver and watch the settings matter.

Run: python demos/solver_walkthrough.py
"""

import numpy as np

from bvptune.settings import SolverSettings
from bvptune.solver import solve_bvp, solve_on_mesh
from bvptune.testbench import ALL_CASES, get_problem

# Every registered problem under the default settings.
defaults = SolverSettings.default()
print("default settings:", defaults.as_dict())
for case in ALL_CASES:
    outcome, sol = solve_bvp(get_problem(case), defaults)
    print(f"{case.value:4s} success={outcome.success} evals={outcome.ode_evaluations:6d} "
          f"grid={outcome.grid_points:5d} residuum={outcome.max_residuum:.2e}")

# Fourth order on a fixed mesh: halving h divides the error by about 16.
p = get_problem("L1")
prev = None
for n in (20, 40, 80, 160):
    sol, _, _ = solve_on_mesh(p, np.linspace(*p.interval, n + 1))
    err = np.max(np.abs(sol.values - p.exact_solution(sol.nodes)))
    print(f"L1 N={n:4d} max error {err:.3e}" + (f"  ratio {prev / err:.2f}" if prev else ""))
    prev = err

# Newton settings do nothing for a linear problem and a lot for a nonlinear one.
for case in ("L3", "N22"):
    for iters in (1, 4, 20):
        s = defaults.replace(newton_max_iterations=iters)
        o, _ = solve_bvp(get_problem(case), s)
        print(f"{case} newton_max_iterations={iters:3d}: success={o.success} evals={o.ode_evaluations} grid={o.grid_points}")
