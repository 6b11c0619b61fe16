"""Pareto-optimal settings from the surrogates, checked against the real solver.

Run: python demos/pareto_tuning.py [out_dir]
"""

import sys
from pathlib import Path

from bvptune.dataset import generate
from bvptune.optimize import ObjectiveSpec, optimize_settings, validate_against_solver
from bvptune.surrogate import train_classifier, train_regressors
from bvptune.tune import TuneSession, get_optimal_evaluations_residuum, get_optimal_ode_evaluations, visualize

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

ds = generate(["N19", "N23"], 800, seed=3)
session = TuneSession(train_classifier(ds, seed=0), train_regressors(ds, seed=0), budget=1280, seed=0)

settings, evals = get_optimal_ode_evaluations(session, "N19")
print(f"fewest predicted ODE evaluations on N19: {evals:.0f} with {settings}")

front = get_optimal_evaluations_residuum(session, "N19")
print(front[["predicted_ode_evaluations", "predicted_max_residuum", "feasibility_probability"]].head(10))
print("plot:", visualize(front, out / "n19_evals_residuum.svg"))

# The real solver has the last word.
pf = optimize_settings(ObjectiveSpec(("evals", "residuum"), "N19", 1280, 0), session.classifier, session.regressor("N19"))
report = validate_against_solver(pf)
print(f"{len(report.rows)} front points, actually solvable: {report.success_fraction:.2%}")
print("median relative error:", report.median_relative_error)
