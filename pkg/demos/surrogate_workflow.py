"""Generate a small labeled dataset, train the surrogates and query them.

Run: python demos/surrogate_workflow.py  (about a minute on one core)
"""

import numpy as np

from bvptune.dataset import generate, split
from bvptune.settings import SolverSettings
from bvptune.surrogate import evaluate, train_classifier, train_regressors
from bvptune.tune import TuneSession, get_solvability_status, get_solver_performance

# One shared Latin hypercube design solved on three problems.
ds = generate(["L3", "N20", "N22"], 600, seed=1)
for case in ds.cases:
    print(f"{case}: success rate {np.mean(ds.for_case(case).success):.3f}")

train, test = split(ds, 0.2, seed=0)
clf = train_classifier(train, seed=0)
regs = train_regressors(train, seed=0)

report = evaluate(clf, regs, test)
c = report.classification
print(f"classifier accuracy {c.accuracy:.3f} precision {c.precision:.3f} recall {c.recall:.3f} ROC AUC {c.roc_auc:.3f}")
for r in report.regression:
    if r.target == "ode_evaluations":
        print(f"{r.test_case} ode_evaluations: R2 {r.r2:.3f} MAPE {r.mape:.2f}%")

session = TuneSession(clf, regs, budget=640)
s = SolverSettings.default().replace(newton_max_iterations=10)
print("solvable on N22:", get_solvability_status(session, "N22", s))
print("predicted performance:", get_solver_performance(session, "N22", s))
