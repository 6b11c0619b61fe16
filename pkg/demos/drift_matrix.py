"""How differently do the problems respond to the same settings? Pairwise PSI.

Run: python demos/drift_matrix.py
"""

from bvptune.dataset import generate
from bvptune.drift import psi_from_proportions, psi_matrix

print("two-bin example:", round(psi_from_proportions([0.25, 0.75], [0.5, 0.5]).value, 4))

ds = generate(["N19", "N20", "N22", "N23", "N24", "N33"], 500, seed=5)
m = psi_matrix(ds, "ode_evaluations")
print("row = reference population, column = candidate")
print("      " + " ".join(f"{c:>8s}" for c in m.cases))
for case, row in zip(m.cases, m.values):
    print(f"{case:5s} " + " ".join(f"{v:8.4f}" for v in row))
