"""Transition probabilities and emission levels implied by the published means.

Run: python demos/published_scenarios.py
"""
import numpy as np

from nbarhmm import published_means
from nbarhmm.model import autoregressive_coefficient, emission_rate, transition_matrix
from nbarhmm.states import default_scenarios

params = published_means()
np.set_printoptions(precision=4, suppress=True)

# Covariates at their pooled mean (zero after standardization) with the
# ceasefire flags switched off, on, or set to the two weeks before.
for name, x in default_scenarios(params.covariates).items():
    print(f"\n{name}: one-week transition matrix")
    print(transition_matrix(params, x).matrix)

base = default_scenarios(params.covariates)["baseline"]
print("\nexpected weekly deaths with no recent deaths (states 1, 2, 3):")
print([round(float(emission_rate(params, s, np.zeros(4), base).mean), 4) for s in (1, 2, 3)])

for name, x in default_scenarios(params.covariates).items():
    print(f"{name}: rho/c in state 3 = {autoregressive_coefficient(params, 3, x):.4f}")
