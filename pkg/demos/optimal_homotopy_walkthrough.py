"""Optimal log-homotopy on the two-sensor bearings benchmark.

Solves the condition-number optimal schedule, compares its objective with
the straight line, and prints a thinned version of the grid trace table
(beta*, beta* - lambda, u*, kappa and stiffness ratios).  Run with

    python demos/optimal_homotopy_walkthrough.py
"""

import numpy as np

from homotopy_pff import figure2_traces, paper_scenario
from homotopy_pff.scenario_bench import solve_scenario_homotopy

scenario = paper_scenario()
print("prior mean", scenario.prior_mean, "prior cov diag", np.diag(scenario.prior_cov))
print("likelihood linearized at", scenario.linearization_point())

pair = solve_scenario_homotopy(scenario)
print(f"\nJ(straight line) = {pair.J_baseline:.4f}")
print(f"J(optimal)       = {pair.J_optimal:.4f}")
print(f"beta*'(0) = {pair.optimal.beta_dots[0]:.3f}: the optimum moves quickly away from the ill-conditioned prior")

t = figure2_traces(scenario, pair)
cols = ["lambda", "beta_opt", "beta_opt_minus_lambda", "u_opt", "kappa_baseline", "kappa_optimal",
        "R_stiff_baseline", "R_stiff_optimal", "R_stiff_guarded"]
print("\n" + " ".join(f"{c[:14]:>14}" for c in cols))
for i in list(range(0, 10, 2)) + list(range(10, len(t["lambda"]), 25)):
    print(" ".join(f"{t[c][i]:14.5g}" for c in cols))

# where does the optimum help, and where does the guard step in?
better = t["R_stiff_optimal"] < t["R_stiff_baseline"]
print(f"\noptimal schedule is less stiff at {better.sum()} of {better.size} nodes")
print(f"mean R_stiff: baseline {t['R_stiff_baseline'].mean():.3f}, optimal {t['R_stiff_optimal'].mean():.3f}, "
      f"guarded {t['R_stiff_guarded'].mean():.3f}")
changed = np.sum(pair.flow_path.betas != pair.optimal.betas)
print(f"guard replaced {changed} nodes with the straight line")
