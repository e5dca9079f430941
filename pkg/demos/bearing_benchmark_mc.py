"""Monte-Carlo comparison of the straight-line and optimal schedules.

Twenty runs with common random numbers: both schedules in a run consume the
same initial particles and the same Brownian tape.  The second part shows how
the comparison depends on the number of Euler-Maruyama steps.
"""

from dataclasses import replace

from homotopy_pff import paper_scenario, run_mc
from homotopy_pff.scenario_bench import solve_scenario_homotopy

scenario = paper_scenario()
pair = solve_scenario_homotopy(scenario)
report = run_mc(scenario, pair=pair)

print(f"{'run':>7} {'MSE base':>10} {'MSE opt':>10} {'trP base':>10} {'trP opt':>10}")
for r in report.rows:
    print(f"{r.run:>7} {r.mse_baseline:10.4f} {r.mse_optimal:10.4f} {r.trP_baseline:10.4f} {r.trP_optimal:10.4f}")
print(f"{'average':>7} {report.avg_mse_baseline:10.4f} {report.avg_mse_optimal:10.4f} "
      f"{report.avg_trP_baseline:10.4f} {report.avg_trP_optimal:10.4f}")

print("\nstep-count sensitivity (average MSE ratio optimal / baseline)")
for steps in (50, 100, 250, 500, 1000):
    rep = run_mc(replace(scenario, flow_steps=steps), pair=pair)
    print(f"{steps:5d} steps: {rep.avg_mse_optimal / rep.avg_mse_baseline:.3f}")
