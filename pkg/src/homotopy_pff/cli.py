"""Command-line front end.

Subcommands::

    solve-homotopy   optimal schedule, objective values, homotopy.csv
    run-filter       one CRN ensemble under both schedules, filter.csv
    compare          Monte-Carlo comparison, table1.csv
    verify           randomized oracle suite, pass/fail per property

Configuration is a JSON object whose keys are :class:`Scenario` fields,
plus the optional keys ``preset`` (``"paper"``), ``reverse_sensors``,
``optimizer`` (extra :class:`OptimizerConfig` fields), ``out`` and ``jobs``.
Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import AssumptionViolation, BracketError, ContractError, FlowError, MeasurementError
from .gaussian_model import posterior_moments
from .homotopy_optimizer import NormChoice, OptimizerConfig, check_theorem_3_2, solve_optimal_homotopy
from .particle_flow import FlowContext, ParticleEnsemble, integrate_ensemble, moment_ode_oracle
from .scenario_bench import Scenario, figure2_traces, paper_scenario, run_mc, solve_scenario_homotopy
from . import stability_diagnostics as sd

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

_SCENARIO_FIELDS = {f.name for f in fields(Scenario)}
_OPTIMIZER_FIELDS = {"n_intervals", "bracket", "max_bracket", "tol", "rtol", "atol", "max_iter"}


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration for one CLI invocation."""

    scenario: Scenario
    optimizer: Dict[str, object] = field(default_factory=dict)
    out: str = "."
    jobs: int = 1

    def __post_init__(self):
        if self.jobs < 1:
            raise ContractError("jobs must be at least 1")
        unknown = set(self.optimizer) - _OPTIMIZER_FIELDS
        if unknown:
            raise ContractError(f"unknown optimizer keys: {sorted(unknown)}")
        for key in ("tol", "rtol", "atol"):
            if key in self.optimizer and not float(self.optimizer[key]) > 0:
                raise ContractError(f"optimizer.{key} must be positive")

    def to_dict(self) -> dict:
        d = self.scenario.to_dict()
        d["optimizer"] = dict(self.optimizer)
        d["out"] = self.out
        d["jobs"] = self.jobs
        return d


def _tuplify(v):
    return tuple(_tuplify(e) for e in v) if isinstance(v, (list, tuple)) else v


def build_config(raw: dict, args: Optional[argparse.Namespace] = None) -> RunConfig:
    """Merge a parsed JSON object and command-line overrides into a :class:`RunConfig`."""
    raw = dict(raw)
    preset = raw.pop("preset", None)
    reverse = bool(raw.pop("reverse_sensors", False))
    optimizer = dict(raw.pop("optimizer", {}) or {})
    out = raw.pop("out", ".")
    jobs = int(raw.pop("jobs", 1))
    unknown = set(raw) - _SCENARIO_FIELDS
    if unknown:
        raise ContractError(f"unknown config keys: {sorted(unknown)}")
    if args is not None and getattr(args, "preset", None):
        preset = args.preset
    if preset is not None and preset != "paper":
        raise ContractError(f"unknown preset {preset!r}")

    overrides = {k: _tuplify(v) for k, v in raw.items()}
    if args is not None:
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.norm is not None:
            overrides["norm"] = args.norm
        if args.mu is not None:
            overrides["mu"] = args.mu
        if args.guard is not None:
            overrides["guard"] = args.guard == "on"
        if args.out is not None:
            out = args.out
        if args.jobs is not None:
            jobs = args.jobs
    if preset == "paper" or not overrides.keys() >= {"sensor_positions", "target_truth", "prior_mean",
                                                     "prior_cov", "R", "z", "Q"}:
        scenario = paper_scenario(reverse_sensors=reverse, **overrides)
    else:
        scenario = Scenario(**overrides)
    return RunConfig(scenario, optimizer, str(out), jobs)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """Deterministic CSV: 17 significant digits, LF line endings."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# -- subcommands -------------------------------------------------------------

def cmd_solve_homotopy(cfg: RunConfig) -> int:
    pair = solve_scenario_homotopy(cfg.scenario, **cfg.optimizer)
    t = figure2_traces(cfg.scenario, pair)
    header = ["lambda", "beta_opt", "beta_dot_opt", "kappa_baseline", "kappa_optimal",
              "R_stiff_baseline", "R_stiff_optimal"]
    cols = [t["lambda"], t["beta_opt"], t["u_opt"], t["kappa_baseline"], t["kappa_optimal"],
            t["R_stiff_baseline"], t["R_stiff_optimal"]]
    out = Path(cfg.out) / "homotopy.csv"
    write_csv(out, header, list(zip(*cols)))
    print(f"J_baseline {pair.J_baseline:.6f}")
    print(f"J_optimal {pair.J_optimal:.6f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_run_filter(cfg: RunConfig) -> int:
    sc = cfg.scenario
    pair = solve_scenario_homotopy(sc, **cfg.optimizer)
    prior, lik = sc.prior(), sc.likelihood()
    Q = np.asarray(sc.Q, float)
    ens = ParticleEnsemble.from_prior(sc.prior_mean, sc.prior_cov, sc.n_particles, sc.flow_steps, seed=[sc.seed, 0])
    relin = sc.likelihood if sc.relinearize else None
    finals = {}
    for name, path in (("baseline", pair.baseline), ("optimal", pair.flow_path)):
        finals[name] = integrate_ensemble(ens, FlowContext(prior, lik, Q, path), relinearize=relin)
    truth = np.asarray(sc.target_truth, float)
    rows = [[i, *finals["baseline"].states[i], *finals["optimal"].states[i]] for i in range(ens.n_particles)]
    out = Path(cfg.out) / "filter.csv"
    write_csv(out, ["particle", "x_baseline", "y_baseline", "x_optimal", "y_optimal"], rows)
    for name, fin in finals.items():
        est = fin.mean()
        print(f"{name}: estimate ({est[0]:.6f}, {est[1]:.6f}) "
              f"MSE {np.sum((est - truth) ** 2):.6f} trP {np.trace(fin.cov()):.6f}")
    print(f"noise tape sha256 {ens.tape_hash()}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    report = run_mc(cfg.scenario, jobs=cfg.jobs, pair=solve_scenario_homotopy(cfg.scenario, **cfg.optimizer))
    rows: List[list] = []
    for r in report.rows:
        if r.failed:
            rows.append([r.run, "failed", "failed", "failed", "failed"])
        else:
            rows.append([r.run, r.mse_baseline, r.mse_optimal, r.trP_baseline, r.trP_optimal])
    rows.append(["average", report.avg_mse_baseline, report.avg_mse_optimal,
                 report.avg_trP_baseline, report.avg_trP_optimal])
    out = Path(cfg.out) / "table1.csv"
    write_csv(out, ["run", "MSE_baseline", "MSE_optimal", "trP_baseline", "trP_optimal"], rows)
    print("# MSE: squared error of the ensemble-mean estimate per run; trP: trace of the ensemble covariance")
    print(f"average MSE baseline {report.avg_mse_baseline:.6f} optimal {report.avg_mse_optimal:.6f}")
    print(f"average trP baseline {report.avg_trP_baseline:.6f} optimal {report.avg_trP_optimal:.6f}")
    if report.n_failed:
        print(f"{report.n_failed} of {len(report.rows)} runs failed", file=sys.stderr)
    print(f"wrote {out}")
    return EXIT_FAIL if report.n_failed == len(report.rows) else EXIT_OK


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: worst {self.worst:.3e}{extra}"


def verify_suite(cfg: RunConfig, perturb_drift: bool = False, n_instances: int = 20) -> List[CheckResult]:
    """Randomized oracle checks; returns one result per property."""
    rng = np.random.default_rng(cfg.scenario.seed)
    results: List[CheckResult] = []

    # necessary condition on the drift
    drift_fn = sd.perturbed_drift() if perturb_drift else None
    worst = 0.0
    for _ in range(n_instances):
        ctx = sd.random_instance(rng, int(rng.integers(1, 5)))
        for lam in rng.uniform(0.0, 1.0, 20):
            x = 3.0 * rng.standard_normal(ctx.n)
            worst = max(worst, sd.cond1_residual(ctx, lam, x, drift_fn))
    results.append(CheckResult("cond1 residual <= 1e-8", worst <= 1e-8, worst,
                               "perturbed drift" if perturb_drift else ""))

    # moment ODE against closed form
    worst = 0.0
    for _ in range(5):
        ctx = sd.random_instance(rng, int(rng.integers(1, 5)), n_intervals=100)
        moments = moment_ode_oracle(ctx, steps=400)
        for lam, mp in zip(np.linspace(0.0, 1.0, 401)[::40], moments[::40]):
            ref = posterior_moments(ctx.prior, ctx.lik, ctx.path.beta(lam))
            worst = max(worst, np.max(np.abs(mp.mean - ref.mean)), np.max(np.abs(mp.cov - ref.cov)))
    results.append(CheckResult("moment ODE matches closed form <= 1e-6", worst <= 1e-6, worst))

    # Lyapunov bounds
    viol = 0
    worst = 0.0
    used = 0
    for kind in ("spd", "singular"):
        for _ in range(5):
            ctx = sd.random_instance(rng, int(rng.integers(2, 5)), q_kind=kind, n_intervals=100)
            holds, _ = sd.check_A3(ctx)
            if not holds:
                continue
            trace = sd.lyapunov_trace(rng.standard_normal(ctx.n), ctx, steps=400)
            rep = sd.gronwall_check(trace) if kind == "spd" else sd.bounded_check(trace)
            viol += rep.n_violations
            worst = max(worst, rep.max_violation)
            used += 1
    sQ = np.asarray(cfg.scenario.Q, float)
    if np.linalg.eigvalsh(sQ)[0] > 0:
        pair = solve_scenario_homotopy(cfg.scenario, **cfg.optimizer)
        ctx = FlowContext(cfg.scenario.prior(), cfg.scenario.likelihood(), sQ, pair.flow_path)
        if sd.check_A3(ctx)[0]:
            rep = sd.gronwall_check(sd.lyapunov_trace(np.ones(ctx.n), ctx, steps=1000))
            viol += rep.n_violations
            worst = max(worst, rep.max_violation)
            used += 1
    results.append(CheckResult("Lyapunov exponential/bounded decay", viol == 0 and used > 0, worst,
                               f"{used} traces, {viol} violating nodes"))

    rep = sd.lemma_a3_sweep(1000, seed=int(rng.integers(2**31)))
    results.append(CheckResult("spectral condition-number ordering sweep", rep.ok, max(rep.worst, 0.0),
                               f"{rep.n_violations} of {rep.n_checked}"))
    for norm in NormChoice:
        rep = sd.kappa_gradient_sweep(norm, 200, seed=int(rng.integers(2**31)))
        results.append(CheckResult(f"kappa gradient vs finite difference ({norm.value})", rep.ok, rep.worst,
                                   f"{rep.n_violations} of {rep.n_checked}"))

    # non-negativity of the spectral-norm optimum where its hypotheses hold
    bugs = 0
    checked = 0
    for _ in range(5):
        ctx = sd.random_instance(rng, 2)
        try:
            path = solve_optimal_homotopy(ctx.prior, ctx.lik, OptimizerConfig(mu=0.2, norm="spectral", n_intervals=50))
        except (BracketError, AssumptionViolation):
            continue
        r = check_theorem_3_2(ctx.prior, ctx.lik, path, "spectral")
        checked += r.applicable
        bugs += r.solver_bug
    results.append(CheckResult("optimal schedule non-negativity", bugs == 0, float(bugs),
                               f"{checked} applicable instances"))
    return results


def cmd_verify(cfg: RunConfig, perturb_drift: bool = False) -> int:
    results = verify_suite(cfg, perturb_drift)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_FAIL


# -- entry point -------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--preset", choices=["paper"], help="start from the built-in benchmark configuration")
    common.add_argument("--seed", type=int, help="master seed (non-negative integer)")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--norm", choices=[n.value for n in NormChoice])
    common.add_argument("--mu", type=float, help="condition-number weight")
    common.add_argument("--guard", choices=["on", "off"], help="apply the flow-Jacobian guard to the optimal schedule")
    common.add_argument("--jobs", type=int, help="parallel Monte-Carlo workers")
    common.add_argument("--dump-config", action="store_true", help="print the resolved configuration as JSON and exit")

    parser = argparse.ArgumentParser(prog="homotopy-pff", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-homotopy", parents=[common], help="solve the optimal schedule and write homotopy.csv")
    sub.add_parser("run-filter", parents=[common], help="flow one ensemble under both schedules")
    sub.add_parser("compare", parents=[common], help="Monte-Carlo comparison, write table1.csv")
    v = sub.add_parser("verify", parents=[common], help="run the randomized oracle suite")
    v.add_argument("--perturb-drift", action="store_true", help="inject a drift error to exercise the detector")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    raw: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            parser.print_usage(sys.stderr)
            print(f"error: config file not found: {args.config}", file=sys.stderr)
            return EXIT_USAGE
        except json.JSONDecodeError as exc:
            parser.print_usage(sys.stderr)
            print(f"error: invalid JSON in {args.config}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if not isinstance(raw, dict):
            print("error: config must be a JSON object", file=sys.stderr)
            return EXIT_USAGE
    if args.seed is not None and args.seed < 0:
        parser.print_usage(sys.stderr)
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = build_config(raw, args)
    except (ContractError, TypeError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.dump_config:
        print(json.dumps(cfg.to_dict(), indent=2))
        return EXIT_OK

    try:
        if args.command == "solve-homotopy":
            return cmd_solve_homotopy(cfg)
        if args.command == "run-filter":
            return cmd_run_filter(cfg)
        if args.command == "compare":
            return cmd_compare(cfg)
        return cmd_verify(cfg, args.perturb_drift)
    except (BracketError, AssumptionViolation, FlowError, MeasurementError, ContractError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
