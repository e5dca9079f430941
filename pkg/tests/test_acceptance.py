"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line (printed in the terminal summary and
immediately with ``-s``).  Run on its own with::

    pytest tests/test_acceptance.py -v
"""

import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from homotopy_pff.gaussian_model import GaussianLogDensity, posterior_moments
from homotopy_pff.homotopy_optimizer import (
    HomotopyPath,
    OptimizerConfig,
    flow_jacobian_at,
    guard_modified_beta,
    matrix_condition_number,
    solve_optimal_homotopy,
)
from homotopy_pff.particle_flow import (
    FlowContext,
    ParticleEnsemble,
    euler_maruyama_moments,
    integrate_ensemble,
    moment_ode_oracle,
)
from homotopy_pff.scenario_bench import paper_scenario, run_mc, solve_scenario_homotopy
from homotopy_pff.stability_diagnostics import (
    bounded_check,
    check_A3,
    cond1_residual,
    gronwall_check,
    kappa_gradient_sweep,
    lemma_a3_sweep,
    lyapunov_trace,
    perturbed_drift,
    random_instance,
    random_spd,
)

RESULTS = {}


def record(k, ok, detail, elapsed, budget):
    in_time = elapsed <= budget
    passed = bool(ok) and in_time
    line = (f"criterion {k:2d}: {'PASS' if passed else 'FAIL'} | {detail} | "
            f"{elapsed:.1f} s (budget {budget:g} s{'' if in_time else ', EXCEEDED'})")
    RESULTS[k] = line
    print(line)
    return passed


@pytest.fixture(scope="module")
def paper():
    return paper_scenario()


def test_criterion_01_mu_zero_exactness(paper):
    t0 = time.perf_counter()
    sc = replace(paper, mu=0.0)
    path = solve_optimal_homotopy(sc.prior(), sc.likelihood(), sc.optimizer_config())
    dev = float(np.max(np.abs(path.betas - path.lambdas)))
    assert record(1, dev <= 1e-6, f"max |beta* - lambda| = {dev:.2e} (<= 1e-6)", time.perf_counter() - t0, 1)


def test_criterion_02_objective_values(paper):
    t0 = time.perf_counter()
    pair = solve_scenario_homotopy(replace(paper, guard=False))
    jb, jo = pair.J_baseline, pair.J_optimal
    ok = 3.8 <= jb <= 4.2 and 3.2 <= jo <= 3.6 and jo <= jb
    detail = (f"J_baseline = {jb:.4f} (target [3.8, 4.2]), J_optimal = {jo:.4f} (target [3.2, 3.6]), "
              f"J_optimal <= J_baseline: {jo <= jb}")
    assert record(2, ok, detail, time.perf_counter() - t0, 10)


def _moment_dev(ctx, steps=1000):
    worst = 0.0
    lams = np.linspace(0.0, 1.0, steps + 1)
    for lam, mp in zip(lams, moment_ode_oracle(ctx, steps)):
        ref = posterior_moments(ctx.prior, ctx.lik, ctx.path.beta(lam))
        worst = max(worst, np.max(np.abs(mp.mean - ref.mean)), np.max(np.abs(mp.cov - ref.cov)))
    return worst


def _ensemble_z(ctx, n_particles, steps, seed, batch=20_000):
    # batches of independent child streams form one large ensemble
    start = posterior_moments(ctx.prior, ctx.lik, 0.0)
    states = []
    for b in range(n_particles // batch):
        ens = ParticleEnsemble.from_prior(start.mean, start.cov, batch, steps, seed=[seed, b])
        states.append(integrate_ensemble(ens, ctx).states)
    X = np.vstack(states)
    ref = posterior_moments(ctx.prior, ctx.lik, 1.0)
    N = X.shape[0]
    d = np.diag(ref.cov)
    z_mean = np.abs(X.mean(axis=0) - ref.mean) / np.sqrt(d / N)
    se_cov = np.sqrt((np.outer(d, d) + ref.cov ** 2) / N)
    z_cov = np.abs(np.cov(X, rowvar=False) - ref.cov) / se_cov
    em = euler_maruyama_moments(ctx, steps)
    z_bias = np.abs(em.mean - ref.mean) / np.sqrt(d / N)
    return float(max(z_mean.max(), z_cov.max())), float(z_bias.max())


def test_criterion_03_oracle_equivalence(paper):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2023)
    worst_rand = 0.0
    for _ in range(20):
        ctx = random_instance(rng, int(rng.integers(1, 5)))
        worst_rand = max(worst_rand, _moment_dev(ctx))
    pair = solve_scenario_homotopy(paper)
    prior, lik, Q = paper.prior(), paper.likelihood(), np.asarray(paper.Q)
    worst_paper = max(_moment_dev(FlowContext(prior, lik, Q, p)) for p in (pair.baseline, pair.flow_path))
    z, z_bias = _ensemble_z(FlowContext(prior, lik, Q, pair.baseline), 100_000, 1000, seed=7)
    ok = worst_rand <= 1e-6 and worst_paper <= 1e-6 and z <= 4.0
    detail = (f"moment ODE vs closed form: random {worst_rand:.1e}, paper {worst_paper:.1e} (<= 1e-6); "
              f"1e5 x 1e3 ensemble on paper preset: max |z| = {z:.2f} (<= 4), "
              f"of which Euler-Maruyama bias alone = {z_bias:.2f}")
    assert record(3, ok, detail, time.perf_counter() - t0, 120)


def test_criterion_04_cond1_residual():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    worst, worst_pert = 0.0, np.inf
    probe = perturbed_drift(0.1, 0)
    for _ in range(20):
        ctx = random_instance(rng, int(rng.integers(1, 5)))
        for lam in rng.uniform(0.0, 1.0, 100):
            x = 3.0 * rng.standard_normal(ctx.n)
            worst = max(worst, cond1_residual(ctx, lam, x))
        x = rng.standard_normal(ctx.n) + 1.0
        worst_pert = min(worst_pert, cond1_residual(ctx, float(rng.uniform()), x, probe))
    ok = worst <= 1e-8 and worst_pert > 1e-3
    detail = f"max residual {worst:.1e} (<= 1e-8); min perturbed residual {worst_pert:.1e} (> 1e-3)"
    assert record(4, ok, detail, time.perf_counter() - t0, 30)


def test_criterion_05_lyapunov_bounds():
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    exp_viol = bnd_viol = n_exp = n_bnd = 0
    while n_exp < 10:
        ctx = random_instance(rng, int(rng.integers(2, 5)), q_kind="spd")
        if not check_A3(ctx)[0]:
            continue
        rep = gronwall_check(lyapunov_trace(rng.standard_normal(ctx.n), ctx, steps=1000), atol=0.0, rtol=1e-6)
        exp_viol += rep.n_violations
        n_exp += 1
    for _ in range(10):
        ctx = random_instance(rng, int(rng.integers(2, 5)), q_kind="singular")
        rep = bounded_check(lyapunov_trace(rng.standard_normal(ctx.n), ctx, steps=1000), atol=0.0, rtol=1e-6)
        bnd_viol += rep.n_violations
        n_bnd += 1
    ok = exp_viol == 0 and bnd_viol == 0
    detail = (f"exponential bound: {exp_viol} violating nodes over {n_exp} Q > 0 traces; "
              f"boundedness: {bnd_viol} over {n_bnd} singular-Q traces")
    assert record(5, ok, detail, time.perf_counter() - t0, 30)


def test_criterion_06_condition_number_ordering():
    t0 = time.perf_counter()
    rep = lemma_a3_sweep(1000, seed=606, rtol=1e-10)
    detail = f"{rep.n_violations} violations in {rep.n_checked} pairs, worst relative excess {rep.worst:.1e}"
    assert record(6, rep.ok and rep.n_checked == 1000, detail, time.perf_counter() - t0, 30)


def test_criterion_07_gradient_oracle():
    t0 = time.perf_counter()
    reps = {norm: kappa_gradient_sweep(norm, 500, seed=707, rtol=1e-5) for norm in ("nuclear", "spectral")}
    ok = all(r.ok for r in reps.values())
    detail = ", ".join(f"{k}: {r.n_violations}/{r.n_checked} beyond 1e-5 (worst {r.worst:.1e})" for k, r in reps.items())
    assert record(7, ok, detail, time.perf_counter() - t0, 30)


def test_criterion_08_table1_direction(paper):
    t0 = time.perf_counter()
    rep = run_mc(paper)
    mb, mo = rep.avg_mse_baseline, rep.avg_mse_optimal
    tb, to = rep.avg_trP_baseline, rep.avg_trP_optimal
    ratio = mo / mb
    ok = rep.n_failed == 0 and mo < mb and to < tb and 0.5 <= ratio <= 0.95
    detail = (f"avg MSE optimal {mo:.4f} vs baseline {mb:.4f}, ratio {ratio:.3f} (target [0.5, 0.95]); "
              f"avg trP optimal {to:.4f} vs baseline {tb:.4f}; failed runs {rep.n_failed}")
    assert record(8, ok, detail, time.perf_counter() - t0, 300)


def _dominance_violations(prior, lik, Q, norm, n_intervals):
    cfg = OptimizerConfig(mu=0.2, norm=norm, n_intervals=n_intervals)
    opt = solve_optimal_homotopy(prior, lik, cfg)
    base = HomotopyPath.linear(n_intervals)
    mod = guard_modified_beta(opt, base, prior, lik, Q, norm)
    bad = 0
    for i in range(mod.lambdas.size):
        k_mod = matrix_condition_number(flow_jacobian_at(prior, lik, Q, mod.betas[i], mod.beta_dots[i]), norm)
        k_base = matrix_condition_number(flow_jacobian_at(prior, lik, Q, base.betas[i], base.beta_dots[i]), norm)
        bad += k_mod > k_base
    return bad


def test_criterion_09_guard_dominance(paper):
    t0 = time.perf_counter()
    bad = _dominance_violations(paper.prior(), paper.likelihood(), np.asarray(paper.Q), paper.norm, paper.n_intervals)
    rng = np.random.default_rng(909)
    for i in range(10):
        n = int(rng.integers(2, 5))
        prior = GaussianLogDensity(-random_spd(rng, n, 2.0), rng.standard_normal(n))
        G = rng.standard_normal((n, n))
        lik = GaussianLogDensity(-G.T @ G, rng.standard_normal(n), role="likelihood")
        bad += _dominance_violations(prior, lik, random_spd(rng, n, 1.0), ("nuclear", "spectral")[i % 2], 100)
    detail = f"{bad} grid nodes where the guarded schedule is worse (paper preset + 10 random instances)"
    assert record(9, bad == 0, detail, time.perf_counter() - t0, 30)


def test_criterion_10_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    outs = []
    for name in ("a", "b"):
        cmd = [sys.executable, "-m", "homotopy_pff", "compare", "--preset", "paper", "--seed", "42",
               "--out", str(tmp_path / name)]
        subprocess.run(cmd, check=True, capture_output=True)
        outs.append((tmp_path / name / "table1.csv").read_bytes())
    same = outs[0] == outs[1]
    detail = f"table1.csv byte-identical across two invocations: {same} ({len(outs[0])} bytes)"
    assert record(10, same, detail, time.perf_counter() - t0, 60)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
