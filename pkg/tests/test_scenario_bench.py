import math
from dataclasses import replace

import numpy as np
import pytest

import homotopy_pff.scenario_bench as sb
from homotopy_pff.errors import ContractError, FlowError, MeasurementError
from homotopy_pff.scenario_bench import (
    Scenario,
    bearing_jacobian,
    bearing_model,
    figure2_traces,
    paper_scenario,
    run_mc,
)


def _small(**kw):
    base = dict(n_mc_runs=3, n_particles=20, flow_steps=100, n_intervals=50)
    base.update(kw)
    return paper_scenario(**base)


class TestBearing:
    def test_examples(self):
        sensors = [(3.5, 0.0), (-3.5, 0.0)]
        got = bearing_model([4.0, 4.0], sensors)
        np.testing.assert_allclose(got, [math.atan(8.0), math.atan(8.0 / 15.0)], rtol=1e-14)
        # quoted values are rounded; the second is arctan(8/15) = 0.489957...
        np.testing.assert_allclose(got, [1.44644, 0.49003], atol=1e-4)
        assert bearing_model([5.0, 0.0], [(1.0, 0.0)])[0] == 0.0

    def test_full_circle(self):
        assert bearing_model([-1.0, -1.0], [(0.0, 0.0)])[0] == pytest.approx(-3 * np.pi / 4)

    def test_coincident(self):
        with pytest.raises(MeasurementError):
            bearing_model([3.5, 0.0], [(3.5, 0.0)])
        with pytest.raises(MeasurementError):
            bearing_jacobian([3.5, 0.0], [(3.5, 0.0)])


class TestScenario:
    def test_paper_constants(self, scenario):
        assert np.trace(np.asarray(scenario.prior_cov)) == 1002.0
        assert scenario.z == (0.4754, 1.1868)
        assert scenario.mu == 0.2
        np.testing.assert_array_equal(scenario.Q, np.diag([4.0, 0.4]))
        np.testing.assert_array_equal(scenario.R, np.diag([0.04, 0.04]))
        assert scenario.prior_mean == (3.0, 5.0)
        assert scenario.target_truth == (4.0, 4.0)
        assert scenario.sensor_positions == ((3.5, 0.0), (-3.5, 0.0))
        assert (scenario.n_particles, scenario.n_mc_runs) == (50, 20)

    def test_reverse_switch(self):
        assert paper_scenario(reverse_sensors=True).sensor_positions == ((-3.5, 0.0), (3.5, 0.0))

    def test_roundtrip(self, scenario):
        assert Scenario.from_dict(scenario.to_dict()) == scenario

    @pytest.mark.parametrize("field, value", [
        ("prior_cov", ((1.0, 0.0), (0.0, -1.0))),
        ("R", ((0.0, 0.0), (0.0, 0.04))),
        ("Q", ((-1.0, 0.0), (0.0, 1.0))),
        ("target_truth", (3.5, 0.0)),
        ("z", (0.1,)),
    ])
    def test_invariants(self, scenario, field, value):
        with pytest.raises(ContractError):
            replace(scenario, **{field: value})

    def test_linearization_choices(self, scenario):
        a = scenario.likelihood()
        b = replace(scenario, linearization="truth").likelihood()
        c = replace(scenario, linearization=(4.0, 4.0)).likelihood()
        np.testing.assert_array_equal(b.A, c.A)
        assert not np.allclose(a.A, b.A)
        with pytest.raises(ContractError):
            replace(scenario, linearization="map").likelihood()


class TestHomotopy:
    def test_optimal_not_worse(self, scenario_pair):
        assert scenario_pair.J_optimal <= scenario_pair.J_baseline

    def test_figure2_columns(self, scenario, scenario_pair):
        t = figure2_traces(scenario, scenario_pair)
        assert t["beta_opt"][0] == 0.0 and t["beta_opt"][-1] == 1.0
        assert t["lambda"][0] == 0.0 and t["lambda"][-1] == 1.0
        assert all(len(v) == len(t["lambda"]) for v in t.values())

    def test_mu_zero_flat_difference(self):
        sc = paper_scenario(mu=0.0, n_intervals=40)
        t = figure2_traces(sc)
        np.testing.assert_allclose(t["beta_opt_minus_lambda"], 0.0, atol=1e-8)

    def test_mean_stiffness_not_increased(self, scenario, scenario_pair):
        t = figure2_traces(scenario, scenario_pair)
        assert np.mean(t["R_stiff_optimal"]) <= np.mean(t["R_stiff_baseline"])

    def test_guarded_schedule_reduces_mean_stiffness(self, scenario, scenario_pair):
        t = figure2_traces(scenario, scenario_pair)
        assert np.mean(t["R_stiff_guarded"]) <= np.mean(t["R_stiff_baseline"])


class TestMonteCarlo:
    def test_deterministic(self):
        sc = _small()
        a, b = run_mc(sc), run_mc(sc)
        assert a == b

    def test_parallel_matches_serial(self):
        sc = _small()
        assert run_mc(sc, jobs=2) == run_mc(sc)

    def test_averages_are_row_means(self):
        rep = run_mc(_small())
        assert rep.avg_mse_baseline == pytest.approx(np.mean([r.mse_baseline for r in rep.rows]), rel=1e-15)
        assert rep.avg_trP_optimal == pytest.approx(np.mean([r.trP_optimal for r in rep.rows]), rel=1e-15)

    def test_single_run(self):
        rep = run_mc(_small(n_mc_runs=1))
        assert len(rep.rows) == 1
        assert rep.avg_mse_optimal == rep.rows[0].mse_optimal

    def test_runs_use_distinct_tapes(self):
        rep = run_mc(_small())
        assert len(set(rep.tape_hashes)) == len(rep.rows)

    def test_mu_zero_arms_identical(self):
        rep = run_mc(_small(mu=0.0, guard=False))
        for r in rep.rows:
            assert r.mse_optimal == pytest.approx(r.mse_baseline, rel=1e-9)
            assert r.trP_optimal == pytest.approx(r.trP_baseline, rel=1e-9)

    def test_failed_run_is_marked(self, monkeypatch):
        calls = {"n": 0}
        real = sb.integrate_ensemble

        def flaky(ens, ctx, **kw):
            calls["n"] += 1
            if calls["n"] == 1:
                raise FlowError("boom", lam=0.5, particle=0)
            return real(ens, ctx, **kw)

        monkeypatch.setattr(sb, "integrate_ensemble", flaky)
        rep = run_mc(_small())
        assert rep.rows[0].failed and "boom" in rep.rows[0].message
        assert rep.n_failed == 1
        assert not math.isnan(rep.avg_mse_baseline)

    def test_relinearization_runs(self):
        rep = run_mc(_small(relinearize=True, n_mc_runs=1))
        assert not rep.rows[0].failed
