import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from homotopy_pff.cli import build_config, main, make_parser, write_csv
from homotopy_pff.errors import ContractError
from homotopy_pff.scenario_bench import paper_scenario

FAST = {"n_mc_runs": 2, "n_particles": 10, "flow_steps": 60, "n_intervals": 40}


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preset": "paper", **FAST}))
    return path


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_preset_expands_exactly():
    args = make_parser().parse_args(["compare", "--preset", "paper"])
    assert build_config({}, args).scenario == paper_scenario()


def test_flags_override_file():
    args = make_parser().parse_args(["compare", "--mu", "0.5", "--seed", "9", "--guard", "off", "--norm", "spectral"])
    sc = build_config({"mu": 0.1, "seed": 1}, args).scenario
    assert (sc.mu, sc.seed, sc.guard, sc.norm.value) == (0.5, 9, False, "spectral")


def test_unknown_keys_rejected():
    with pytest.raises(ContractError):
        build_config({"bogus": 1})
    with pytest.raises(ContractError):
        build_config({"optimizer": {"bogus": 1}})
    with pytest.raises(ContractError):
        build_config({"optimizer": {"tol": 0.0}})


def test_dump_config(capsys):
    assert main(["solve-homotopy", "--preset", "paper", "--dump-config"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["mu"] == 0.2 and d["norm"] == "nuclear" and d["guard"] is True


def test_missing_config(tmp_path, capsys):
    assert main(["solve-homotopy", "--config", str(tmp_path / "nope.json")]) != 0
    assert "usage" in capsys.readouterr().err


def test_negative_seed(capsys):
    assert main(["compare", "--seed", "-1"]) != 0


def test_solve_homotopy_mu_zero(tmp_path, fast_config, capsys):
    assert main(["solve-homotopy", "--config", str(fast_config), "--mu", "0", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    values = dict(line.split()[:2] for line in out.splitlines() if line.startswith("J_"))
    assert float(values["J_baseline"]) == pytest.approx(0.5)
    assert float(values["J_optimal"]) == pytest.approx(0.5)
    rows = _read(tmp_path / "homotopy.csv")
    assert rows[0] == ["lambda", "beta_opt", "beta_dot_opt", "kappa_baseline", "kappa_optimal",
                       "R_stiff_baseline", "R_stiff_optimal"]
    assert len(rows) == 1 + 41
    assert float(rows[1][1]) == 0.0 and float(rows[-1][1]) == 1.0


def test_compare_layout_and_determinism(tmp_path, fast_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["compare", "--config", str(fast_config), "--seed", "42", "--out", str(a)]) == 0
    assert main(["compare", "--config", str(fast_config), "--seed", "42", "--out", str(b), "--jobs", "2"]) == 0
    raw = (a / "table1.csv").read_bytes()
    assert raw == (b / "table1.csv").read_bytes()
    assert b"\r" not in raw
    rows = _read(a / "table1.csv")
    assert rows[0] == ["run", "MSE_baseline", "MSE_optimal", "trP_baseline", "trP_optimal"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "average"]
    body = np.array([[float(v) for v in r[1:]] for r in rows[1:3]])
    np.testing.assert_allclose([float(v) for v in rows[3][1:]], body.mean(axis=0), rtol=1e-15)


def test_compare_single_run(tmp_path, fast_config):
    cfg = tmp_path / "one.json"
    cfg.write_text(json.dumps({"preset": "paper", **FAST, "n_mc_runs": 1}))
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "table1.csv")
    assert len(rows) == 3 and rows[1][1:] == rows[2][1:]


def test_compare_all_failed(tmp_path, fast_config, monkeypatch):
    import homotopy_pff.scenario_bench as sb
    from homotopy_pff.errors import FlowError

    def boom(*a, **k):
        raise FlowError("diverged", lam=0.1)

    monkeypatch.setattr(sb, "integrate_ensemble", boom)
    assert main(["compare", "--config", str(fast_config), "--out", str(tmp_path)]) == 1
    rows = _read(tmp_path / "table1.csv")
    assert rows[1][1] == "failed"


def test_run_filter(tmp_path, fast_config, capsys):
    assert main(["run-filter", "--config", str(fast_config), "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "filter.csv")
    assert len(rows) == 1 + FAST["n_particles"]
    assert "noise tape sha256" in capsys.readouterr().out


def test_verify_passes(capsys):
    assert main(["verify", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "[FAIL]" not in out and "Lyapunov" in out


def test_verify_detects_perturbation(capsys):
    assert main(["verify", "--seed", "3", "--perturb-drift"]) == 1
    assert "[FAIL] cond1" in capsys.readouterr().out


def test_csv_format(tmp_path):
    write_csv(tmp_path / "x.csv", ["a", "b"], [[0.1, 1 / 3]])
    assert (tmp_path / "x.csv").read_bytes() == b"a,b\n0.10000000000000001,0.33333333333333331\n"


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "homotopy_pff", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "solve-homotopy" in r.stdout
