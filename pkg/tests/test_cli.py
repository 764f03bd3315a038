import json

import numpy as np
import pytest

from evanslab.cli import main
from evanslab.timedomain.scenario import Scenario, make_g, make_h


def _run(argv, capsys):
    code = main(argv)
    report = json.loads(capsys.readouterr().out)
    assert report["exit_code"] == code
    return code, report


def test_check_builtin(tmp_path, capsys):
    code, rep = _run(["check", "--model", "burgers_outflow", "--out", str(tmp_path)], capsys)
    assert code == 0 and rep["status"] == "ok"


def test_check_hypothesis_failure(tmp_path, capsys):
    bad = tmp_path / "m.json"
    bad.write_text(json.dumps({"name": "neg", "n": 1, "flux": "burgers", "viscosity": [[-1.0]],
                               "u_plus": [-1.0], "u_zero": [0.5]}))
    code, _ = _run(["check", "--model", str(bad), "--out", str(tmp_path)], capsys)
    assert code == 2


def test_malformed_model_file(tmp_path, capsys):
    bad = tmp_path / "m.json"
    bad.write_text("{not json")
    code, rep = _run(["check", "--model", str(bad), "--out", str(tmp_path)], capsys)
    assert code == 1 and rep["status"] == "error"


def test_missing_model_and_bad_args(tmp_path, capsys):
    assert _run(["check", "--out", str(tmp_path)], capsys)[0] == 1
    assert main(["nosuchcommand"]) == 1


def test_profile_no_connection(tmp_path, capsys):
    code, rep = _run(["profile", "--model", "burgers_inflow", "--out", str(tmp_path)], capsys)
    assert code == 3 and rep["error"] == "NoConnection"


def test_profile_ok(tmp_path, capsys):
    code, rep = _run(["profile", "--model", "burgers_outflow", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "profile_config.json").exists()


def test_evans_lambda_list(tmp_path, capsys):
    code, rep = _run(["evans", "--model", "constant_scalar", "--lambdas", "1,0.5+2j",
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    csvs = list(tmp_path.glob("*.csv"))
    assert csvs
    rows = [l for l in csvs[0].read_text().splitlines() if l and not l.startswith(("#", "re_"))]
    assert len(rows) == 2
    assert all(abs(float(r.split(",")[2]) + 1) < 1e-8 for r in rows)


def test_evans_bad_lambda(tmp_path, capsys):
    code, _ = _run(["evans", "--model", "constant_scalar", "--lambdas", "1,abc", "--out", str(tmp_path)], capsys)
    assert code == 1


def test_verdict(tmp_path, capsys):
    code, rep = _run(["verdict", "--model", "burgers_outflow", "--R", "10", "--out", str(tmp_path)], capsys)
    assert code == 0 and rep["verdict"] == "stable_evans" and rep["winding"] == 0


def test_resolvent(tmp_path, capsys):
    code, rep = _run(["resolvent", "--model", "burgers_outflow", "--lam", "1", "--y", "2", "--x-max", "6",
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    assert rep["residuals"]


def test_green(tmp_path, capsys):
    code, rep = _run(["green", "--model", "constant_scalar", "--y", "2", "--t", "1", "--x-max", "8",
                      "--out", str(tmp_path)], capsys)
    assert code == 0


def test_simulate(tmp_path, capsys):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"model": "burgers_outflow", "T": 2.0, "n_out": 6,
                              "perturbation": {"E0": 0.01, "g": "gaussian", "h": "ramp"},
                              "grid": {"dx": 0.1, "X_dom": 20.0}}))
    code, rep = _run(["simulate", "--scenario", str(sc), "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "error" in rep["lp_rates"]
    for name in ("snapshots.csv", "norms.csv", "zeta.csv"):
        assert (tmp_path / name).exists()


def test_simulate_missing_scenario(tmp_path, capsys):
    assert _run(["simulate", "--out", str(tmp_path)], capsys)[0] == 1
    assert _run(["simulate", "--scenario", str(tmp_path / "none.json"), "--out", str(tmp_path)], capsys)[0] == 1


def test_scenario_defaults():
    sc = Scenario.from_dict({"model": "burgers_outflow"})
    assert sc.T == 200.0 and sc.E0 == 0.01
    t = sc.times()
    assert t[0] == 0.0 and t[-1] == pytest.approx(200.0) and np.all(np.diff(t) > 0)


def test_data_classes_respect_envelopes():
    x = np.linspace(0, 100, 201)
    t = np.linspace(0, 100, 201)
    for kind in ("gaussian", "algebraic"):
        g = make_g(kind, 0.01, 1)
        # the constant depends on the bump centre: (1 + 3)^{3/2} = 8 for the default
        assert np.all(np.abs(g(x)[:, 0]) <= 20 * 0.01 * (1 + x) ** -1.5)
    for kind in ("algebraic", "ramp"):
        h = make_h(kind, 0.01, 1)
        assert np.all(np.abs(h(t)[:, 0]) <= 0.01 * (1 + t) ** -1.5 + 1e-15)
    assert make_g("zero", 0.01, 1) is None and make_h(None, 0.01, 1) is None
    with pytest.raises(ValueError):
        make_g("square", 0.01, 1)
