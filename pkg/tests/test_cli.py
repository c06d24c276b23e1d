import csv
import json

import numpy as np
import pytest

from exhaustible_mfg.cli import main
from exhaustible_mfg.fokker_planck import fourier_mass
from exhaustible_mfg.model import InitialMeasure, ModelParams

SMALL = {"sigma": 0.5, "r": 0.1, "kappa": 1.0, "L": 1.0, "T": 1.0, "grid": {"nx": 50, "nt": 100},
         "terminal": {"kind": "zero"}, "initial": {"kind": "uniform", "a": 0.5, "b": 1.0}}


def write_model(tmp_path, **changes):
    cfg = json.loads(json.dumps(SMALL))
    cfg.update(changes)
    path = tmp_path / "model.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_solve_writes_artifacts(tmp_path):
    out = tmp_path / "solve"
    assert main(["solve", "--out", str(out)]) == 0
    for name in ("u", "m", "q", "p"):
        rows = read_csv(out / f"{name}.csv")
        assert rows[0] == ["t", "x", "value"] and len(rows) == 1 + 401 * 201
    market = read_csv(out / "market.csv")
    assert market[0] == ["t", "eta", "qbar", "pbar", "ell"] and len(market) == 402
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["converged"] is True and len(diag["input_hash"]) == 64
    assert diag["config"]["model"]["sigma"] == 0.5
    assert diag["picard_history"][-1] <= 1e-6


def test_forced_non_convergence(tmp_path):
    out = tmp_path / "nc"
    assert main(["solve", "--model", write_model(tmp_path), "--max-outer", "1",
                 "--out", str(out)]) == 2
    assert json.loads((out / "diagnostics.json").read_text())["converged"] is False
    assert (out / "u.csv").exists()


def test_missing_model_file(tmp_path, capsys):
    assert main(["solve", "--model", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    assert "nope.json" in capsys.readouterr().err


def test_invalid_model_is_usage_error(tmp_path):
    path = write_model(tmp_path, terminal={"kind": "poly", "coeffs": [0, 1]})
    assert main(["solve", "--model", path, "--out", str(tmp_path / "x")]) == 1


def test_bad_arguments_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--nx", "many"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_simulate_repeatable(tmp_path):
    model = write_model(tmp_path)
    for tag in ("a", "b"):
        assert main(["simulate", "--model", model, "--particles", "1000", "--seed", "7",
                     "--out", str(tmp_path / tag)]) == 0
    for name in ("empirical.csv", "exitrate.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ja = json.loads((tmp_path / "a" / "simulate.json").read_text())
    jb = json.loads((tmp_path / "b" / "simulate.json").read_text())
    assert ja["input_hash"] == jb["input_hash"]


def test_simulate_w1_decreases_in_n(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--model", write_model(tmp_path), "--particles", "100", "1000",
                 "10000", "--seed", "7", "--out", str(out)]) == 0
    rows = read_csv(out / "empirical.csv")
    assert rows[0] == ["N", "t", "alive_fraction", "w1_to_m", "weak_error"]
    w1 = {}
    for N, t, _, w, _ in rows[1:]:
        w1.setdefault(float(t), {})[int(N)] = float(w)
    final = w1[max(w1)]
    assert final[100] > final[1000] > final[10000]
    mean = {N: np.mean([w1[t][N] for t in w1 if t > 0]) for N in (100, 1000, 10000)}
    assert mean[100] > mean[1000] > mean[10000]
    exits = read_csv(out / "exitrate.csv")
    assert exits[0] == ["N", "t", "exit_rate"] and len(exits) == 1 + 3 * 101


def test_simulate_zero_drift_matches_fourier(tmp_path):
    out = tmp_path / "zero"
    assert main(["simulate", "--model", write_model(tmp_path), "--drift", "zero",
                 "--particles", "20000", "--seed", "3", "--out", str(out)]) == 0
    res = json.loads((out / "simulate.json").read_text())
    eta = fourier_mass(ModelParams(0.5, 0.1, 1, 1, 1), InitialMeasure.uniform(0.5, 1.0), 1.0)
    assert res["fourier_eta_T"] == pytest.approx(eta)
    r = res["results"][0]
    assert abs(r["alive_fraction_T"] - eta) <= 3 * r["stderr"]


def test_verify_decoupled_limit(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "--model", write_model(tmp_path, kappa=1e-8), "--skip-gap",
                 "--particles", "4000", "--out", str(out)]) == 0
    checks = {c["name"]: c for c in json.loads((out / "verify.json").read_text())["checks"]}
    assert checks["decoupled_limit"]["passed"] and not checks["decoupled_limit"]["skipped"]


def test_verify_coarse_grid_reports_instead_of_raising(tmp_path):
    out = tmp_path / "coarse"
    assert main(["verify", "--model", write_model(tmp_path), "--nx", "16", "--nt", "32",
                 "--skip-gap", "--particles", "4000", "--out", str(out)]) == 0
    payload = json.loads((out / "verify.json").read_text())
    vi = next(c for c in payload["checks"] if c["name"] == "verification_identity")
    assert isinstance(vi["passed"], bool) and vi["tolerance"] > 0
    assert payload["all_passed"] == all(c["passed"] for c in payload["checks"])
    assert payload["config"]["model"]["grid"] == {"nx": 16, "nt": 32}


def test_gap_command(tmp_path, capsys):
    out = tmp_path / "gap"
    assert main(["gap", "--model", write_model(tmp_path), "--particles", "5", "50",
                 "--rounds", "500", "--out", str(out), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["N"] == [5, 50] and len(summary["gap"]) == 2
    rows = read_csv(out / "nash_gap.csv")
    assert len(rows) == 1 + 2 * 11
    assert json.loads((out / "nash_gap.json").read_text())["report"]["n_rounds"] == [100, 10]
