import csv
import json
import subprocess
import sys

import pytest

from savic.cli import main
from savic.engine import CSV_HEADER

SMALL_SAVIC = {
    "problem": {"type": "quadratic", "regime": "heterogeneous", "M": 3, "d": 4, "n_samples": 5,
                "mu": 1.0, "L": 4.0, "seed": 1},
    "algorithm": {"name": "savic", "gamma": 0.02, "T": 60, "H": 4,
                  "precond": {"rule": "square", "alpha": 0.5, "gamma_cap": 20.0, "beta_schedule": "adam",
                              "beta": 0.99, "strict_admissible": True}},
    "seed": 0,
}

SMALL_FEDADAGRAD = {
    "problem": {"type": "quadratic", "regime": "heterogeneous", "M": 2, "d": 2, "mu": 0.5, "L": 1.0,
                "n_samples": 1, "spread": 0.0, "shift": 0.5, "opt_radius": 1.0, "seed": 0},
    "algorithm": {"name": "fedadagrad", "T": 3000, "eta": 16.0, "tau": 0.1, "v_init": 0.01, "G": 2.0,
                  "batch_size": None},
    "tuning": "by_theory",
}


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_csv_and_summary(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SAVIC)
    assert main(["run", cfg, "--out", str(tmp_path / "out")]) == 0
    rows = read_csv(tmp_path / "out" / "run.csv")
    assert tuple(rows[0]) == CSV_HEADER and len(rows) == 62
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    eff = summary["effective"]
    for key in ("gamma", "beta_floor", "H", "alpha", "gamma_cap"):
        assert key in eff
    assert summary["observed_max_grad_entry"] > 0


def test_run_twice_is_byte_identical(tmp_path):
    doc = json.loads(json.dumps(SMALL_SAVIC))
    doc["algorithm"]["parallel"] = True
    cfg = write_cfg(tmp_path, doc)
    assert main(["run", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("run.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SAVIC)
    main(["run", cfg, "--out", str(tmp_path / "a")])
    main(["run", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a" / "run.csv").read_bytes() != (tmp_path / "b" / "run.csv").read_bytes()


def test_ensemble_of_twenty(tmp_path):
    doc = json.loads(json.dumps(SMALL_SAVIC))
    doc["ensemble"] = 20
    doc["algorithm"]["T"] = 20
    cfg = write_cfg(tmp_path, doc)
    out = tmp_path / "ens"
    assert main(["run", cfg, "--out", str(out), "--jobs", "4"]) == 0
    csvs = sorted(out.glob("seed_*/run.csv"))
    assert len(csvs) == 20
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["members"] == 20
    assert "final_dist_sq_mean" in agg and "final_dist_sq_std" in agg


def test_bounds_column(tmp_path):
    doc = {
        "problem": {"type": "quadratic", "regime": "identical", "M": 2, "d": 3, "mu": 1.0, "L": 4.0, "noise": 0.5},
        "algorithm": {"name": "savic", "H": 2},
        "tuning": "by_theory",
    }
    cfg = write_cfg(tmp_path, doc)
    assert main(["run", cfg, "--out", str(tmp_path / "o"), "--bounds"]) == 0
    rows = read_csv(tmp_path / "o" / "run.csv")
    assert rows[0][-1] == "bound_shape"
    assert all(float(r[-1]) > 0 for r in rows[1:])


def test_malformed_json_exits_one(tmp_path, caplog):
    p = tmp_path / "bad.json"
    p.write_text('{"problem": {"M": 2,}')
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "malformed JSON" in caplog.text


def test_unknown_key_named(tmp_path, caplog):
    doc = json.loads(json.dumps(SMALL_SAVIC))
    doc["algorithm"]["precond"]["gama_cap"] = 3.0
    assert main(["run", write_cfg(tmp_path, doc), "--out", str(tmp_path / "o")]) == 1
    assert "algorithm.precond.gama_cap" in caplog.text


def test_wrong_type_named(tmp_path, caplog):
    doc = json.loads(json.dumps(SMALL_SAVIC))
    doc["problem"]["M"] = "four"
    assert main(["run", write_cfg(tmp_path, doc), "--out", str(tmp_path / "o")]) == 1
    assert "problem.M" in caplog.text


def test_divergence_exits_two(tmp_path):
    doc = json.loads(json.dumps(SMALL_SAVIC))
    doc["algorithm"].update(gamma=50.0, precond={"rule": "identity"})
    assert main(["run", write_cfg(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["status"].startswith("divergence at t=")


def test_sweep_gamma(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SAVIC)
    out = tmp_path / "sw"
    assert main(["sweep", cfg, "--axis", "gamma", "--values", "0.02,0.01", "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert rows[0] == ["value", "iterations_to_epsilon", "final_f_gap", "final_dist_sq"]
    assert [r[0] for r in rows[1:]] == ["0.02", "0.01"]
    assert (out / "gamma=0.02" / "run.csv").exists() and (out / "gamma=0.01" / "run.csv").exists()


def test_sweep_tau_fedadagrad(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_FEDADAGRAD)
    out = tmp_path / "tau"
    assert main(["sweep", cfg, "--axis", "tau", "--values", "0.1,0.01", "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")[1:]
    s1 = json.loads((out / "tau=0.1" / "summary.json").read_text())
    s2 = json.loads((out / "tau=0.01" / "summary.json").read_text())
    # local step re-derived from theory at every tau
    assert s2["effective"]["eta_l"] < s1["effective"]["eta_l"]
    assert float(rows[0][1]) <= float(rows[1][1])


def test_sweep_skew_logreg(tmp_path):
    doc = {
        "problem": {"type": "logreg", "regime": "heterogeneous", "M": 10, "d": 3, "skew": 0.5,
                    "rows_per_worker": 20, "lam": 0.1},
        "algorithm": {"name": "savic", "gamma": 0.1, "T": 40, "H": 4},
    }
    out = tmp_path / "skew"
    assert main(["sweep", write_cfg(tmp_path, doc), "--axis", "skew", "--values", "0.3,0.5,0.7", "--out", str(out)]) == 0
    assert len(read_csv(out / "sweep.csv")) == 4
    assert all((out / f"skew={v}" / "run.csv").exists() for v in (0.3, 0.5, 0.7))


def test_sweep_empty_values_exits_one(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SAVIC)
    assert main(["sweep", cfg, "--axis", "gamma", "--values", "", "--out", str(tmp_path / "o")]) == 1


def test_sweep_axis_must_fit_algorithm(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SAVIC)
    assert main(["sweep", cfg, "--axis", "tau", "--values", "0.1", "--out", str(tmp_path / "o")]) == 1
    assert main(["sweep", cfg, "--axis", "bogus", "--values", "0.1", "--out", str(tmp_path / "o")]) == 1


def test_check_identity_passes(tmp_path, capsys):
    doc = json.loads(json.dumps(SMALL_SAVIC))
    doc["algorithm"]["precond"] = {"rule": "identity", "alpha": 0.5, "gamma_cap": 2.0}
    assert main(["check", write_cfg(tmp_path, doc)]) == 0
    assert "0 violation(s)" in capsys.readouterr().out


def test_check_theory_driven_passes(tmp_path):
    doc = {
        "problem": {"type": "quadratic", "regime": "identical", "M": 3, "d": 5, "mu": 1.0, "L": 5.0, "noise": 0.5},
        "algorithm": {"name": "savic", "H": 3,
                      "precond": {"rule": "square", "alpha": 1.0, "gamma_cap": 30.0,
                                  "beta_schedule": "theory_driven", "estimator": "grad_square",
                                  "strict_admissible": True}},
        "tuning": "by_theory",
    }
    assert main(["check", write_cfg(tmp_path, doc)]) == 0


def test_check_reports_sandwich_violation(tmp_path, capsys):
    doc = {
        "problem": {"type": "quadratic", "regime": "identical", "M": 2, "d": 4, "mu": 1.0, "L": 5.0, "noise": 20.0},
        "algorithm": {"name": "savic", "gamma": 0.001, "T": 30, "H": 2,
                      "precond": {"rule": "square", "alpha": 0.01, "gamma_cap": 0.05,
                                  "beta_schedule": "constant", "beta": 0.5, "strict_admissible": False}},
    }
    assert main(["check", write_cfg(tmp_path, doc)]) == 3
    out = capsys.readouterr().out
    assert "sandwich violated" in out and "row " in out


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SAVIC)
    proc = subprocess.run([sys.executable, "-m", "savic", "run", cfg, "--out", str(tmp_path / "m")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "run.csv").exists()


@pytest.mark.parametrize("name", ["identical_quadratic.json", "fedadagrad_tau.json", "skew_logreg.json"])
def test_shipped_configs_parse(name):
    from pathlib import Path

    from savic.config import load_config

    path = Path(__file__).resolve().parent.parent / "configs" / name
    cfg = load_config(path)
    assert cfg.algorithm.name in ("savic", "fedadagrad")
