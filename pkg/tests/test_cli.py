import csv

import numpy as np
import pytest

from recl.cli import EXIT_INPUT, EXIT_OK, load_config, main, parse_args
from recl.cohort import serialize_cohort
from recl.sim import simulate_cohort


@pytest.fixture
def data_file(tmp_path):
    cohort = simulate_cohort(1, 150, np.random.default_rng(21))
    path = tmp_path / "cohort.csv"
    path.write_text(serialize_cohort(cohort))
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_fit_then_assign_reproduces_training_labels(tmp_path, data_file):
    out = tmp_path / "fit"
    code = main(["fit", "--data", str(data_file), "--method", "AIPW", "--t", "3",
                 "--ps-formula", "x1,x2", "--out", str(out)])
    assert code == EXIT_OK
    for name in ("regime.json", "regime.txt", "costs.csv", "train_assignments.csv", "propensity.csv",
                 "smr_coefficients.csv", "smr_baseline.csv", "manifest.txt"):
        assert (out / name).exists(), name

    # covariate file: one row per subject
    rows = read_rows(data_file)
    seen, cov = set(), tmp_path / "cov.csv"
    with open(cov, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x1", "x2", "x3"])
        for r in rows:
            if r["id"] not in seen:
                seen.add(r["id"])
                w.writerow([r["id"], r["x1"], r["x2"], r["x3"]])
    assigned = tmp_path / "assigned.csv"
    assert main(["assign", "--regime", str(out / "regime.json"), "--covariates-file", str(cov),
                 "--out", str(assigned)]) == EXIT_OK
    assert assigned.read_text() == (out / "train_assignments.csv").read_text()


def test_ipw_without_propensity_is_input_error(tmp_path, data_file, capsys):
    code = main(["fit", "--data", str(data_file), "--method", "IPW", "--t", "3", "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT
    assert "propensity required" in capsys.readouterr().err


def test_missing_data_file_is_input_error(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "nope.csv"), "--t", "1", "--ps-formula", "all",
                 "--out", str(tmp_path / "o")]) == EXIT_INPUT


def test_simulate_requires_seed(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path)]) == EXIT_INPUT
    assert "--seed" in capsys.readouterr().err


def test_simulate_is_deterministic(tmp_path):
    argv = ["simulate", "--scenario", "1", "--n", "60", "--reps", "2", "--seed", "5",
            "--methods", "ReCL-IPW,Random,Optimal", "--test-size", "200"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(argv + ["--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("report.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = (tmp_path / "a" / "manifest.txt").read_text()
    assert "command = simulate" in manifest and "seed = 5" in manifest


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nn = 77\nseed = 3\nt = 1.5, 2.5\nmethods = Optimal\n")
    assert load_config(cfg)["n"] == "77"
    args = parse_args(["simulate", "--config", str(cfg), "--out", "x"])
    assert args.n == 77 and args.seed == 3 and args.t == [1.5, 2.5]
    args = parse_args(["simulate", "--config", str(cfg), "--n", "20", "--t", "3", "--out", "x"])
    assert args.n == 20 and args.t == [3.0]
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_key = 1\n")
    assert main(["simulate", "--config", str(bad), "--out", "x"]) == EXIT_INPUT


def test_evaluate_writes_report(tmp_path, data_file):
    out = tmp_path / "fit"
    assert main(["fit", "--data", str(data_file), "--method", "IPW", "--t", "3",
                 "--ps-formula", "x1,x2", "--out", str(out)]) == EXIT_OK
    ev = tmp_path / "eval"
    code = main(["evaluate", "--data", str(data_file), "--regime", f"ipw={out / 'regime.json'}",
                 "--ps-formula", "x1,x2", "--t", "3", "--random-seed", "1", "--out", str(ev)])
    assert code == EXIT_OK
    text = (ev / "value_report.csv").read_text()
    assert "Observed" in text and "ipw" in text and "Random" in text
    assert (ev / "crf_ipw_t3_concordant.csv").exists()
    assert (ev / "concordance_ipw_t3.csv").exists()


def test_verify_command(capsys):
    assert main(["verify", "--instances", "10", "--seed", "2"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
