import csv
import io
import json
import math

import numpy as np
import pytest

from sirlab import cli, experiments
from sirlab.errors import InvalidInput, ResourceLimit
from sirlab.experiments import CSV_HEADER, ExperimentConfig, ResultRow, mean_se, rows_to_csv, run
from sirlab.slicing import Dataset, write_dataset_csv


def _cfg(**kw):
    return ExperimentConfig.from_mapping(kw)


def _csv_rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_config_defaults_and_grids():
    cfg = _cfg(experiment="d-lambda")
    assert cfg.model == "lower-bound" and cfg.d == [10] and cfg.theta == [0.03, 0.04, 0.05, 0.06, 0.07]
    cfg = _cfg(experiment="loss-table", n=2000, H=[5, 10])
    assert cfg.n == [2000] and cfg.H == [5, 10] and cfg.reps == 100


@pytest.mark.parametrize(
    "bad",
    [
        {"experiment": "loss-table", "colour": 1},
        {"experiment": "nope"},
        {"model": "m1"},
        {"experiment": "loss-table", "reps": 0},
        {"experiment": "loss-table", "n": []},
        {"experiment": "loss-table", "model": "m9"},
        {"experiment": "loss-table", "threads": 0},
        {"experiment": "d-lambda", "theta": [-0.1]},
    ],
)
def test_config_rejects(bad):
    with pytest.raises(InvalidInput):
        ExperimentConfig.from_mapping(bad)


def test_mean_se():
    assert mean_se([2.0]) == (2.0, 0.0)
    m, se = mean_se([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5 and se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)


def test_fit_line():
    slope, intercept, r2 = experiments.fit_line([1, 2, 3], [3, 5, 7])
    assert (slope, intercept, r2) == pytest.approx((2, 1, 1))


def test_csv_format():
    row = ResultRow("loss-table", "m1", "general_loss", 1 / 3, 0.0, 5, n=1000, p=15, d=5, H=10)
    text = rows_to_csv([row])
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[1] == "loss-table,m1,1000,15,5,10,,5,general_loss,0.333333333,0"


def test_reps_one_bit_identical():
    cfg = _cfg(experiment="loss-table", n=[500], H=[5], reps=1, seed=3)
    assert rows_to_csv(run(cfg)) == rows_to_csv(run(cfg))


@pytest.mark.parametrize(
    "kw",
    [
        dict(experiment="loss-table", model="m2", n=[1000], H=[5, 20], reps=16),
        dict(experiment="eigen-table", n=[5000], H=[10], reps=8),
        dict(experiment="gsnr-decay", n=[200], d=[1, 2], reps=8),
        dict(experiment="d-lambda", n=[20000], p=[12], d=[2, 3], H=[20], theta=[0.05, 0.07], reps=8, samples=10**5),
        dict(experiment="sparse-demo", n=[2000], p=[10], s=3, reps=8),
    ],
)
def test_threads_do_not_change_output(kw):
    a = rows_to_csv(run(_cfg(**kw, threads=1)))
    b = rows_to_csv(run(_cfg(**kw, threads=8)))
    assert a == b


def test_se_shrinks_with_reps():
    base = dict(experiment="loss-table", n=[1000], H=[10], seed=5)
    se1 = run(_cfg(**base, reps=50))[0].stderr
    se4 = run(_cfg(**base, reps=200))[0].stderr
    assert abs(se1 / se4 / 2 - 1) <= 0.3


def test_memory_budget():
    with pytest.raises(ResourceLimit):
        run(_cfg(experiment="loss-table", n=[10**8], reps=1))
    with pytest.raises(ResourceLimit):
        run(_cfg(experiment="gsnr-decay", n=[500], gp_cap=100, reps=1))


def test_model_checks():
    with pytest.raises(InvalidInput):
        run(_cfg(experiment="loss-table", model="gp", reps=1))
    with pytest.raises(InvalidInput):
        run(_cfg(experiment="gsnr-decay", model="m1", reps=1))


def test_eigen_rows():
    rows = run(_cfg(experiment="eigen-table", n=[5000], H=[10], reps=2))
    assert [r.statistic for r in rows] == [f"log_eig_{i}" for i in range(1, 6)] + ["log_eig_gap"]
    assert rows[-1].value == pytest.approx(rows[4].value - rows[0].value)


def test_d_lambda_theta_zero_runs():
    rows = run(_cfg(experiment="d-lambda", n=[5000], p=[10], d=[2], H=[10], theta=[0.0], reps=4, samples=10**5))
    rho = [r for r in rows if r.statistic == "rho"][0]
    loss = [r for r in rows if r.statistic == "mean_loss"][0]
    assert rho.value == 0.0 and 0 < loss.value <= 4


def test_d_lambda_summary_rows():
    rows = run(_cfg(experiment="d-lambda", n=[20000], p=[12], d=[2, 3], H=[20], theta=[0.05, 0.07], reps=2, samples=10**5))
    stats = {r.statistic for r in rows}
    assert {"loss_vs_d_slope", "loss_vs_d_r2", "log_loss_vs_log_theta_slope", "log_loss_vs_log_theta_r2"} <= stats


def test_sparse_demo_skips_aggregation_past_cap():
    rows = run(_cfg(experiment="sparse-demo", n=[600], p=[50], s=5, reps=2))
    stats = {r.statistic for r in rows}
    assert stats == {"oracle_loss", "sir_loss"}


def test_bound_check_report(monkeypatch):
    fake = [experiments.CheckResult("a", True, 1.0), experiments.CheckResult("b", False, 2.0, d=3)]
    monkeypatch.setattr(experiments, "bound_checks", lambda samples, seed: fake)
    rows = run(_cfg(experiment="check-bounds"))
    assert [r.statistic for r in rows] == ["a", "pass:a", "b", "pass:b"]
    assert not experiments.all_checks_passed(rows)


# -- command line ----------------------------------------------------------------

def test_cli_config_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "loss-table", "n": [500], "H": [5], "reps": 3, "seed": 1}))
    out = tmp_path / "o.csv"
    assert cli.main(["loss-table", "--config", str(cfg), "--H", "5,10", "--seed", "2", "--out", str(out)]) == 0
    rows = _csv_rows(out.read_text())
    assert [r["H"] for r in rows] == ["5", "10"]
    assert all(r["rep_count"] == "3" for r in rows)
    expected = rows_to_csv(run(_cfg(experiment="loss-table", n=[500], H=[5, 10], reps=3, seed=2)))
    assert out.read_text() == expected


def test_cli_stdout(capsys):
    assert cli.main(["loss-table", "--n", "300", "--H", "5", "--reps", "2"]) == 0
    assert capsys.readouterr().out.startswith(",".join(CSV_HEADER))


def test_cli_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "loss-table", "bogus": 1}))
    assert cli.main(["loss-table", "--config", str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["loss-table", "--reps", "0"],
        ["loss-table", "--not-a-flag", "1"],
        ["loss-table", "--n", "ten"],
        ["loss-table", "--config", "/nonexistent/cfg.json"],
    ],
)
def test_cli_input_errors(argv):
    with pytest.raises(SystemExit) as info:
        code = cli.main(argv)
        raise SystemExit(code)
    assert info.value.code == 1


def test_cli_config_for_other_experiment(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "eigen-table"}))
    assert cli.main(["loss-table", "--config", str(cfg)]) == 1
    cfg.write_text("[1, 2]")
    assert cli.main(["loss-table", "--config", str(cfg)]) == 1
    cfg.write_text("{not json")
    assert cli.main(["loss-table", "--config", str(cfg)]) == 1


def test_cli_resource_limit():
    assert cli.main(["loss-table", "--n", "100000000", "--reps", "1"]) == 2
    assert cli.main(["sparse-demo", "--n", "100000000", "--p", "20", "--reps", "1"]) in (1, 2)


def test_cli_bound_failure_exit(monkeypatch, capsys):
    monkeypatch.setattr(experiments, "bound_checks", lambda samples, seed: [experiments.CheckResult("x", False, 0.0)])
    assert cli.main(["check-bounds"]) == 3


def test_cli_fit_csv(tmp_path, capsys, gen):
    X = gen.standard_normal((500, 3))
    path = tmp_path / "d.csv"
    write_dataset_csv(Dataset(X, X[:, 1] + 0.01 * gen.standard_normal(500)), path)
    assert cli.main(["fit", str(path), "--d", "1", "--H", "10"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["p"] == 3 and abs(abs(out["basis"][1][0]) - 1) < 0.05
    path.write_text("x1,y\n1,2\nfoo,3\n")
    assert cli.main(["fit", str(path), "--d", "1"]) == 1
    assert "row 3, column x1" in capsys.readouterr().err
