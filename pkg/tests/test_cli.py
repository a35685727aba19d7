import json

import pytest

import cli
from config import Config
from simulation.models import gen_gaussian, model1

EXPLICIT = ["--h", "0.6", "--kappa", "25"]
GRID = ["--a-list", "0.75", "0.875", "1.0", "--c-list", "20", "25", "30"]


@pytest.fixture
def data_file(csv_file):
    sample = gen_gaussian(model1(), 60, seed=3)
    return csv_file(sample.data.tolist(), header=["y1", "y2", "y3"])


def run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_estimate_report(capsys, data_file):
    code, out, _ = run(capsys, "estimate", data_file, *EXPLICIT, "--seed", "5")
    assert code == 0
    report = json.loads(out)
    assert report["command"] == "estimate"
    assert report["config"]["seed"] == 5
    assert report["config"]["h"] == 0.6
    assert report["sample"] == {"n": 60, "p": 3}
    assert report["variance"]["sigma_hat_sq"] >= 0.0
    assert "intervals" not in report


def test_repeated_runs_give_identical_reports(capsys, data_file):
    first = run(capsys, "ci", data_file, *EXPLICIT, "--alpha", "0.1")[1]
    second = run(capsys, "ci", data_file, *EXPLICIT, "--alpha", "0.1")[1]
    assert first == second


def test_input_file_is_not_modified(capsys, data_file):
    before = open(data_file, "rb").read()
    assert run(capsys, "estimate", data_file, *EXPLICIT)[0] == 0
    assert open(data_file, "rb").read() == before


def test_table_format_and_output_file(capsys, data_file, tmp_path):
    target = tmp_path / "report.txt"
    code, out, _ = run(capsys, "estimate", data_file, *EXPLICIT, "--format", "table", "--output", str(target))
    assert code == 0
    assert out == ""
    text = target.read_text()
    assert "M2_hat" in text and "V_hat" in text


def test_zero_row_is_a_data_error(capsys, csv_file):
    rows = [[1.0, 0.5], [0.2, -1.0], [2.0, 1.0], [-0.3, 0.7], [0.0, 0.0], [1.1, 0.4]]
    code, out, err = run(capsys, "estimate", csv_file(rows), *EXPLICIT)
    assert code == 3
    assert out == ""
    assert "row 5" in err


def test_two_observations_estimate_without_standard_error(capsys, csv_file):
    path = csv_file([[1.0, 0.0, 0.0], [0.0, 1.2, 0.0]])
    code, out, _ = run(capsys, "estimate", path, "--h", "1", "--kappa", "5")
    assert code == 0
    report = json.loads(out)
    assert report["sample"] == {"n": 2, "p": 3}
    assert report["standard_error"] is None
    assert report["variance"]["sigma_hat_sq"] is None
    assert report["variance"]["s_hat_sq"] >= 0.0


def test_two_observations_have_no_jackknife_interval(capsys, csv_file):
    path = csv_file([[1.0, 0.0, 0.0], [0.0, 1.2, 0.0]])
    code, out, err = run(capsys, "ci", path, "--h", "1", "--kappa", "5")
    assert code == 3
    assert out == ""
    assert "at least 3 observations" in err


def test_bad_cells_and_dimensions(capsys, csv_file):
    rows = [[1.0, 2.0, 3.0] for _ in range(8)]
    rows[6][1] = "nan"
    code, _, err = run(capsys, "estimate", csv_file(rows, name="nan.csv"), *EXPLICIT)
    assert code == 3
    assert "row 7, column 2" in err

    code, _, _ = run(capsys, "estimate", csv_file([[1.0], [2.0], [3.0]], name="one.csv"), *EXPLICIT)
    assert code == 3

    code, _, _ = run(capsys, "estimate", "does-not-exist.csv", *EXPLICIT)
    assert code == 3


@pytest.mark.parametrize("extra", [
    ["--h", "0.6", "--kappa", "25", "--preset", "model1-p3"],
    ["--h", "0.6"],
    [],
    EXPLICIT + ["--alpha", "1.5"],
    EXPLICIT + ["--kappa", "-1"],
    EXPLICIT + ["--kernel", "gaussian"],
    EXPLICIT + ["--bias-reduce", "--bias-a", "1.2"],
])
def test_configuration_errors(capsys, data_file, extra):
    code, out, err = run(capsys, "estimate", data_file, *extra)
    assert code == 2
    assert out == ""
    assert err.startswith("error:")


def test_test_command_validation(capsys, data_file):
    assert run(capsys, "test", data_file, *EXPLICIT, "--method", "jackknife")[0] == 2
    assert run(capsys, "test", data_file, *EXPLICIT, "--delta=-0.5")[0] == 2
    assert run(capsys, "test", data_file, *EXPLICIT, "--delta", "1", "--method", "exact")[0] == 2
    assert run(capsys, "test", data_file, *EXPLICIT, "--delta", "abc")[0] == 2


def test_threshold_and_equivalence_test_agree(capsys, data_file):
    code, out, _ = run(capsys, "threshold", data_file, *EXPLICIT, "--method", "jackknife")
    assert code == 0
    threshold = json.loads(out)["thresholds"]["jackknife"]
    assert threshold >= 0.0

    code, out, _ = run(capsys, "test", data_file, *EXPLICIT, "--hypothesis", "equivalence",
                       "--method", "jackknife", "--delta", repr(threshold))
    assert code == 0
    assert json.loads(out)["test"]["decision"] == "reject"

    code, out, _ = run(capsys, "test", data_file, *EXPLICIT, "--hypothesis", "equivalence",
                       "--method", "jackknife", "--delta", repr(threshold + 1.0))
    assert json.loads(out)["test"]["decision"] == "reject"


def test_exact_test(capsys, data_file):
    code, out, _ = run(capsys, "test", data_file, *EXPLICIT, "--hypothesis", "exact", "--method", "exact")
    assert code == 0
    test = json.loads(out)["test"]
    assert test["method"] == "exact"
    assert 0.0 <= test["p_value"] <= 1.0


def test_quantile_table_is_reproducible(capsys, tmp_path):
    first, second = tmp_path / "a.txt", tmp_path / "b.txt"
    for target in (first, second):
        code, out, _ = run(capsys, "quantiles", "--paths", "3000", "--steps", "50", "--seed", "9",
                           "--output", str(target))
        assert code == 0
        assert json.loads(out)["metadata"]["paths"] == 3000
    assert first.read_bytes() == second.read_bytes()


def test_pivotal_interval_uses_the_given_table(capsys, data_file, tmp_path):
    table = tmp_path / "w.txt"
    assert run(capsys, "quantiles", "--paths", "3000", "--steps", "50", "--output", str(table))[0] == 0
    code, out, _ = run(capsys, "ci", data_file, *EXPLICIT, "--method", "jackknife", "pivotal",
                       "--quantile-table", str(table))
    assert code == 0
    report = json.loads(out)
    assert [ci["method"] for ci in report["intervals"]] == ["jackknife", "pivotal"]
    assert report["quantile_table"]["paths"] == 3000


def test_diagnose_needs_a_grid(capsys, data_file):
    assert run(capsys, "diagnose", data_file, *EXPLICIT)[0] == 2
    code, out, _ = run(capsys, "diagnose", data_file, *GRID)
    assert code == 0
    report = json.loads(out)
    assert len(report["curves"]["h"]) == 3
    assert len(report["estimates"]) == 3


def test_simulate_small_coverage_study(capsys):
    code, out, _ = run(capsys, "simulate", "--experiment", "coverage", "--model", "model1", "--n", "25",
                       "--reps", "100", *GRID, "--true-msq", "0.95",
                       "--method", "jackknife")
    assert code == 0
    report = json.loads(out)
    assert report["command"] == "simulate"
    assert report["rows"]


def test_simulate_bias_reduction_is_default(capsys):
    argv = ["simulate", "--experiment", "coverage", "--model", "model1", "--n", "25", "--reps", "100",
            *GRID, "--true-msq", "0.95", "--method", "jackknife"]
    code, out, _ = run(capsys, *argv)
    assert code == 0
    assert json.loads(out)["metadata"]["design"]["bias_reduction_a"] == Config.BIAS_REDUCTION_A
    code, out, _ = run(capsys, *argv, "--plain-estimator")
    assert code == 0
    report = json.loads(out)
    assert report["config"]["plain"] is True
    assert report["metadata"]["design"]["bias_reduction_a"] is None


def test_simulate_rejects_too_few_replications(capsys):
    code, _, _ = run(capsys, "simulate", "--model", "model1", "--reps", "10", "--true-msq", "0.95",
                     *GRID)
    assert code == 2


def test_history(capsys, data_file, tmp_path, monkeypatch):
    monkeypatch.setattr(Config, "HISTORY_DB", "")
    assert run(capsys, "history")[0] == 2

    monkeypatch.setattr(Config, "HISTORY_DB", str(tmp_path / "runs.db"))
    assert run(capsys, "estimate", data_file, *EXPLICIT)[0] == 0
    assert run(capsys, "estimate", data_file, "--h", "0.6")[0] == 2
    code, out, _ = run(capsys, "history", "--limit", "5")
    assert code == 0
    report = json.loads(out)
    assert report["stats"]["total_runs"] == 2
    assert report["stats"]["failed_runs"] == 1
    assert report["runs"][0]["exit_code"] == 2
