import json

import pytest

from analysis import inference
from analysis.bandwidth import PRESETS, build_grid, select_bandwidth
from analysis.estimator import polar_decompose
from analysis.variance import jackknife
from config import Config
from errors import ConfigError
from simulation.experiments import (
    MSQ_LABEL,
    ExperimentDesign,
    ReplicationTask,
    config_hash,
    mc_standard_error,
    run_coverage_experiment,
    run_rejection_experiment,
    run_replication,
)
from simulation.models import ar1_model, derive_rng, generate, get_model, model1
from tools.kernels import RadialKernel

DESK_GRID = dict(a_list=(0.75, 0.875, 1.0), c_list=(20.0, 25.0, 30.0))


@pytest.fixture(scope="module")
def table():
    return inference.w_quantiles(levels=(0.025, 0.05, 0.5, 0.95, 0.975), paths=4000, steps=200, seed=5)


@pytest.fixture(scope="module")
def production_table():
    return inference.w_quantiles(levels=inference.DEFAULT_LEVELS, paths=1_000_000, steps=2000, seed=20240101,
                                 threads=8)


def test_mc_standard_error():
    assert mc_standard_error(0.5, 100) == pytest.approx(0.05)
    assert mc_standard_error(0.0, 100) == 0.0


def test_config_hash_is_stable():
    assert config_hash({"b": 1, "a": [1, 2]}) == config_hash({"a": [1, 2], "b": 1})
    assert len(config_hash({"a": 1})) == 16


def test_replication_intervals_match_the_interval_functions(table):
    design = ExperimentDesign(spec=model1(), levels=(0.95,), table=table, **DESK_GRID)
    outcome = run_replication(ReplicationTask(design, n=30, n_index=0, replication=4, seed=21))

    polar = polar_decompose(generate(model1(), 30, derive_rng(21, 0, 4)))
    grid = build_grid(30, 3, DESK_GRID["a_list"], DESK_GRID["c_list"])
    selection = select_bandwidth(polar, grid, RadialKernel.from_name(design.kernel), design.bias_reduction_a)
    var = jackknife(polar, selection.bandwidths, pairs=selection.pairs, bias_reduce=True)
    alpha = 1.0 - 0.95
    normal = inference.jackknife_ci(selection.estimate, var, alpha, design.jackknife_scale)
    pivotal = inference.pivotal_ci(selection.estimate, selection.vhats[selection.index], table, alpha)
    assert outcome["intervals"][("jackknife", 0.95)] == (normal.lower, normal.upper)
    assert outcome["intervals"][("pivotal", 0.95)] == (pivotal.lower, pivotal.upper)
    assert outcome["msq"] == selection.estimate.msq


def test_coverage_report(table):
    report = run_coverage_experiment(model1(), n_list=(25, 40), reps=100, levels=(0.95, 0.90),
                                     methods=("jackknife", "pivotal"), seed=3, table=table, true_msq=0.95,
                                     **DESK_GRID)
    assert report.kind == "coverage"
    assert len(report.rows) == 2 * 2 * 2
    for row in report.rows:
        assert 0.0 <= row["coverage"] <= 100.0
        assert row["avg_width"] > 0.0
        assert row["reps"] == 100
    assert report.metadata["true_msq"] == 0.95
    assert report.metadata["design"]["quantile_table"]["paths"] == 4000
    json.loads(report.to_json())
    assert "jackknife" in report.rate_table()


def test_wider_level_has_wider_intervals(table):
    report = run_coverage_experiment(model1(), n_list=(30,), reps=100, levels=(0.95, 0.90),
                                     methods=("jackknife",), seed=4, true_msq=0.95, **DESK_GRID)
    widths = {row["level"]: row["avg_width"] for row in report.rows}
    assert widths[0.95] > widths[0.90]


def test_reports_do_not_depend_on_workers(table):
    kwargs = dict(n_list=(25,), reps=100, methods=("jackknife", "pivotal"), seed=8, table=table,
                  true_msq=0.95, **DESK_GRID)
    serial = run_coverage_experiment(model1(), workers=1, **kwargs)
    parallel = run_coverage_experiment(model1(), workers=2, **kwargs)
    assert serial.rows == parallel.rows
    assert serial.metadata["config_hash"] == parallel.metadata["config_hash"]


def test_rejection_report(table):
    report = run_rejection_experiment(model1(), n_list=(30,), delta_list=(0.5, MSQ_LABEL, 5.0), reps=100,
                                      methods=("jackknife", "pivotal"), seed=6, table=table, true_msq=0.95,
                                      relevant=True, **DESK_GRID)
    assert len(report.rows) == 2 * 3 * 2
    labels = {row["delta_label"] for row in report.rows}
    assert labels == {"0.5", MSQ_LABEL, "5"}
    rates = {(r["hypothesis"], r["delta_label"], r["method"]): r["rate"] for r in report.rows}
    # equivalence to a delta far above M² is certified more often than to one far below
    assert rates[("equivalence", "5", "jackknife")] > rates[("equivalence", "0.5", "jackknife")]
    assert "relevant" in report.rate_table()


def test_replications_default_to_the_bias_reduced_estimator():
    kwargs = dict(n_list=(30,), reps=100, methods=("jackknife",), seed=12, true_msq=0.95, **DESK_GRID)
    reduced = run_coverage_experiment(model1(), **kwargs)
    plain = run_coverage_experiment(model1(), bias_reduction_a=None, **kwargs)
    assert reduced.metadata["design"]["bias_reduction_a"] == Config.BIAS_REDUCTION_A
    assert plain.metadata["design"]["bias_reduction_a"] is None
    assert reduced.rows != plain.rows
    assert reduced.metadata["config_hash"] != plain.metadata["config_hash"]


def test_planar_null_model_uses_its_own_grid():
    report = run_coverage_experiment(get_model("spherical-p2"), n_list=(25,), reps=100, levels=(0.95,),
                                     methods=("jackknife",), seed=13)
    design = report.metadata["design"]
    assert design["c_list"] == list(PRESETS["spherical-p2"].c_list)
    assert design["model"]["name"] == "spherical-p2"
    assert report.rows[0]["reps"] == 100


def test_experiment_validation(table):
    with pytest.raises(ConfigError):
        run_coverage_experiment(model1(), n_list=(25,), reps=50, true_msq=0.95, **DESK_GRID)
    with pytest.raises(ConfigError):
        run_coverage_experiment(model1(), n_list=(25,), reps=100, methods=("pivotal",), true_msq=0.95, **DESK_GRID)
    with pytest.raises(ConfigError):
        run_rejection_experiment(model1(), n_list=(25,), delta_list=("M3",), reps=100, true_msq=0.95, **DESK_GRID)
    with pytest.raises(ConfigError):
        run_coverage_experiment(model1(), n_list=(25,), reps=100, true_msq=0.95, preset="model2-p5")


@pytest.mark.slow
def test_model1_coverage(production_table):
    report = run_coverage_experiment(model1(), n_list=(200, 500), reps=1000, levels=(0.95,),
                                     methods=("jackknife", "pivotal"), seed=1, table=production_table,
                                     workers=8)
    cells = {(row["n"], row["method"]): row for row in report.rows}
    assert cells[(200, "jackknife")]["coverage"] == pytest.approx(95.9, abs=2.5)
    assert cells[(500, "jackknife")]["coverage"] == pytest.approx(95.4, abs=2.5)
    assert cells[(200, "pivotal")]["coverage"] == pytest.approx(97.8, abs=2.5)
    assert cells[(500, "pivotal")]["coverage"] == pytest.approx(97.0, abs=2.5)
    assert cells[(200, "jackknife")]["avg_width"] == pytest.approx(0.46, abs=0.05)


@pytest.mark.slow
def test_model1_boundary_level(production_table):
    report = run_rejection_experiment(model1(), n_list=(400, 1000), delta_list=(MSQ_LABEL,), reps=1000,
                                      methods=("jackknife", "pivotal"), seed=2, table=production_table,
                                      workers=8)
    cells = {(row["n"], row["method"]): row["rate"] for row in report.rows}
    for n in (400, 1000):
        assert cells[(n, "pivotal")] == pytest.approx(4.9, abs=2.0)
    assert cells[(400, "jackknife")] == pytest.approx(5.8, abs=2.5)
    assert cells[(1000, "jackknife")] == pytest.approx(5.6, abs=2.5)


@pytest.mark.slow
def test_ar1_dependence(production_table):
    report = run_rejection_experiment(ar1_model(0.3), n_list=(1000,), delta_list=(MSQ_LABEL,), reps=1000,
                                      methods=("jackknife", "pivotal"), seed=3, table=production_table,
                                      workers=8)
    cells = {row["method"]: row["rate"] for row in report.rows}
    assert cells["pivotal"] == pytest.approx(5.4, abs=2.0)
    assert cells["jackknife"] > 7.0
