"""
Command-line surface: estimate, ci, test, threshold, diagnose on a CSV sample;
simulate, quantiles and oracle for studies; history for stored runs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

import argparse
import asyncio
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from analysis import inference
from analysis.estimator import DEFAULT_KERNEL
from config import Config
from errors import ConfigError, SphericityError, exit_code_for
from memory import RunMemory
from observability import TraceLog, configure_logging
from simulation.experiments import MSQ_LABEL
from simulation.models import MODEL_PRESETS, get_model
from simulation.oracle import DEFAULT_DRAWS, oracle_msq
from tools.data_io import ingest_csv, to_json, write_quantile_table
from workflow import CI_METHODS, AnalysisSettings, SphericityWorkflow, load_or_generate_quantile_table

logger = logging.getLogger(__name__)

REPORT_VERSION = "1"
DATA_COMMANDS = ("estimate", "ci", "test", "threshold", "diagnose")
TEST_METHODS = ("jackknife", "pivotal", "exact")
HYPOTHESES = tuple(h.value for h in inference.Hypothesis)
SUMMARY_LEVELS = (0.025, 0.05, 0.5, 0.95, 0.975)


@dataclass
class RunConfig:
    """Validated settings of one CLI invocation, echoed into its report"""

    subcommand: str
    input: Optional[str] = None
    h: Optional[float] = None
    kappa: Optional[float] = None
    preset: Optional[str] = None
    a_list: Optional[Tuple[float, ...]] = None
    c_list: Optional[Tuple[float, ...]] = None
    kernel: str = DEFAULT_KERNEL.name
    bias_reduce: bool = False
    bias_reduction_a: float = Config.BIAS_REDUCTION_A
    plain: bool = False
    alpha: float = 0.05
    deltas: Tuple[str, ...] = ()
    hypothesis: str = "equivalence"
    methods: Tuple[str, ...] = ("jackknife",)
    seed: int = Config.SEED
    output: Optional[str] = None
    format: str = "json"
    threads: int = Config.THREADS
    quantile_table: str = Config.QUANTILE_TABLE
    paths: Optional[int] = None
    steps: Optional[int] = None
    jackknife_scale: str = Config.JACKKNIFE_SCALE
    exact_scaling: str = Config.EXACT_SCALING
    model: str = "model1"
    n_list: Tuple[int, ...] = (200,)
    reps: int = 1000
    levels: Tuple[float, ...] = (0.95, 0.90)
    experiment: str = "coverage"
    relevant: bool = False
    true_msq: Optional[float] = None
    draws: int = DEFAULT_DRAWS
    limit: int = 10
    extra: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        values = {key: value for key, value in vars(args).items() if value is not None}
        values["subcommand"] = values.pop("command")
        values.pop("log_level", None)
        for key in ("a_list", "c_list", "deltas", "methods", "n_list", "levels"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**{key: value for key, value in values.items() if key in cls.__dataclass_fields__})

    @staticmethod
    def _parse_delta(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(f"threshold delta must be a number, got '{text}'")
        if not (value >= 0.0 and math.isfinite(value)):
            raise ConfigError(f"threshold delta must be non-negative, got {text}")
        return value

    @property
    def numeric_deltas(self) -> List[float]:
        return [self._parse_delta(text) for text in self.deltas]

    def to_settings(self) -> AnalysisSettings:
        methods = tuple(m for m in self.methods if m in CI_METHODS) or ("jackknife",)
        return AnalysisSettings(
            h=self.h,
            kappa=self.kappa,
            preset=self.preset,
            a_list=self.a_list,
            c_list=self.c_list,
            kernel=self.kernel,
            bias_reduce=self.bias_reduce,
            bias_reduction_a=self.bias_reduction_a,
            methods=methods,
            alpha=self.alpha,
            threads=self.threads,
            quantile_table=self.quantile_table,
            table_seed=self.seed,
            table_paths=self.paths,
            table_steps=self.steps,
            jackknife_scale=self.jackknife_scale,
            exact_scaling=self.exact_scaling,
        )

    def validate(self) -> None:
        if self.subcommand not in COMMANDS:
            raise ConfigError(f"unknown subcommand '{self.subcommand}'")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.format not in ("json", "table"):
            raise ConfigError(f"format must be 'json' or 'table', got '{self.format}'")
        if self.threads < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}")
        unknown = [m for m in self.methods if m not in TEST_METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}, choose from {TEST_METHODS}")
        for text in self.deltas:
            if not (self.subcommand == "simulate" and text.upper() == MSQ_LABEL):
                self._parse_delta(text)

        if self.subcommand in DATA_COMMANDS:
            if not self.input:
                raise ConfigError(f"'{self.subcommand}' needs an input CSV file")
            self.to_settings().validate()
        if self.subcommand == "test":
            self._validate_test()
        if self.subcommand in ("simulate", "oracle") and self.model not in MODEL_PRESETS:
            raise ConfigError(f"unknown model '{self.model}', choose from {sorted(MODEL_PRESETS)}")
        if self.subcommand == "simulate":
            if self.experiment not in ("coverage", "rejection"):
                raise ConfigError(f"experiment must be 'coverage' or 'rejection', got '{self.experiment}'")
            if self.experiment == "rejection" and not self.deltas:
                raise ConfigError("a rejection experiment needs at least one --delta")
            if any(n < 3 for n in self.n_list):
                raise ConfigError(f"sample sizes must be at least 3, got {list(self.n_list)}")

    def _validate_test(self):
        if self.hypothesis not in HYPOTHESES:
            raise ConfigError(f"hypothesis must be one of {HYPOTHESES}, got '{self.hypothesis}'")
        if len(self.methods) != 1:
            raise ConfigError("the test command takes exactly one --method")
        method = self.methods[0]
        if (self.hypothesis == "exact") != (method == "exact"):
            raise ConfigError("the exact test pairs hypothesis 'exact' with method 'exact'")
        if self.hypothesis != "exact" and len(self.deltas) != 1:
            raise ConfigError(f"the {self.hypothesis} test needs exactly one --delta")

    def as_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        result.pop("extra")
        for key, value in result.items():
            if isinstance(value, tuple):
                result[key] = list(value)
        return result


@dataclass
class CommandResult:
    report: Dict[str, Any]
    table: str


def _frame_text(frame: pd.DataFrame) -> str:
    if frame.empty:
        return ""
    return frame.to_string(index=False, float_format=lambda x: f"{x:.6g}")


def _analysis_table(report: Dict[str, Any], extra_rows: Sequence[Dict[str, Any]] = ()) -> str:
    estimate = report["estimate"]
    rows = [
        {"quantity": "n", "value": report["sample"]["n"]},
        {"quantity": "p", "value": report["sample"]["p"]},
        {"quantity": "h", "value": report["bandwidths"]["h"]},
        {"quantity": "kappa", "value": report["bandwidths"]["kappa"]},
        {"quantity": "M2_hat", "value": estimate["msq"]},
        {"quantity": "sigma_hat_sq", "value": report["variance"]["sigma_hat_sq"]},
        {"quantity": "s_hat_sq", "value": report["variance"]["s_hat_sq"]},
        {"quantity": "standard_error", "value": report["standard_error"]},
        {"quantity": "V_hat", "value": report["vhat"]},
    ]
    rows += list(extra_rows)
    return pd.DataFrame(rows).to_string(index=False)


def _run_analysis(config: RunConfig, hypothesis: Optional[str] = None,
                  method: str = "jackknife", delta: Optional[float] = None,
                  with_inference: bool = True) -> Dict[str, Any]:
    sample = ingest_csv(config.input)
    workflow = SphericityWorkflow(config.to_settings(), TraceLog())
    return asyncio.run(workflow.run_complete_analysis(sample, hypothesis, method, delta, with_inference))


def cmd_estimate(config: RunConfig) -> CommandResult:
    config = RunConfig(**{**asdict(config), "methods": ("jackknife",)})
    report = _run_analysis(config, with_inference=False)
    report.pop("intervals")
    report.pop("thresholds")
    return CommandResult(report, _analysis_table(report))


def cmd_ci(config: RunConfig) -> CommandResult:
    report = _run_analysis(config)
    return CommandResult(report, _frame_text(pd.DataFrame(report["intervals"])))


def cmd_test(config: RunConfig) -> CommandResult:
    method = config.methods[0]
    delta = config.numeric_deltas[0] if config.hypothesis != "exact" else None
    if method == "exact":
        config = RunConfig(**{**asdict(config), "methods": ("jackknife",)})
    report = _run_analysis(config, config.hypothesis, method, delta)
    test = report["test"]
    return CommandResult(report, _frame_text(pd.DataFrame([test])))


def cmd_threshold(config: RunConfig) -> CommandResult:
    report = _run_analysis(config)
    thresholds = report["thresholds"]
    rows = [{"method": m, "alpha": thresholds["alpha"], "delta_hat": thresholds[m]}
            for m in config.to_settings().methods]
    return CommandResult(report, _frame_text(pd.DataFrame(rows)))


def cmd_diagnose(config: RunConfig) -> CommandResult:
    sample = ingest_csv(config.input)
    workflow = SphericityWorkflow(config.to_settings(), TraceLog())
    result = asyncio.run(workflow.diagnose(sample))
    curves = result.pop("curves")
    report = {
        "settings": workflow.settings.as_dict(),
        "sample": {"n": sample.n, "p": sample.p},
        **result,
        "curves": {name: frame.to_dict(orient="records") for name, frame in curves.items()},
    }
    table = "\n\n".join(f"[{name} curve]\n{_frame_text(frame)}" for name, frame in curves.items())
    return CommandResult(report, table)


def cmd_simulate(config: RunConfig) -> CommandResult:
    spec = get_model(config.model)
    table = None
    if "pivotal" in config.methods:
        table = load_or_generate_quantile_table(config.quantile_table, seed=config.seed, paths=config.paths,
                                                steps=config.steps, threads=config.threads)
    methods = tuple(m for m in config.methods if m in CI_METHODS)
    options = dict(
        methods=methods, seed=config.seed, table=table, true_msq=config.true_msq, preset=config.preset,
        a_list=config.a_list, c_list=config.c_list, kernel=config.kernel,
        bias_reduction_a=None if config.plain else config.bias_reduction_a,
        workers=config.threads, oracle_draws=config.draws, jackknife_scale=config.jackknife_scale,
    )
    if config.experiment == "coverage":
        options.update(n_list=config.n_list, reps=config.reps, levels=config.levels)
    else:
        deltas = [d if d.upper() == MSQ_LABEL else float(d) for d in config.deltas]
        options.update(n_list=config.n_list, delta_list=deltas, reps=config.reps,
                       alpha=config.alpha, relevant=config.relevant)

    workflow = SphericityWorkflow(AnalysisSettings(preset=config.preset) if config.preset else None, TraceLog())
    experiment = asyncio.run(workflow.experiment(config.experiment, spec, **options))
    return CommandResult(experiment.as_dict(), experiment.rate_table())


def cmd_quantiles(config: RunConfig) -> CommandResult:
    table = inference.w_quantiles(paths=config.paths, steps=config.steps, seed=config.seed, threads=config.threads)
    path = config.output or config.quantile_table
    write_quantile_table(table, path)
    summary = {f"{level:g}": table.quantile(level) for level in SUMMARY_LEVELS}
    report = {"path": path, "metadata": table.metadata(), "levels": len(table.levels), "quantiles": summary}
    frame = pd.DataFrame([{"level": k, "quantile": v} for k, v in summary.items()])
    return CommandResult(report, _frame_text(frame))


def cmd_oracle(config: RunConfig) -> CommandResult:
    spec = get_model(config.model)
    result = oracle_msq(spec, mc_draws=config.draws, seed=config.seed)
    report = {"model": spec.as_dict(), **result.as_dict()}
    return CommandResult(report, _frame_text(pd.DataFrame([result.as_dict()])))


def history_memory() -> RunMemory:
    if not Config.HISTORY_DB:
        raise ConfigError("run history is disabled; set SPHERICITY_HISTORY_DB")
    return RunMemory(Config.HISTORY_DB)


def cmd_history(config: RunConfig) -> CommandResult:
    memory = history_memory()
    runs = memory.get_recent_runs(limit=config.limit)
    report = {"stats": memory.get_memory_stats(), "runs": runs}
    frame = pd.DataFrame([{k: run[k] for k in ("id", "timestamp", "command", "msq", "exit_code")} for run in runs])
    return CommandResult(report, _frame_text(frame))


COMMANDS: Dict[str, Callable[[RunConfig], CommandResult]] = {
    "estimate": cmd_estimate,
    "ci": cmd_ci,
    "test": cmd_test,
    "threshold": cmd_threshold,
    "diagnose": cmd_diagnose,
    "simulate": cmd_simulate,
    "quantiles": cmd_quantiles,
    "oracle": cmd_oracle,
    "history": cmd_history,
}


def _common_options() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--seed", type=int, help="Master seed (default SPHERICITY_SEED)")
    parser.add_argument("--format", choices=("json", "table"), help="Report format")
    parser.add_argument("--output", help="Write the report (the table file for 'quantiles') to this path")
    parser.add_argument("--threads", type=int, help="Worker cap (default SPHERICITY_THREADS)")
    parser.add_argument("--log-level", help="Logging level")
    parser.add_argument("--quantile-table", help="W quantile table path (default SPHERICITY_QUANTILE_TABLE)")
    parser.add_argument("--paths", type=int, help="Brownian paths when a W table is simulated")
    parser.add_argument("--steps", type=int, help="Time steps per path when a W table is simulated")
    return parser


def _bandwidth_options() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--h", type=float, help="Explicit radial bandwidth")
    parser.add_argument("--kappa", type=float, help="Explicit spherical concentration")
    parser.add_argument("--preset", help="Named bandwidth grid, e.g. model1-p3")
    parser.add_argument("--a-list", dest="a_list", type=float, nargs="+", help="Radial grid constants")
    parser.add_argument("--c-list", dest="c_list", type=float, nargs="+", help="Concentration grid constants")
    parser.add_argument("--kernel", help="Radial kernel, e.g. jackknife-epanechnikov or biweight")
    parser.add_argument("--bias-reduce", dest="bias_reduce", action="store_true", default=None,
                        help="Use the bias-reduced estimator")
    parser.add_argument("--bias-a", dest="bias_reduction_a", type=float,
                        help="Factor a of the bias-reduced estimator (default SPHERICITY_BIAS_REDUCTION_A)")
    return parser


def _inference_options() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--alpha", type=float, help="Significance level")
    parser.add_argument("--delta", dest="deltas", nargs="+", help="Threshold(s) delta; 'M2' means the true value")
    parser.add_argument("--method", dest="methods", nargs="+", choices=TEST_METHODS, help="Inference method(s)")
    parser.add_argument("--hypothesis", choices=HYPOTHESES, help="Hypothesis of the test command")
    parser.add_argument("--jackknife-scale", dest="jackknife_scale", choices=inference.JACKKNIFE_SCALES)
    parser.add_argument("--exact-scaling", dest="exact_scaling", choices=inference.EXACT_SCALINGS)
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sphericity", description=Config.APP_DESCRIPTION)
    subparsers = parser.add_subparsers(dest="command", required=True)
    common, bandwidth, infer = _common_options(), _bandwidth_options(), _inference_options()

    helps = {
        "estimate": "Point estimate of M² with its variance estimates",
        "ci": "Confidence intervals for M²",
        "test": "Relevant, equivalence or exact test",
        "threshold": "Smallest delta at which the equivalence test rejects",
        "diagnose": "M² curves along h and kappa for turning-point inspection",
    }
    for name, text in helps.items():
        sub = subparsers.add_parser(name, help=text, parents=[common, bandwidth, infer])
        sub.add_argument("input", help="CSV file, one observation per row")

    simulate = subparsers.add_parser("simulate", help="Coverage or rejection study",
                                     parents=[common, bandwidth, infer])
    simulate.add_argument("--experiment", choices=("coverage", "rejection"))
    simulate.add_argument("--model", choices=sorted(MODEL_PRESETS))
    simulate.add_argument("--n", dest="n_list", type=int, nargs="+", help="Sample sizes")
    simulate.add_argument("--reps", type=int, help="Replications per sample size")
    simulate.add_argument("--levels", type=float, nargs="+", help="Confidence levels")
    simulate.add_argument("--relevant", action="store_true", default=None, help="Also run the relevant test")
    simulate.add_argument("--true-msq", dest="true_msq", type=float, help="Known M², skips the oracle")
    simulate.add_argument("--draws", type=int, help="Oracle Monte Carlo draws")
    simulate.add_argument("--plain-estimator", dest="plain", action="store_true", default=None,
                          help="Replicate with the plain estimator instead of the bias-reduced one")

    subparsers.add_parser("quantiles", help="Simulate and write the W quantile table", parents=[common])

    oracle = subparsers.add_parser("oracle", help="Reference M² of a Gaussian model", parents=[common])
    oracle.add_argument("--model", choices=sorted(MODEL_PRESETS))
    oracle.add_argument("--draws", type=int, help="Monte Carlo draws")

    history = subparsers.add_parser("history", help="Recently stored runs", parents=[common])
    history.add_argument("--limit", type=int, help="Number of runs to list")
    return parser


def emit(result: CommandResult, config: RunConfig) -> None:
    text = to_json(result.report) if config.format == "json" else result.table
    if config.output and config.subcommand != "quantiles":
        with open(config.output, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text + "\n")
        logger.info("report written to %s", config.output)
    else:
        sys.stdout.write(text + "\n")


def _remember(config: RunConfig, report: Dict[str, Any], exit_code: int) -> None:
    if not Config.HISTORY_DB or config.subcommand == "history":
        return
    try:
        RunMemory(Config.HISTORY_DB).store_run(config.subcommand, config.as_dict(), report, exit_code)
    except Exception as e:
        logger.warning("could not store run in %s: %s", Config.HISTORY_DB, e)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    config: Optional[RunConfig] = None
    try:
        config = RunConfig.from_args(args)
        config.validate()
        result = COMMANDS[config.subcommand](config)
    except SphericityError as e:
        code = exit_code_for(e)
        logger.error("%s failed: %s", args.command, e)
        sys.stderr.write(f"error: {e}\n")
        if config is not None:
            _remember(config, {"error": str(e), "error_type": type(e).__name__}, code)
        return code

    report = {"report_version": REPORT_VERSION, "command": config.subcommand, "config": config.as_dict(),
              **result.report}
    emit(CommandResult(report, result.table), config)
    _remember(config, report, 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
