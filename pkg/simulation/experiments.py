"""
Monte Carlo coverage and rejection studies.

Replication r at sample-size index i draws from the stream derived from
(master seed, i, r), so reports are bit-identical for any worker count.
"""

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from analysis.bandwidth import PRESETS, build_grid, select_bandwidth
from analysis.estimator import polar_decompose
from analysis import inference
from analysis.variance import jackknife
from config import Config
from errors import ConfigError
from simulation.models import GRID_FOR_MODEL, ModelSpec, derive_rng, generate
from simulation.oracle import DEFAULT_DRAWS, reference_msq
from tools.kernels import RadialKernel

logger = logging.getLogger(__name__)

MIN_REPS = 100
REPORT_VERSION = "1"
MSQ_LABEL = "M2"

DeltaLike = Union[float, str]


@dataclass(frozen=True)
class ExperimentDesign:
    """Everything a replication needs besides its indices"""

    spec: ModelSpec
    a_list: Tuple[float, ...]
    c_list: Tuple[float, ...]
    kernel: str = "jackknife-epanechnikov"
    bias_reduction_a: Optional[float] = Config.BIAS_REDUCTION_A
    methods: Tuple[str, ...] = ("jackknife", "pivotal")
    levels: Tuple[float, ...] = ()
    alpha: float = 0.05
    deltas: Tuple[float, ...] = ()
    relevant: bool = False
    table: Optional[inference.WQuantileTable] = None
    jackknife_scale: str = "theorem"

    def as_dict(self) -> Dict:
        return {
            "model": self.spec.as_dict(),
            "a_list": list(self.a_list),
            "c_list": list(self.c_list),
            "kernel": self.kernel,
            "bias_reduction_a": self.bias_reduction_a,
            "methods": list(self.methods),
            "levels": list(self.levels),
            "alpha": self.alpha,
            "deltas": list(self.deltas),
            "relevant": self.relevant,
            "jackknife_scale": self.jackknife_scale,
            "quantile_table": self.table.metadata() if self.table else None,
        }


@dataclass(frozen=True)
class ReplicationTask:
    design: ExperimentDesign
    n: int
    n_index: int
    replication: int
    seed: int


@dataclass
class ExperimentReport:
    kind: str
    rows: List[Dict]
    metadata: Dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def as_dict(self) -> Dict:
        return {"kind": self.kind, "metadata": self.metadata, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def rate_table(self) -> str:
        """Rates laid out with one row per n, for side-by-side reading"""
        frame = self.to_frame()
        if frame.empty:
            return ""
        if self.kind == "coverage":
            table = frame.pivot_table(index="n", columns=["method", "level"], values=["coverage", "avg_width"])
        else:
            table = frame.pivot_table(index="n", columns=["hypothesis", "delta_label", "method"], values="rate")
        return table.to_string(float_format=lambda x: f"{x:.2f}")


def config_hash(config: Dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def mc_standard_error(rate: float, reps: int) -> float:
    """Binomial standard error of a rate in [0, 1]"""
    return math.sqrt(rate * (1.0 - rate) / reps)


def _scale(method: str, outcome: Dict, n: int, design: ExperimentDesign) -> Tuple[float, inference.QuantileSource]:
    if method == "jackknife":
        scale = inference.jackknife_standard_error(outcome["sigma_hat_sq"], n, design.jackknife_scale)
        return scale, inference.NormalQuantiles()
    return outcome["vhat"], design.table


def run_replication(task: ReplicationTask) -> Dict:
    """One draw, bandwidth selection, estimate and the inference the design asks for"""
    design = task.design
    rng = derive_rng(task.seed, task.n_index, task.replication)
    polar = polar_decompose(generate(design.spec, task.n, rng))
    grid = build_grid(task.n, polar.p, design.a_list, design.c_list)
    selection = select_bandwidth(polar, grid, RadialKernel.from_name(design.kernel), design.bias_reduction_a)
    estimate = selection.estimate
    var = jackknife(polar, selection.bandwidths, pairs=selection.pairs,
                    bias_reduce=design.bias_reduction_a is not None)
    v_hat = selection.vhats[selection.index]
    outcome = {
        "msq": estimate.msq,
        "sigma_hat_sq": var.sigma_hat_sq,
        "s_hat_sq": var.s_hat_sq,
        "vhat": v_hat,
        "h": selection.bandwidths.h,
        "kappa": selection.bandwidths.kappa,
    }

    intervals = {}
    tests = {}
    for method in design.methods:
        scale, quantiles = _scale(method, outcome, task.n, design)
        for level in design.levels:
            if method == "jackknife":
                ci = inference.jackknife_ci(estimate, var, 1.0 - level, design.jackknife_scale)
            else:
                ci = inference.pivotal_ci(estimate, v_hat, design.table, 1.0 - level)
            intervals[(method, level)] = (ci.lower, ci.upper)
        for delta in design.deltas:
            tests[("equivalence", method, delta)] = inference.test_equivalence(
                estimate.msq, scale, quantiles, delta, design.alpha, inference.TestMethod(method)).reject
            if design.relevant:
                tests[("relevant", method, delta)] = inference.test_relevant(
                    estimate.msq, scale, quantiles, delta, design.alpha, inference.TestMethod(method)).reject
    outcome["intervals"] = intervals
    outcome["tests"] = tests
    return outcome


def run_replications(tasks: Sequence[ReplicationTask], workers: int = 1) -> List[Dict]:
    if workers > 1:
        chunk = max(1, len(tasks) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(run_replication, tasks, chunksize=chunk))
    return [run_replication(task) for task in tasks]


def _grid_constants(spec: ModelSpec, preset: Optional[str], a_list, c_list) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    if a_list is not None and c_list is not None:
        return tuple(a_list), tuple(c_list)
    name = preset or GRID_FOR_MODEL.get(spec.name)
    if name is None or name not in PRESETS:
        raise ConfigError(f"no bandwidth preset for model '{spec.name}'; supply a_list and c_list")
    if PRESETS[name].p != spec.p:
        raise ConfigError(f"preset '{name}' is for p={PRESETS[name].p}, model has p={spec.p}")
    return PRESETS[name].a_list, PRESETS[name].c_list


def _check_reps(reps: int):
    if reps < MIN_REPS:
        raise ConfigError(f"experiments need at least {MIN_REPS} replications, got {reps}")


def _tasks(design: ExperimentDesign, n_list: Sequence[int], reps: int, seed: int) -> List[ReplicationTask]:
    return [
        ReplicationTask(design=design, n=int(n), n_index=i, replication=r, seed=seed)
        for i, n in enumerate(n_list)
        for r in range(reps)
    ]


def _metadata(kind: str, design: ExperimentDesign, n_list, reps: int, seed: int, true_msq: float) -> Dict:
    config = {
        "kind": kind,
        "design": design.as_dict(),
        "n_list": [int(n) for n in n_list],
        "reps": reps,
        "seed": seed,
        "true_msq": true_msq,
        "report_version": REPORT_VERSION,
    }
    return {**config, "config_hash": config_hash(config)}


def _resolve_truth(spec: ModelSpec, true_msq: Optional[float], oracle_draws: int, seed: int) -> float:
    if true_msq is not None:
        return float(true_msq)
    return reference_msq(spec, mc_draws=oracle_draws, seed=seed)


def run_coverage_experiment(spec: ModelSpec, n_list: Sequence[int], reps: int,
                            levels: Sequence[float] = (0.95, 0.90),
                            methods: Sequence[str] = ("jackknife", "pivotal"), seed: Optional[int] = None, *,
                            table: Optional[inference.WQuantileTable] = None, true_msq: Optional[float] = None,
                            preset: Optional[str] = None, a_list=None, c_list=None,
                            kernel: str = "jackknife-epanechnikov",
                            bias_reduction_a: Optional[float] = Config.BIAS_REDUCTION_A,
                            workers: int = 1, oracle_draws: int = DEFAULT_DRAWS,
                            jackknife_scale: Optional[str] = None) -> ExperimentReport:
    """Coverage of the true M² and average width of the requested intervals

    Replications use the bias-reduced estimator with factor `bias_reduction_a`;
    None selects the plain estimator.
    """
    _check_reps(reps)
    seed = Config.SEED if seed is None else seed
    methods = tuple(methods)
    if "pivotal" in methods and table is None:
        raise ConfigError("pivotal intervals need a W quantile table")
    a_list, c_list = _grid_constants(spec, preset, a_list, c_list)
    truth = _resolve_truth(spec, true_msq, oracle_draws, seed)
    design = ExperimentDesign(
        spec=spec, a_list=a_list, c_list=c_list, kernel=kernel, bias_reduction_a=bias_reduction_a,
        methods=methods, levels=tuple(levels), table=table,
        jackknife_scale=(jackknife_scale or Config.JACKKNIFE_SCALE).lower(),
    )
    outcomes = run_replications(_tasks(design, n_list, reps, seed), workers)

    rows = []
    for i, n in enumerate(n_list):
        block = outcomes[i * reps:(i + 1) * reps]
        for method in methods:
            for level in levels:
                bounds = [o["intervals"][(method, level)] for o in block]
                rate = sum(lower <= truth <= upper for lower, upper in bounds) / reps
                rows.append({
                    "n": int(n),
                    "method": method,
                    "level": float(level),
                    "coverage": 100.0 * rate,
                    "mc_se": 100.0 * mc_standard_error(rate, reps),
                    "avg_width": math.fsum(upper - lower for lower, upper in bounds) / reps,
                    "reps": reps,
                })
        logger.info("coverage experiment n=%d done (%d replications)", n, reps)
    return ExperimentReport("coverage", rows, _metadata("coverage", design, n_list, reps, seed, truth))


def run_rejection_experiment(spec: ModelSpec, n_list: Sequence[int], delta_list: Sequence[DeltaLike], reps: int,
                             alpha: float = 0.05, methods: Sequence[str] = ("jackknife", "pivotal"),
                             seed: Optional[int] = None, *, table: Optional[inference.WQuantileTable] = None,
                             true_msq: Optional[float] = None, relevant: bool = False,
                             preset: Optional[str] = None, a_list=None, c_list=None,
                             kernel: str = "jackknife-epanechnikov",
                             bias_reduction_a: Optional[float] = Config.BIAS_REDUCTION_A,
                             workers: int = 1, oracle_draws: int = DEFAULT_DRAWS,
                             jackknife_scale: Optional[str] = None) -> ExperimentReport:
    """Rejection rates of the equivalence test (and optionally the relevant test) per (n, delta, method)

    A delta given as "M2" is replaced by the true M² of the model.
    `bias_reduction_a=None` selects the plain estimator.
    """
    _check_reps(reps)
    seed = Config.SEED if seed is None else seed
    methods = tuple(methods)
    if "pivotal" in methods and table is None:
        raise ConfigError("pivotal tests need a W quantile table")
    a_list, c_list = _grid_constants(spec, preset, a_list, c_list)

    needs_truth = any(isinstance(d, str) for d in delta_list)
    truth = _resolve_truth(spec, true_msq, oracle_draws, seed) if needs_truth or true_msq is not None else None
    labelled = []
    for delta in delta_list:
        if isinstance(delta, str):
            if delta.upper() != MSQ_LABEL:
                raise ConfigError(f"delta must be a number or '{MSQ_LABEL}', got '{delta}'")
            labelled.append((MSQ_LABEL, truth))
        else:
            labelled.append((f"{float(delta):g}", float(delta)))

    design = ExperimentDesign(
        spec=spec, a_list=a_list, c_list=c_list, kernel=kernel, bias_reduction_a=bias_reduction_a,
        methods=methods, alpha=alpha, deltas=tuple(value for _, value in labelled), relevant=relevant,
        table=table, jackknife_scale=(jackknife_scale or Config.JACKKNIFE_SCALE).lower(),
    )
    outcomes = run_replications(_tasks(design, n_list, reps, seed), workers)

    hypotheses = ("equivalence", "relevant") if relevant else ("equivalence",)
    rows = []
    for i, n in enumerate(n_list):
        block = outcomes[i * reps:(i + 1) * reps]
        for hypothesis in hypotheses:
            for label, delta in labelled:
                for method in methods:
                    rate = sum(o["tests"][(hypothesis, method, delta)] for o in block) / reps
                    rows.append({
                        "n": int(n),
                        "method": method,
                        "hypothesis": hypothesis,
                        "delta": delta,
                        "delta_label": label,
                        "rate": 100.0 * rate,
                        "mc_se": 100.0 * mc_standard_error(rate, reps),
                        "reps": reps,
                    })
        logger.info("rejection experiment n=%d done (%d replications)", n, reps)
    return ExperimentReport("rejection", rows, _metadata("rejection", design, n_list, reps, seed, truth))
