import asyncio
import logging
import os
import time
from dataclasses import dataclass
from datetime import datetime
from functools import partial
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from analysis import inference
from analysis.bandwidth import (
    BandwidthGrid,
    BandwidthSelection,
    build_grid,
    grid_from_preset,
    select_bandwidth,
    turning_point_curves,
)
from analysis.estimator import (
    DEFAULT_KERNEL,
    Bandwidths,
    MsqEstimate,
    PairSums,
    PolarSample,
    Sample,
    bias_reduced_pair_sums,
    compute_pair_sums,
    estimate_msq,
    estimate_msq_bias_reduced,
    polar_decompose,
)
from analysis.variance import VarianceEstimates, jackknife, plug_in_only
from config import Config
from errors import ConfigError, DimensionError
from observability import TraceLog
from simulation.experiments import ExperimentReport, run_coverage_experiment, run_rejection_experiment
from simulation.models import ModelSpec
from tools.data_io import read_quantile_table, write_quantile_table
from tools.kernels import RadialKernel

logger = logging.getLogger(__name__)

REPORT_VERSION = "1"
CI_METHODS = ("jackknife", "pivotal")
MIN_JACKKNIFE_N = 3


def load_or_generate_quantile_table(path: Optional[str] = None, seed: Optional[int] = None,
                                    paths: Optional[int] = None, steps: Optional[int] = None,
                                    threads: int = 1) -> inference.WQuantileTable:
    """Read the W table at `path`, simulating and caching it there when absent"""
    path = path or Config.QUANTILE_TABLE
    if os.path.exists(path):
        return read_quantile_table(path)
    paths = paths or Config.W_TABLE_PATHS
    steps = steps or Config.W_TABLE_STEPS
    logger.warning("W quantile table %s not found; simulating %d paths of %d steps", path, paths, steps)
    table = inference.w_quantiles(paths=paths, steps=steps, seed=seed, threads=threads)
    write_quantile_table(table, path)
    return table


@dataclass
class AnalysisSettings:
    """Bandwidth mode, kernel and inference options of one analysis"""

    h: Optional[float] = None
    kappa: Optional[float] = None
    preset: Optional[str] = None
    a_list: Optional[Tuple[float, ...]] = None
    c_list: Optional[Tuple[float, ...]] = None
    kernel: str = DEFAULT_KERNEL.name
    bias_reduce: bool = False
    bias_reduction_a: float = Config.BIAS_REDUCTION_A
    methods: Tuple[str, ...] = CI_METHODS
    alpha: float = 0.05
    threads: int = Config.THREADS
    quantile_table: str = Config.QUANTILE_TABLE
    table_seed: int = Config.SEED
    table_paths: Optional[int] = None
    table_steps: Optional[int] = None
    jackknife_scale: str = Config.JACKKNIFE_SCALE
    exact_scaling: str = Config.EXACT_SCALING

    @property
    def bandwidth_mode(self) -> str:
        modes = []
        if self.h is not None or self.kappa is not None:
            modes.append("explicit")
        if self.preset:
            modes.append("preset")
        if self.a_list is not None or self.c_list is not None:
            modes.append("custom")
        if len(modes) != 1:
            raise ConfigError(
                "exactly one bandwidth mode required: explicit h and kappa, a preset grid, or a_list with c_list"
                + (f" (got {', '.join(modes)})" if modes else "")
            )
        mode = modes[0]
        if mode == "explicit" and (self.h is None or self.kappa is None):
            raise ConfigError("explicit bandwidths need both h and kappa")
        if mode == "custom" and (self.a_list is None or self.c_list is None):
            raise ConfigError("a custom grid needs both a_list and c_list")
        return mode

    def validate(self) -> None:
        self.bandwidth_mode
        RadialKernel.from_name(self.kernel)
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.bias_reduce and not 0.0 < self.bias_reduction_a < 1.0:
            raise ConfigError(f"bias reduction factor a must lie in (0, 1), got {self.bias_reduction_a}")
        unknown = [m for m in self.methods if m not in CI_METHODS]
        if unknown or not self.methods:
            raise ConfigError(f"methods must be drawn from {CI_METHODS}, got {list(self.methods)}")
        if self.threads < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}")

    def as_dict(self) -> Dict[str, Any]:
        return {
            "bandwidth_mode": self.bandwidth_mode,
            "h": self.h,
            "kappa": self.kappa,
            "preset": self.preset,
            "a_list": list(self.a_list) if self.a_list is not None else None,
            "c_list": list(self.c_list) if self.c_list is not None else None,
            "kernel": self.kernel,
            "bias_reduce": self.bias_reduce,
            "bias_reduction_a": self.bias_reduction_a if self.bias_reduce else None,
            "methods": list(self.methods),
            "alpha": self.alpha,
            "jackknife_scale": self.jackknife_scale,
            "exact_scaling": self.exact_scaling,
        }


class SphericityWorkflow:
    """Estimation and inference pipeline over one sample, plus experiment runs"""

    def __init__(self, settings: Optional[AnalysisSettings] = None, trace: Optional[TraceLog] = None):
        self.settings = settings or AnalysisSettings(preset="model1-p3")
        self.settings.validate()
        self.kernel = RadialKernel.from_name(self.settings.kernel)
        self.trace = trace or TraceLog()
        self._table: Optional[inference.WQuantileTable] = None

        # Workflow state
        self.workflow_state: Dict[str, Any] = {
            "workflow_id": None,
            "polar": None,
            "selection": None,
            "estimate": None,
            "pairs": None,
            "variance": None,
            "vhat": None,
            "workflow_complete": False
        }

    @property
    def bias_reduction_a(self) -> Optional[float]:
        return self.settings.bias_reduction_a if self.settings.bias_reduce else None

    async def _step(self, action: str, func: Callable, *args, **metadata) -> Any:
        with self.trace.trace("Workflow", action, **metadata):
            return await asyncio.to_thread(func, *args)

    def quantile_table(self) -> inference.WQuantileTable:
        if self._table is None:
            self._table = load_or_generate_quantile_table(
                self.settings.quantile_table,
                seed=self.settings.table_seed,
                paths=self.settings.table_paths,
                steps=self.settings.table_steps,
                threads=self.settings.threads,
            )
        return self._table

    def grid_for(self, polar: PolarSample) -> BandwidthGrid:
        mode = self.settings.bandwidth_mode
        if mode == "preset":
            return grid_from_preset(self.settings.preset, polar.n, polar.p)
        if mode == "custom":
            return build_grid(polar.n, polar.p, self.settings.a_list, self.settings.c_list)
        raise ConfigError("explicit bandwidths define no grid; use a preset or a_list with c_list")

    def _bandwidths(self, polar: PolarSample) -> Tuple[Optional[BandwidthSelection], MsqEstimate, PairSums]:
        threads = self.settings.threads
        if self.settings.bandwidth_mode != "explicit":
            selection = select_bandwidth(polar, self.grid_for(polar), self.kernel, self.bias_reduction_a, threads)
            return selection, selection.estimate, selection.pairs

        bw = Bandwidths(h=self.settings.h, kappa=self.settings.kappa,
                        bias_reduction_a=self.bias_reduction_a, radial_kernel=self.kernel)
        if self.bias_reduction_a is None:
            pairs = compute_pair_sums(polar, bw.h, self.kernel, (bw.kappa,), threads=threads)
            return None, estimate_msq(polar, bw, pairs=pairs), pairs
        pairs = bias_reduced_pair_sums(polar, bw, threads=threads)
        return None, estimate_msq_bias_reduced(polar, bw, pairs=pairs), pairs

    async def prepare(self, sample: Sample) -> Dict[str, Any]:
        """Polar decomposition, bandwidths, estimate, then jackknife and V̂_n"""

        workflow_id = f"analysis_{datetime.now().strftime('%Y%m%d_%H%M%S')}"
        self.workflow_state["workflow_id"] = workflow_id
        self.trace.start_workflow_trace(workflow_id)
        started = time.perf_counter()

        # Step 1: Polar decomposition
        polar = await self._step("polar_decompose", polar_decompose, sample, n=sample.n, p=sample.p)
        self.workflow_state["polar"] = polar

        # Step 2: Bandwidths and point estimate
        selection, estimate, pairs = await self._step(
            "estimate", self._bandwidths, polar, mode=self.settings.bandwidth_mode)
        self.workflow_state.update(selection=selection, estimate=estimate, pairs=pairs)
        self.trace.update_metrics("bandwidth", "h", estimate.bandwidths.h)
        self.trace.update_metrics("bandwidth", "kappa", estimate.bandwidths.kappa)
        self.trace.update_metrics("sample", "n", sample.n)

        # Step 3: Parallel variance estimates (and the W table when needed)
        if polar.n >= MIN_JACKKNIFE_N:
            variance = self._step("jackknife", partial(jackknife, polar, estimate.bandwidths, pairs=pairs,
                                                       bias_reduce=estimate.bias_reduced))
        else:
            logger.warning("n = %d is too small to jackknife; reporting the plug-in variance only", polar.n)
            variance = self._step("plug_in_variance", partial(plug_in_only, polar, estimate.bandwidths, pairs=pairs))
        steps = [
            variance,
            self._step("vhat", inference.vhat, estimate),
        ]
        if "pivotal" in self.settings.methods:
            steps.append(self._step("quantile_table", self.quantile_table))
        results = await asyncio.gather(*steps)
        self.workflow_state.update(variance=results[0], vhat=results[1])

        self.trace.end_workflow_trace(workflow_id, time.perf_counter() - started)
        return self.workflow_state

    def _require_prepared(self) -> Tuple[MsqEstimate, VarianceEstimates, float]:
        estimate = self.workflow_state["estimate"]
        if estimate is None:
            raise ConfigError("run prepare() on a sample first")
        return estimate, self.workflow_state["variance"], self.workflow_state["vhat"]

    def _require_jackknife(self, n: int) -> None:
        if n < MIN_JACKKNIFE_N:
            raise DimensionError(f"jackknife inference needs at least {MIN_JACKKNIFE_N} observations, got {n}")

    def standard_error(self) -> Optional[float]:
        """Jackknife standard error of M̂², None below three observations"""
        estimate, var, _ = self._require_prepared()
        if estimate.n < MIN_JACKKNIFE_N:
            return None
        return inference.jackknife_standard_error(var.sigma_hat_sq, estimate.n, self.settings.jackknife_scale)

    def _scale_for(self, method: str) -> Tuple[float, inference.QuantileSource]:
        estimate, var, v_hat = self._require_prepared()
        if method == "jackknife":
            self._require_jackknife(estimate.n)
            scale = inference.jackknife_standard_error(var.sigma_hat_sq, estimate.n, self.settings.jackknife_scale)
            return scale, inference.NormalQuantiles()
        if method == "pivotal":
            return v_hat, self.quantile_table()
        raise ConfigError(f"unknown method '{method}', choose from {CI_METHODS}")

    def intervals(self, alpha: Optional[float] = None) -> List[inference.ConfidenceInterval]:
        alpha = self.settings.alpha if alpha is None else alpha
        estimate, var, v_hat = self._require_prepared()
        result = []
        for method in self.settings.methods:
            if method == "jackknife":
                self._require_jackknife(estimate.n)
                result.append(inference.jackknife_ci(estimate, var, alpha, self.settings.jackknife_scale))
            else:
                result.append(inference.pivotal_ci(estimate, v_hat, self.quantile_table(), alpha))
        return result

    def test(self, hypothesis: str, method: str, delta: Optional[float] = None,
             alpha: Optional[float] = None) -> inference.TestResult:
        alpha = self.settings.alpha if alpha is None else alpha
        estimate, var, _ = self._require_prepared()
        hypothesis = inference.Hypothesis(hypothesis)
        if hypothesis is inference.Hypothesis.EXACT:
            return inference.test_exact(estimate.msq, var.s_hat_sq, estimate.n, alpha, self.settings.exact_scaling)
        if delta is None:
            raise ConfigError(f"the {hypothesis.value} test needs a threshold delta")
        scale, quantiles = self._scale_for(method)
        run = inference.test_relevant if hypothesis is inference.Hypothesis.RELEVANT else inference.test_equivalence
        return run(estimate.msq, scale, quantiles, delta, alpha, inference.TestMethod(method))

    def threshold(self, alpha: Optional[float] = None) -> Dict[str, float]:
        """Δ̂_alpha per method"""
        alpha = self.settings.alpha if alpha is None else alpha
        estimate, _, _ = self._require_prepared()
        result = {}
        for method in self.settings.methods:
            scale, quantiles = self._scale_for(method)
            result[method] = inference.adaptive_threshold(estimate.msq, scale, quantiles, alpha)
        return result

    async def run_complete_analysis(self, sample: Sample, hypothesis: Optional[str] = None,
                                    method: str = "jackknife", delta: Optional[float] = None,
                                    with_inference: bool = True) -> Dict[str, Any]:
        """Estimate, intervals, adaptive thresholds and optionally one test

        with_inference=False stops after the estimate and its variances.
        """
        await self.prepare(sample)

        intervals, thresholds = [], {}
        with self.trace.trace("Workflow", "inference", alpha=self.settings.alpha):
            if with_inference:
                intervals = self.intervals()
                thresholds = self.threshold()
            test = self.test(hypothesis, method, delta) if hypothesis else None

        self.workflow_state["workflow_complete"] = True
        return self._compile_final_results(intervals, thresholds, test)

    def _compile_final_results(self, intervals: Sequence[inference.ConfidenceInterval],
                               thresholds: Dict[str, float],
                               test: Optional[inference.TestResult]) -> Dict[str, Any]:
        estimate, var, v_hat = self._require_prepared()
        selection = self.workflow_state["selection"]
        polar = self.workflow_state["polar"]
        return {
            "report_version": REPORT_VERSION,
            "settings": self.settings.as_dict(),
            "sample": {"n": polar.n, "p": polar.p},
            "bandwidths": estimate.bandwidths.as_dict(),
            "bandwidth_selection": selection.as_dict() if selection else None,
            "estimate": estimate.as_dict(),
            "variance": var.as_dict(),
            "standard_error": self.standard_error(),
            "vhat": v_hat,
            "quantile_table": self._table.metadata() if self._table else None,
            "intervals": [ci.as_dict() for ci in intervals],
            "thresholds": {"alpha": self.settings.alpha, **thresholds},
            "test": test.as_dict() if test else None,
        }

    async def diagnose(self, sample: Sample) -> Dict[str, Any]:
        """(h, M̂²) and (kappa, M̂²) curves over the grid, with the selected pair"""
        polar = await self._step("polar_decompose", polar_decompose, sample, n=sample.n, p=sample.p)
        grid = self.grid_for(polar)
        selection, curves = await asyncio.gather(
            self._step("select_bandwidth", select_bandwidth, polar, grid, self.kernel,
                       self.bias_reduction_a, self.settings.threads),
            self._step("turning_point_curves", turning_point_curves, polar, grid, self.kernel,
                       self.bias_reduction_a),
        )
        return {
            "grid": grid.as_dict(),
            "selection": selection.as_dict(),
            "estimates": [est.msq for est in selection.estimates],
            "curves": curves,
        }

    async def experiment(self, kind: str, spec: ModelSpec, **kwargs) -> ExperimentReport:
        """Coverage or rejection study run off the event loop"""
        runners = {"coverage": run_coverage_experiment, "rejection": run_rejection_experiment}
        if kind not in runners:
            raise ConfigError(f"experiment kind must be one of {sorted(runners)}, got '{kind}'")
        return await self._step(f"{kind}_experiment", partial(runners[kind], spec, **kwargs),
                                model=spec.name)
