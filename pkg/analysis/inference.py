"""
Confidence intervals and tests for M², by the jackknife (normal limit) and by
self-normalization with V̂_n (limit W = B(1) / integral of |B(t) - t B(1)|).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from analysis.estimator import MsqEstimate
from analysis.variance import VarianceEstimates
from config import Config
from errors import ConfigError, TableError

logger = logging.getLogger(__name__)

W_TABLE_VERSION = "1"
W_GENERATOR = "philox-blocked"
W_BLOCK_PATHS = 2048
MIN_PRODUCTION_PATHS = 100_000
MIN_PRODUCTION_STEPS = 1_000

DEFAULT_LEVELS = tuple(round(x, 3) for x in np.linspace(0.001, 0.999, 999))

JACKKNIFE_SCALES = ("theorem", "literal")
EXACT_SCALINGS = ("variance", "literal")


class CIMethod(str, Enum):
    JACKKNIFE = "jackknife"
    PIVOTAL = "pivotal"


class TestMethod(str, Enum):
    JACKKNIFE = "jackknife"
    PIVOTAL = "pivotal"
    EXACT = "exact"


class Hypothesis(str, Enum):
    RELEVANT = "relevant"
    EQUIVALENCE = "equivalence"
    EXACT = "exact"


class QuantileSource(Protocol):
    name: str

    def quantile(self, level: float) -> float:
        ...

    def cdf(self, x: float) -> float:
        ...


class NormalQuantiles:
    """Standard normal quantiles"""

    name = "normal"

    def quantile(self, level: float) -> float:
        _check_level(level)
        return float(norm.ppf(level))

    def cdf(self, x: float) -> float:
        return float(norm.cdf(x))


@dataclass(frozen=True)
class WQuantileTable:
    """Simulated quantiles of W with the settings that reproduce them"""

    levels: Tuple[float, ...]
    quantiles: Tuple[float, ...]
    paths: int
    steps: int
    seed: int
    block_paths: int = W_BLOCK_PATHS
    version: str = W_TABLE_VERSION
    generator: str = W_GENERATOR
    name: str = field(default="w-table", compare=False)

    def __post_init__(self):
        levels = tuple(float(x) for x in self.levels)
        quantiles = tuple(float(x) for x in self.quantiles)
        if not levels or len(levels) != len(quantiles):
            raise TableError("W table needs one quantile per level")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise TableError("W table levels must be strictly increasing")
        if any(b < a for a, b in zip(quantiles, quantiles[1:])):
            raise TableError("W table quantiles must be increasing in the level")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "quantiles", quantiles)

    def quantile(self, level: float) -> float:
        """Tabulated quantile, linearly interpolated in the level; no extrapolation"""
        _check_level(level)
        if level < self.levels[0] or level > self.levels[-1]:
            raise TableError(
                f"level {level} outside the W table range [{self.levels[0]}, {self.levels[-1]}]"
            )
        return float(np.interp(level, self.levels, self.quantiles))

    def cdf(self, x: float) -> float:
        """Approximate P(W <= x), clipped to the tabulated level range"""
        return float(np.interp(x, self.quantiles, self.levels))

    def metadata(self) -> Dict:
        return {
            "version": self.version,
            "generator": self.generator,
            "seed": self.seed,
            "paths": self.paths,
            "steps": self.steps,
            "block_paths": self.block_paths,
        }


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    method: CIMethod
    center: float
    quantile: float
    scale: float

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def as_dict(self) -> Dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "method": self.method.value,
            "center": self.center,
            "width": self.width,
            "quantile": self.quantile,
            "scale": self.scale,
        }


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    statistic: float
    threshold: float
    alpha: float
    reject: bool
    critical_boundary: float
    method: TestMethod
    hypothesis: Hypothesis
    quantile: float
    scale: float
    p_value: float

    @property
    def decision(self) -> str:
        return "reject" if self.reject else "retain"

    def as_dict(self) -> Dict:
        return {
            "statistic": self.statistic,
            "threshold": self.threshold,
            "alpha": self.alpha,
            "decision": self.decision,
            "critical_boundary": self.critical_boundary,
            "method": self.method.value,
            "hypothesis": self.hypothesis.value,
            "quantile": self.quantile,
            "scale": self.scale,
            "p_value": self.p_value,
        }


def _check_level(level: float):
    if not 0.0 < level < 1.0:
        raise ConfigError(f"probability level must lie in (0, 1), got {level}")


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")


def _check_delta(delta: float):
    if not (delta >= 0.0 and math.isfinite(delta)):
        raise ConfigError(f"threshold delta must be non-negative, got {delta}")


def _check_scale(scale: float):
    if not (scale >= 0.0 and math.isfinite(scale)):
        raise ConfigError(f"scale must be non-negative and finite, got {scale}")


def vhat(path: Union[MsqEstimate, np.ndarray]) -> float:
    """V̂_n = sum over k = 2..n of |M̂²_k - M̂²_n| * (k/n) * (1/n)"""
    values = path.sequential if isinstance(path, MsqEstimate) else np.asarray(path, dtype=float)
    if len(values) < 1:
        raise ConfigError("sequential path must cover at least n = 2")
    n = len(values) + 1
    k = np.arange(2, n + 1, dtype=float)
    return float(np.sum(np.abs(values - values[-1]) * k) / (n * n))


def jackknife_standard_error(sigma_hat_sq: float, n: int, mode: Optional[str] = None) -> float:
    """Standard error of M̂²_n from sigma_hat²

    'theorem' reads sigma_hat² against the N(0, 4 sigma²) limit (2 sigma_hat / sqrt(n));
    'literal' uses sigma_hat / sqrt(n).
    """
    mode = (mode or Config.JACKKNIFE_SCALE).lower()
    if mode not in JACKKNIFE_SCALES:
        raise ConfigError(f"jackknife scale must be one of {JACKKNIFE_SCALES}, got '{mode}'")
    factor = 2.0 if mode == "theorem" else 1.0
    return factor * math.sqrt(max(0.0, sigma_hat_sq)) / math.sqrt(n)


def _simulate_w_block(seed: int, block: int, count: int, steps: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))
    brownian = np.cumsum(rng.standard_normal((count, steps)) / math.sqrt(steps), axis=1)
    endpoint = brownian[:, -1]
    t = np.arange(1, steps + 1, dtype=float) / steps
    bridge_mass = np.mean(np.abs(brownian - t[None, :] * endpoint[:, None]), axis=1)
    return endpoint / bridge_mass


def simulate_w(paths: int, steps: int, seed: int, threads: int = 1,
               block_paths: int = W_BLOCK_PATHS) -> np.ndarray:
    """Draws of W; block b uses its own Philox stream, so output ignores the worker count"""
    if paths < 1 or steps < 2:
        raise ConfigError(f"need paths >= 1 and steps >= 2, got {paths} and {steps}")
    counts = [min(block_paths, paths - start) for start in range(0, paths, block_paths)]

    def work(item):
        block, count = item
        return _simulate_w_block(seed, block, count, steps)

    if threads > 1 and len(counts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            parts = list(executor.map(work, enumerate(counts)))
    else:
        parts = [work(item) for item in enumerate(counts)]
    return np.concatenate(parts)


def w_quantiles(levels: Sequence[float] = DEFAULT_LEVELS, paths: Optional[int] = None,
                steps: Optional[int] = None, seed: Optional[int] = None, threads: int = 1,
                block_paths: int = W_BLOCK_PATHS) -> WQuantileTable:
    paths = paths or Config.W_TABLE_PATHS
    steps = steps or Config.W_TABLE_STEPS
    seed = Config.SEED if seed is None else seed
    levels = [float(x) for x in levels]
    if not levels:
        raise ConfigError("at least one quantile level required")
    for level in levels:
        _check_level(level)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("quantile levels must be strictly increasing")
    if paths < MIN_PRODUCTION_PATHS or steps < MIN_PRODUCTION_STEPS:
        logger.warning("W table with %d paths and %d steps is below production size", paths, steps)

    draws = simulate_w(paths, steps, seed, threads=threads, block_paths=block_paths)
    quantiles = np.quantile(draws, levels)
    logger.info("simulated W quantiles: paths=%d steps=%d seed=%d", paths, steps, seed)
    return WQuantileTable(
        levels=tuple(levels),
        quantiles=tuple(float(q) for q in quantiles),
        paths=paths,
        steps=steps,
        seed=seed,
        block_paths=block_paths,
    )


def _interval(center: float, quantile: float, scale: float, alpha: float, method: CIMethod) -> ConfidenceInterval:
    half = quantile * scale
    return ConfidenceInterval(
        lower=center - half,
        upper=center + half,
        level=1.0 - alpha,
        method=method,
        center=center,
        quantile=quantile,
        scale=scale,
    )


def jackknife_ci(estimate: MsqEstimate, var: VarianceEstimates, alpha: float,
                 scale_mode: Optional[str] = None) -> ConfidenceInterval:
    _check_alpha(alpha)
    if estimate.n < 3:
        raise ConfigError("jackknife interval needs n >= 3")
    scale = jackknife_standard_error(var.sigma_hat_sq, estimate.n, scale_mode)
    return _interval(estimate.msq, NormalQuantiles().quantile(1.0 - alpha / 2.0), scale, alpha, CIMethod.JACKKNIFE)


def pivotal_ci(estimate: MsqEstimate, v_hat: float, table: WQuantileTable, alpha: float) -> ConfidenceInterval:
    _check_alpha(alpha)
    _check_scale(v_hat)
    return _interval(estimate.msq, table.quantile(1.0 - alpha / 2.0), v_hat, alpha, CIMethod.PIVOTAL)


def _upper_p_value(standardized: float, quantiles: QuantileSource) -> float:
    return 1.0 - quantiles.cdf(standardized)


def _equivalence_bound(statistic: float, scale: float, quantiles: QuantileSource, alpha: float) -> float:
    return statistic - quantiles.quantile(alpha) * scale


def test_relevant(statistic: float, scale: float, quantiles: QuantileSource, delta: float, alpha: float,
                  method: TestMethod = TestMethod.JACKKNIFE) -> TestResult:
    """H0: M² <= delta against M² > delta; reject iff M̂² > delta + q_(1-alpha) * scale"""
    _check_alpha(alpha)
    _check_delta(delta)
    _check_scale(scale)
    q = quantiles.quantile(1.0 - alpha)
    boundary = delta + q * scale
    reject = statistic > boundary
    if scale > 0:
        p_value = _upper_p_value((statistic - delta) / scale, quantiles)
    else:
        p_value = 0.0 if statistic > delta else 1.0
    return TestResult(
        statistic=statistic,
        threshold=delta,
        alpha=alpha,
        reject=bool(reject),
        critical_boundary=boundary,
        method=TestMethod(method),
        hypothesis=Hypothesis.RELEVANT,
        quantile=q,
        scale=scale,
        p_value=p_value,
    )


def test_equivalence(statistic: float, scale: float, quantiles: QuantileSource, delta: float, alpha: float,
                     method: TestMethod = TestMethod.JACKKNIFE) -> TestResult:
    """H0: M² >= delta against M² < delta; reject iff M̂² <= delta + q_alpha * scale

    Evaluated as delta >= M̂² - q_alpha * scale, the same expression as the
    adaptive threshold, so the test rejects exactly when delta >= Δ̂_alpha.
    """
    _check_alpha(alpha)
    _check_delta(delta)
    _check_scale(scale)
    q = quantiles.quantile(alpha)
    reject = delta >= _equivalence_bound(statistic, scale, quantiles, alpha)
    if scale > 0:
        p_value = quantiles.cdf((statistic - delta) / scale)
    else:
        p_value = 0.0 if statistic <= delta else 1.0
    return TestResult(
        statistic=statistic,
        threshold=delta,
        alpha=alpha,
        reject=bool(reject),
        critical_boundary=delta + q * scale,
        method=TestMethod(method),
        hypothesis=Hypothesis.EQUIVALENCE,
        quantile=q,
        scale=scale,
        p_value=p_value,
    )


def exact_test_scale(s_hat_sq: float, n: int, mode: Optional[str] = None) -> float:
    mode = (mode or Config.EXACT_SCALING).lower()
    if mode not in EXACT_SCALINGS:
        raise ConfigError(f"exact test scaling must be one of {EXACT_SCALINGS}, got '{mode}'")
    s_hat = math.sqrt(max(0.0, s_hat_sq))
    return s_hat if mode == "variance" else s_hat / math.sqrt(n)


def test_exact(statistic: float, s_hat_sq: float, n: int, alpha: float, mode: Optional[str] = None) -> TestResult:
    """H0: spherical symmetry; reject iff M̂² > u_(1-alpha) * scale"""
    _check_alpha(alpha)
    normal = NormalQuantiles()
    scale = exact_test_scale(s_hat_sq, n, mode)
    q = normal.quantile(1.0 - alpha)
    boundary = q * scale
    if scale > 0:
        p_value = _upper_p_value(statistic / scale, normal)
    else:
        p_value = 0.0 if statistic > 0 else 1.0
    return TestResult(
        statistic=statistic,
        threshold=0.0,
        alpha=alpha,
        reject=bool(statistic > boundary),
        critical_boundary=boundary,
        method=TestMethod.EXACT,
        hypothesis=Hypothesis.EXACT,
        quantile=q,
        scale=scale,
        p_value=p_value,
    )


def adaptive_threshold(statistic: float, scale: float, quantiles: QuantileSource, alpha: float) -> float:
    """Δ̂_alpha = max(0, M̂² - q_alpha * scale), the smallest delta the equivalence test rejects"""
    _check_alpha(alpha)
    _check_scale(scale)
    return max(0.0, _equivalence_bound(statistic, scale, quantiles, alpha))
