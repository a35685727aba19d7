import logging
import math
import warnings
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from analysis.estimator import (
    Bandwidths,
    PairSums,
    PolarSample,
    bias_reduced_pair_sums,
    bias_reduction_weights,
    compute_pair_sums,
)
from errors import DegenerateSampleWarning, DimensionError
from tools.kernels import kernel_moments

logger = logging.getLogger(__name__)

DEGENERATE_RTOL = 1e-10


@dataclass(frozen=True)
class VarianceEstimates:
    """Plug-in variance under sphericity and jackknife variance of M̂²_n

    sigma_hat_sq carries the 1/(4(n-1)) divisor, so it estimates n Var(M̂²_n) / 4.
    """

    s_hat_sq: float
    sigma_hat_sq: float
    pseudovalues: np.ndarray
    jackknife_mean: float
    degenerate: bool = False

    @property
    def n(self) -> int:
        return len(self.pseudovalues)

    def as_dict(self) -> Dict:
        return {
            "s_hat_sq": self.s_hat_sq,
            "sigma_hat_sq": self.sigma_hat_sq,
            "jackknife_mean": self.jackknife_mean,
            "degenerate": self.degenerate,
        }


def plug_in_prefactor(n: int, p: int, bw: Bandwidths) -> float:
    """psi_2(K) kappa^((p-1)/2) / (2^(p-2) pi^((p-1)/2) n (n-1) h)"""
    psi_2 = kernel_moments(bw.radial_kernel).psi_2
    half = 0.5 * (p - 1)
    log_scale = half * math.log(bw.kappa) - (p - 2) * math.log(2.0) - half * math.log(math.pi)
    return psi_2 * math.exp(log_scale) / (n * (n - 1.0) * bw.h)


def plug_in_variance(polar: PolarSample, bw: Bandwidths, m2: Optional[float] = None,
                     pairs: Optional[PairSums] = None) -> float:
    """ŝ²_n, the variance of M̂²_n under sphericity; reuses m2 when supplied"""
    if polar.n < 2:
        raise DimensionError(f"at least 2 observations required, got {polar.n}")
    if m2 is None:
        pairs = pairs or compute_pair_sums(polar, bw.h, bw.radial_kernel, (bw.kappa,))
        index = pairs.kappas.index(bw.kappa)
        m2 = 2.0 * math.fsum(pairs.lower_kl[index]) / (polar.n * (polar.n - 1.0) * pairs.c1[index] * bw.h)
    return max(0.0, plug_in_prefactor(polar.n, polar.p, bw) * m2)


def leave_one_out_estimates(pairs: PairSums, weights: Sequence[float]) -> np.ndarray:
    """M̂²_(n-1)(-i) = 2 (S - R_i) / ((n-1)(n-2)) from the row sums of H"""
    n = pairs.n
    lower, full = pairs.h_rows(weights)
    total = math.fsum(lower)
    return 2.0 * (total - full) / ((n - 1.0) * (n - 2.0))


def pseudovalues_degenerate(pseudovalues: np.ndarray, rtol: float = DEGENERATE_RTOL) -> bool:
    """True when every pseudovalue equals their mean up to rtol times the largest magnitude"""
    scale = float(np.max(np.abs(pseudovalues)))
    if scale == 0.0:
        return True
    return bool(np.allclose(pseudovalues, np.mean(pseudovalues), rtol=0.0, atol=rtol * scale))


def plug_in_only(polar: PolarSample, bw: Bandwidths, pairs: Optional[PairSums] = None) -> VarianceEstimates:
    """ŝ² alone, for samples too small to jackknife; sigma_hat² is NaN"""
    return VarianceEstimates(
        s_hat_sq=plug_in_variance(polar, bw, pairs=pairs),
        sigma_hat_sq=math.nan,
        pseudovalues=np.empty(0),
        jackknife_mean=math.nan,
    )


def jackknife(polar: PolarSample, bw: Bandwidths, pairs: Optional[PairSums] = None,
              bias_reduce: bool = False, threads: int = 1) -> VarianceEstimates:
    """Jackknife pseudovalues and sigma_hat², with ŝ² alongside

    Leave-one-out values come from row sums, O(n²) in total.
    """
    n = polar.n
    if n < 3:
        raise DimensionError(f"jackknife needs at least 3 observations, got {n}")

    if bias_reduce:
        weights = list(bias_reduction_weights(bw.bias_reduction_a))
        pairs = pairs or bias_reduced_pair_sums(polar, bw, threads=threads)
    else:
        pairs = pairs or compute_pair_sums(polar, bw.h, bw.radial_kernel, (bw.kappa,), threads=threads)
        weights = [1.0 if k == bw.kappa else 0.0 for k in pairs.kappas]

    lower, _ = pairs.h_rows(weights)
    full_estimate = 2.0 * math.fsum(lower) / (n * (n - 1.0))
    loo = leave_one_out_estimates(pairs, weights)
    pseudovalues = n * full_estimate - (n - 1.0) * loo
    mean = float(np.mean(pseudovalues))
    sigma_hat_sq = float(np.sum((pseudovalues - mean) ** 2) / (4.0 * (n - 1.0)))

    degenerate = pseudovalues_degenerate(pseudovalues)
    if degenerate:
        sigma_hat_sq = 0.0
        logger.warning("all %d jackknife pseudovalues coincide; variance estimate is zero", n)
        warnings.warn("jackknife pseudovalues are all equal", DegenerateSampleWarning, stacklevel=2)

    pseudovalues.setflags(write=False)
    return VarianceEstimates(
        s_hat_sq=plug_in_variance(polar, bw, pairs=pairs),
        sigma_hat_sq=sigma_hat_sq,
        pseudovalues=pseudovalues,
        jackknife_mean=mean,
        degenerate=degenerate,
    )
