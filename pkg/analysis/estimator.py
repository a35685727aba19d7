"""
U-statistic estimation of the minimum distance M² to spherical symmetry.

With U = |Y| and V = Y/|Y| the order-2 kernel is

    H(Y_i, Y_j) = K((U_i - U_j)/h) * (L(kappa V_i'V_j)/c_1(kappa) - 1/omega_(p-1)) / h

and M̂²_n is its average over pairs. All pair work goes through row sums
(`PairSums`), from which the sequential path, the jackknife leave-one-out
values and the bias-reduced combination are linear functions.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, DimensionError, ParseError, ZeroVectorError
from tools.kernels import (
    KernelKind,
    RadialKernel,
    SphericalKernelParams,
    c_one,
    eval_langevin_log,
    log_langevin_normalizer,
    surface_area,
)

logger = logging.getLogger(__name__)

ZERO_NORM = 1e-300
ROW_BLOCK = 256

DEFAULT_KERNEL = RadialKernel(KernelKind.JACKKNIFE_CORRECTED, KernelKind.EPANECHNIKOV)


@dataclass(frozen=True)
class Sample:
    """n x p data matrix, one observation per row"""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 2:
            raise DimensionError(f"sample must be a 2-d matrix, got {data.ndim} dimensions")
        n, p = data.shape
        if p < 2:
            raise DimensionError(f"dimension p must be at least 2, got {p}")
        if n < 2:
            raise DimensionError(f"at least 2 observations required, got {n}")
        bad = np.argwhere(~np.isfinite(data))
        if len(bad):
            row, col = bad[0]
            raise ParseError("non-finite value", row=int(row) + 1, column=int(col) + 1)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PolarSample:
    u: np.ndarray
    v: np.ndarray

    @property
    def n(self) -> int:
        return len(self.u)

    @property
    def p(self) -> int:
        return self.v.shape[1]

    def subset(self, indices: Sequence[int]) -> "PolarSample":
        """Rows in the given order (prefixes, deletions, permutations)"""
        idx = np.asarray(indices, dtype=int)
        return PolarSample(u=self.u[idx], v=self.v[idx])


def polar_decompose(sample: Sample) -> PolarSample:
    """U_i = |Y_i| and V_i = Y_i / U_i"""
    u = np.linalg.norm(sample.data, axis=1)
    zero_rows = np.flatnonzero(u < ZERO_NORM)
    if len(zero_rows):
        raise ZeroVectorError(int(zero_rows[0]) + 1)
    v = sample.data / u[:, None]
    u.setflags(write=False)
    v.setflags(write=False)
    return PolarSample(u=u, v=v)


@dataclass(frozen=True)
class Bandwidths:
    h: float
    kappa: float
    bias_reduction_a: Optional[float] = None
    radial_kernel: RadialKernel = DEFAULT_KERNEL

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ConfigError(f"radial bandwidth h must be positive, got {self.h}")
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ConfigError(f"concentration kappa must be positive, got {self.kappa}")
        if self.bias_reduction_a is not None and not 0.0 < self.bias_reduction_a < 1.0:
            raise ConfigError(f"bias reduction factor a must lie in (0, 1), got {self.bias_reduction_a}")
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "kappa", float(self.kappa))

    def spherical_params(self, p: int) -> SphericalKernelParams:
        return SphericalKernelParams(self.kappa, p)

    def as_dict(self) -> Dict:
        return {
            "h": self.h,
            "kappa": self.kappa,
            "bias_reduction_a": self.bias_reduction_a,
            "radial_kernel": self.radial_kernel.name,
        }


@dataclass(frozen=True)
class MsqEstimate:
    msq: float
    sequential: np.ndarray
    m1: float
    m2: float
    bandwidths: Bandwidths
    bias_reduced: bool = False

    @property
    def n(self) -> int:
        return len(self.sequential) + 1

    def path_at(self, k: int) -> float:
        """M̂²_k for 2 <= k <= n"""
        if not 2 <= k <= self.n:
            raise ConfigError(f"path index must lie in [2, {self.n}], got {k}")
        return float(self.sequential[k - 2])

    def as_dict(self, include_path: bool = False) -> Dict:
        result = {
            "msq": self.msq,
            "m1": self.m1,
            "m2": self.m2,
            "n": self.n,
            "bias_reduced": self.bias_reduced,
            "bandwidths": self.bandwidths.as_dict(),
        }
        if include_path:
            result["sequential"] = [float(x) for x in self.sequential]
        return result


@dataclass(frozen=True)
class PairSums:
    """Row sums of the radial and joint pair kernels

    lower_* sum over j < i, full_* over j != i. The joint sums carry one row
    per concentration in `kappas`; `c1` holds the matching c_1(kappa).
    """

    h: float
    p: int
    lower_k: np.ndarray
    full_k: np.ndarray
    kappas: Tuple[float, ...] = ()
    c1: Tuple[float, ...] = ()
    lower_kl: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    full_kl: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n(self) -> int:
        return len(self.lower_k)

    def _joint(self, rows: np.ndarray, weights: Sequence[float]) -> np.ndarray:
        total = np.zeros(self.n)
        for weight, c1, row in zip(weights, self.c1, rows):
            total = total + weight * row / c1
        return total

    def h_rows(self, weights: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and full row sums of H for an affine combination over kappas"""
        if len(weights) != len(self.kappas):
            raise ConfigError("one weight per concentration required")
        omega = surface_area(self.p)
        mass = float(np.sum(weights))
        lower = (self._joint(self.lower_kl, weights) - mass * self.lower_k / omega) / self.h
        full = (self._joint(self.full_kl, weights) - mass * self.full_k / omega) / self.h
        return lower, full


def _row_block(polar: PolarSample, h: float, kernel: RadialKernel, kappas: Sequence[float],
               log_norms: Sequence[float], start: int, stop: int):
    rows = np.arange(start, stop)
    cols = np.arange(polar.n)
    radial = kernel((polar.u[rows, None] - polar.u[None, :]) / h)
    radial[rows - start, rows] = 0.0
    below = cols[None, :] < rows[:, None]
    lower_k = np.where(below, radial, 0.0).sum(axis=1)
    full_k = radial.sum(axis=1)

    lower_kl = np.zeros((len(kappas), len(rows)))
    full_kl = np.zeros((len(kappas), len(rows)))
    if len(kappas):
        gram = np.clip(polar.v[rows] @ polar.v.T, -1.0, 1.0)
        for m, (kappa, log_norm) in enumerate(zip(kappas, log_norms)):
            joint = radial * np.exp(log_norm + kappa * gram)
            lower_kl[m] = np.where(below, joint, 0.0).sum(axis=1)
            full_kl[m] = joint.sum(axis=1)
    return lower_k, full_k, lower_kl, full_kl


def compute_pair_sums(polar: PolarSample, h: float, kernel: RadialKernel = DEFAULT_KERNEL,
                      kappas: Sequence[float] = (), threads: int = 1, block: int = ROW_BLOCK) -> PairSums:
    """All O(n²) kernel work, in fixed row blocks combined in block order

    The partition into blocks does not depend on the worker count, so results
    are identical for any number of threads.
    """
    if polar.n < 2:
        raise DimensionError(f"at least 2 observations required, got {polar.n}")
    if not h > 0:
        raise ConfigError(f"radial bandwidth h must be positive, got {h}")
    kappas = tuple(float(k) for k in kappas)
    log_norms = [log_langevin_normalizer(polar.p, k) for k in kappas]
    c1 = tuple(c_one(polar.p, k) for k in kappas)
    bounds = [(start, min(start + block, polar.n)) for start in range(0, polar.n, block)]

    def work(bound):
        return _row_block(polar, h, kernel, kappas, log_norms, *bound)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            parts: List = list(executor.map(work, bounds))
    else:
        parts = [work(bound) for bound in bounds]

    return PairSums(
        h=float(h),
        p=polar.p,
        lower_k=np.concatenate([part[0] for part in parts]),
        full_k=np.concatenate([part[1] for part in parts]),
        kappas=kappas,
        c1=c1,
        lower_kl=np.concatenate([part[2] for part in parts], axis=1),
        full_kl=np.concatenate([part[3] for part in parts], axis=1),
    )


def compensated_cumsum(values: np.ndarray) -> np.ndarray:
    """Running sums with Neumaier compensation"""
    out = np.empty(len(values))
    total = 0.0
    compensation = 0.0
    for i, x in enumerate(np.asarray(values, dtype=float).tolist()):
        t = total + x
        if abs(total) >= abs(x):
            compensation += (total - t) + x
        else:
            compensation += (x - t) + total
        total = t
        out[i] = total + compensation
    return out


def sequential_from_rows(lower_rows: np.ndarray) -> np.ndarray:
    """M̂²_k = 2 S_k / (k(k-1)) for k = 2..n from the lower row sums of H"""
    running = compensated_cumsum(lower_rows)
    k = np.arange(2, len(lower_rows) + 1, dtype=float)
    return 2.0 * running[1:] / (k * (k - 1.0))


def kernel_h(ui: float, uj: float, vi: np.ndarray, vj: np.ndarray, bw: Bandwidths) -> float:
    """Pair kernel H for one pair of observations"""
    radial = float(bw.radial_kernel((ui - uj) / bw.h))
    if radial == 0.0:
        return 0.0
    p = len(vi)
    t = float(np.clip(np.dot(vi, vj), -1.0, 1.0))
    langevin = math.exp(eval_langevin_log(bw.spherical_params(p), t))
    return radial * (langevin / c_one(p, bw.kappa) - 1.0 / surface_area(p)) / bw.h


def _pair_mean(row_total: float, n: int) -> float:
    return 2.0 * row_total / (n * (n - 1.0))


def estimate_m1(polar: PolarSample, h: float, kernel: RadialKernel = DEFAULT_KERNEL) -> float:
    """Integrated squared density of U, (1/(n(n-1)h)) sum over i != j of K((U_i - U_j)/h)"""
    pairs = compute_pair_sums(polar, h, kernel)
    return _pair_mean(math.fsum(pairs.lower_k), polar.n) / h


def estimate_m2(polar: PolarSample, bw: Bandwidths) -> float:
    pairs = compute_pair_sums(polar, bw.h, bw.radial_kernel, (bw.kappa,))
    return _pair_mean(math.fsum(pairs.lower_kl[0]), polar.n) / (pairs.c1[0] * bw.h)


def estimate_from_pairs(pairs: PairSums, bw: Bandwidths, weights: Sequence[float],
                        bias_reduced: bool = False) -> MsqEstimate:
    """Point estimate and sequential path for an affine combination over pairs.kappas"""
    n = pairs.n
    lower, _ = pairs.h_rows(weights)
    sequential = sequential_from_rows(lower)
    mass = float(np.sum(weights))
    m1 = mass * _pair_mean(math.fsum(pairs.lower_k), n) / pairs.h
    m2 = math.fsum(w * math.fsum(row) / c1 for w, row, c1 in zip(weights, pairs.lower_kl, pairs.c1))
    m2 = _pair_mean(m2, n) / pairs.h
    sequential.setflags(write=False)
    return MsqEstimate(
        msq=float(sequential[-1]),
        sequential=sequential,
        m1=m1,
        m2=m2,
        bandwidths=bw,
        bias_reduced=bias_reduced,
    )


def estimate_msq(polar: PolarSample, bw: Bandwidths, threads: int = 1,
                 pairs: Optional[PairSums] = None) -> MsqEstimate:
    """M̂²_n with its full path M̂²_k, k = 2..n"""
    pairs = pairs or compute_pair_sums(polar, bw.h, bw.radial_kernel, (bw.kappa,), threads=threads)
    return estimate_from_pairs(pairs, bw, weights=_single_weights(pairs, bw.kappa))


def _single_weights(pairs: PairSums, kappa: float) -> List[float]:
    return [1.0 if k == kappa else 0.0 for k in pairs.kappas]


def bias_reduction_weights(a: float) -> Tuple[float, float]:
    """Weights of M̂²(kappa) and M̂²(a kappa); they sum to 1"""
    if a is None or not 0.0 < a < 1.0:
        raise ConfigError(f"bias reduction factor a must lie in (0, 1), got {a}")
    return 1.0 / (1.0 - a), -a / (1.0 - a)


def bias_reduced_pair_sums(polar: PolarSample, bw: Bandwidths, threads: int = 1) -> PairSums:
    bias_reduction_weights(bw.bias_reduction_a)
    return compute_pair_sums(polar, bw.h, bw.radial_kernel, (bw.kappa, bw.bias_reduction_a * bw.kappa),
                             threads=threads)


def estimate_msq_bias_reduced(polar: PolarSample, bw: Bandwidths, threads: int = 1,
                              pairs: Optional[PairSums] = None) -> MsqEstimate:
    """(1/(1-a)) M̂²(kappa) - (a/(1-a)) M̂²(a kappa), pointwise along the path"""
    w_kappa, w_scaled = bias_reduction_weights(bw.bias_reduction_a)
    pairs = pairs or bias_reduced_pair_sums(polar, bw, threads=threads)
    at_kappa = estimate_from_pairs(pairs, bw, weights=(1.0, 0.0))
    at_scaled = estimate_from_pairs(pairs, bw, weights=(0.0, 1.0))
    sequential = w_kappa * at_kappa.sequential + w_scaled * at_scaled.sequential
    sequential.setflags(write=False)
    return MsqEstimate(
        msq=float(sequential[-1]),
        sequential=sequential,
        m1=w_kappa * at_kappa.m1 + w_scaled * at_scaled.m1,
        m2=w_kappa * at_kappa.m2 + w_scaled * at_scaled.m2,
        bandwidths=bw,
        bias_reduced=True,
    )


def sequential_process(estimate: MsqEstimate) -> np.ndarray:
    """S_n(k/n) = k/(2 sqrt(n)) * (M̂²_k - M̂²_n) for k = 2..n"""
    n = estimate.n
    k = np.arange(2, n + 1, dtype=float)
    return k / (2.0 * math.sqrt(n)) * (estimate.sequential - estimate.msq)
