"""
Radial and spherical smoothing kernels.

The radial kernels are compactly supported on (-1, 1). The spherical kernel is
the Langevin (von Mises-Fisher) density on S^(p-1),

    L(kappa t) = kappa^(p/2-1) / ((2 pi)^(p/2) I_(p/2-1)(kappa)) * exp(kappa t),

always handled through its logarithm since exp(kappa) overflows for kappa
beyond about 710.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.special import gammaln, logsumexp

from errors import ConfigError
from tools.quadrature import concentrated_edges, integrate_panels, log_adaptive_gauss_legendre

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

SERIES_CUTOFF = 50.0
DOMAIN_SLACK = 1e-9
C_ONE_SELF_CHECK = 1e-6

# Breakpoints where the corrected kernel changes polynomial piece
_RADIAL_EDGES = (-1.0, -1.0 / math.sqrt(2.0), 0.0, 1.0 / math.sqrt(2.0), 1.0)


class KernelKind(str, Enum):
    EPANECHNIKOV = "epanechnikov"
    BIWEIGHT = "biweight"
    TRIWEIGHT = "triweight"
    JACKKNIFE_CORRECTED = "jackknife_corrected"


# K(u) = scale * (1 - u^2)^power on (-1, 1)
_BASE_SHAPES = {
    KernelKind.EPANECHNIKOV: (0.75, 1),
    KernelKind.BIWEIGHT: (15.0 / 16.0, 2),
    KernelKind.TRIWEIGHT: (35.0 / 32.0, 3),
}


@dataclass(frozen=True)
class KernelMoments:
    psi_2: float
    psi_4: float
    phi_2: float

    def as_dict(self):
        return {"psi_2": self.psi_2, "psi_4": self.psi_4, "phi_2": self.phi_2}


_CLOSED_FORM_MOMENTS = {
    KernelKind.EPANECHNIKOV: KernelMoments(psi_2=3.0 / 5.0, psi_4=9.0 / 35.0, phi_2=1.0 / 5.0),
    KernelKind.BIWEIGHT: KernelMoments(psi_2=5.0 / 7.0, psi_4=1125.0 / 2431.0, phi_2=1.0 / 7.0),
}


@dataclass(frozen=True)
class RadialKernel:
    """Symmetric radial kernel, optionally with the jackknife bias correction

    The corrected kernel 2*sqrt(2)*K(sqrt(2)u) - K(u) has vanishing second
    moment and can take negative values.
    """

    kind: KernelKind = KernelKind.EPANECHNIKOV
    base: KernelKind = KernelKind.EPANECHNIKOV

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        object.__setattr__(self, "base", KernelKind(self.base))
        if self.base not in _BASE_SHAPES:
            raise ConfigError(f"base kernel must be one of {sorted(k.value for k in _BASE_SHAPES)}")
        if self.kind != KernelKind.JACKKNIFE_CORRECTED and self.kind != self.base:
            object.__setattr__(self, "base", self.kind)

    @classmethod
    def from_name(cls, name: str) -> "RadialKernel":
        """Parse names like 'epanechnikov', 'biweight', 'jackknife' or 'jackknife-biweight'"""
        key = name.strip().lower().replace("_", "-")
        if key.startswith("jackknife"):
            base = key.partition("-")[2] or KernelKind.EPANECHNIKOV.value
            if base == "corrected":
                base = KernelKind.EPANECHNIKOV.value
            try:
                return cls(KernelKind.JACKKNIFE_CORRECTED, KernelKind(base))
            except ValueError:
                raise ConfigError(f"unknown base kernel '{base}'")
        try:
            kind = KernelKind(key)
        except ValueError:
            raise ConfigError(f"unknown radial kernel '{name}'")
        return cls(kind, kind)

    @property
    def corrected(self) -> bool:
        return self.kind == KernelKind.JACKKNIFE_CORRECTED

    @property
    def name(self) -> str:
        if self.corrected:
            return f"jackknife-{self.base.value}"
        return self.base.value

    def __call__(self, u: ArrayLike) -> ArrayLike:
        return eval_radial(self, u)


def _eval_base(base: KernelKind, u: np.ndarray) -> np.ndarray:
    scale, power = _BASE_SHAPES[base]
    inside = 1.0 - u * u
    return np.where(np.abs(u) < 1.0, scale * np.power(np.clip(inside, 0.0, None), power), 0.0)


def eval_radial(kernel: RadialKernel, u: ArrayLike) -> ArrayLike:
    """Evaluate K(u) (or the corrected K~(u)); zero outside (-1, 1)"""
    scalar = np.isscalar(u)
    x = np.asarray(u, dtype=float)
    if kernel.corrected:
        values = 2.0 * math.sqrt(2.0) * _eval_base(kernel.base, math.sqrt(2.0) * x) - _eval_base(kernel.base, x)
    else:
        values = _eval_base(kernel.base, x)
    return float(values) if scalar else values


def kernel_integral(kernel: RadialKernel, power: int = 1, moment: int = 0) -> float:
    """Integral of u^moment * K(u)^power over (-1, 1), exact for the polynomial pieces"""
    return integrate_panels(lambda x: x ** moment * eval_radial(kernel, x) ** power, _RADIAL_EDGES)


def kernel_moments(kernel: RadialKernel) -> KernelMoments:
    if not kernel.corrected and kernel.base in _CLOSED_FORM_MOMENTS:
        return _CLOSED_FORM_MOMENTS[kernel.base]
    return KernelMoments(
        psi_2=kernel_integral(kernel, power=2),
        psi_4=kernel_integral(kernel, power=4),
        phi_2=kernel_integral(kernel, moment=2),
    )


def _log_bessel_series(nu: float, kappa: float) -> float:
    n_terms = int(kappa + 10.0 * math.sqrt(kappa) + 40)
    m = np.arange(n_terms, dtype=float)
    log_terms = (2.0 * m + nu) * math.log(kappa / 2.0) - gammaln(m + 1.0) - gammaln(m + nu + 1.0)
    return float(logsumexp(log_terms))


def _log_bessel_asymptotic(nu: float, kappa: float) -> float:
    mu = 4.0 * nu * nu
    total = 1.0
    term = 1.0
    for k in range(1, 200):
        step = -(mu - (2 * k - 1) ** 2) / (k * 8.0 * kappa)
        if abs(step) >= 1.0:
            # terms start growing: the series is asymptotic, stop at the smallest term
            break
        term *= step
        total += term
        if abs(term) < 1e-17 * abs(total):
            break
    return kappa - 0.5 * math.log(2.0 * math.pi * kappa) + math.log(total)


def log_bessel_i(nu: float, kappa: float) -> float:
    """log I_nu(kappa) for real order nu >= 0 and kappa > 0

    Power series summed with logsumexp up to kappa = 50 (and whenever the
    order dominates, kappa <= nu^2); Hankel's large-argument expansion beyond.
    """
    if not kappa > 0 or not math.isfinite(kappa):
        raise ConfigError(f"kappa must be positive and finite, got {kappa}")
    if nu < 0:
        raise ConfigError(f"order nu must be non-negative, got {nu}")
    if kappa <= SERIES_CUTOFF or kappa <= nu * nu:
        return _log_bessel_series(nu, kappa)
    return _log_bessel_asymptotic(nu, kappa)


@dataclass(frozen=True)
class SphericalKernelParams:
    kappa: float
    p: int

    def __post_init__(self):
        if not self.kappa > 0 or not math.isfinite(self.kappa):
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        if int(self.p) != self.p or self.p < 2:
            raise ConfigError(f"dimension p must be an integer >= 2, got {self.p}")
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "p", int(self.p))


def surface_area(p: int) -> float:
    """omega_(p-1) = 2 pi^(p/2) / Gamma(p/2), the area of the unit sphere in R^p"""
    if int(p) != p or p < 1:
        raise ConfigError(f"p must be an integer >= 1, got {p}")
    return math.exp(math.log(2.0) + 0.5 * p * math.log(math.pi) - gammaln(0.5 * p))


@lru_cache(maxsize=256)
def log_langevin_normalizer(p: int, kappa: float) -> float:
    """log of kappa^(p/2-1) / ((2 pi)^(p/2) I_(p/2-1)(kappa))"""
    return (0.5 * p - 1.0) * math.log(kappa) - 0.5 * p * math.log(2.0 * math.pi) - log_bessel_i(0.5 * p - 1.0, kappa)


def eval_langevin_log(params: SphericalKernelParams, t: ArrayLike) -> ArrayLike:
    """log L(kappa t), t clamped to [-1, 1] within a 1e-9 slack"""
    scalar = np.isscalar(t)
    x = np.asarray(t, dtype=float)
    if np.any(np.abs(x) > 1.0 + DOMAIN_SLACK) or not np.all(np.isfinite(x)):
        raise ConfigError("Langevin kernel argument t must lie in [-1, 1]")
    x = np.clip(x, -1.0, 1.0)
    values = log_langevin_normalizer(params.p, params.kappa) + params.kappa * x
    return float(values) if scalar else values


def _check_order(j: int):
    if int(j) != j or j < 1:
        raise ConfigError(f"integral order j must be an integer >= 1, got {j}")


def _sphere_weight(p: int, theta: np.ndarray) -> np.ndarray:
    if p == 2:
        return np.zeros_like(theta)
    with np.errstate(divide="ignore"):
        return (p - 2) * np.log(np.sin(theta))


def c_j_integral(j: int, params: SphericalKernelParams, rtol: float = 1e-8) -> float:
    """c_j(kappa) = omega_(p-2) * integral over [0, pi] of L^j(kappa cos t) sin^(p-2) t"""
    _check_order(j)
    p, kappa = params.p, params.kappa
    log_norm = log_langevin_normalizer(p, kappa)

    def log_integrand(theta):
        return j * (log_norm + kappa * np.cos(theta)) + _sphere_weight(p, theta)

    edges = concentrated_edges(1.0 / math.sqrt(j * kappa), math.pi)
    log_value = log_adaptive_gauss_legendre(log_integrand, edges, rtol=rtol)
    return surface_area(p - 1) * math.exp(log_value)


def b_j_integral(j: int, params: SphericalKernelParams, rtol: float = 1e-8) -> float:
    """b_j(kappa) = omega_(p-2) * integral over [0, pi] of L(kappa cos t) sin^(p-2) t * t^j"""
    _check_order(j)
    p, kappa = params.p, params.kappa
    log_norm = log_langevin_normalizer(p, kappa)

    def log_integrand(theta):
        with np.errstate(divide="ignore"):
            return log_norm + kappa * np.cos(theta) + _sphere_weight(p, theta) + j * np.log(theta)

    edges = concentrated_edges(1.0 / math.sqrt(kappa), math.pi)
    log_value = log_adaptive_gauss_legendre(log_integrand, edges, rtol=rtol)
    return surface_area(p - 1) * math.exp(log_value)


@lru_cache(maxsize=256)
def c_one(p: int, kappa: float) -> float:
    """Quadrature value of c_1(kappa), checked against its exact value 1"""
    value = c_j_integral(1, SphericalKernelParams(kappa, p))
    if abs(value - 1.0) > C_ONE_SELF_CHECK:
        logger.warning("c_1 quadrature for p=%d kappa=%.6g is %.12f, expected 1", p, kappa, value)
    return value


def lemma_b_rate(j: int, p: int, kappa: float) -> float:
    """Leading term a_j(p) kappa^(-j/2) of b_j(kappa) as kappa grows"""
    _check_order(j)
    log_a = 0.5 * j * math.log(2.0) + gammaln(0.5 * (p + j - 1)) - gammaln(0.5 * (p - 1))
    return math.exp(log_a - 0.5 * j * math.log(kappa))


def lemma_c_rate(j: int, p: int, kappa: float) -> float:
    """Leading term d_j(p) kappa^((j-1)(p-1)/2) of c_j(kappa) as kappa grows"""
    _check_order(j)
    half = 0.5 * (p - 1)
    log_d = (1 - j) * half * math.log(2.0) - half * math.log(j) + (1 - j) * half * math.log(math.pi)
    return math.exp(log_d + (j - 1) * half * math.log(kappa))


def langevin_power_ratio(j: int, p: int, kappa: float) -> float:
    """L^j(kappa t) / L(j kappa t); the exponentials cancel so it does not depend on t"""
    _check_order(j)
    return math.exp(j * log_langevin_normalizer(p, kappa) - log_langevin_normalizer(p, j * kappa))


def langevin_power_ratio_rate(j: int, p: int, kappa: float) -> float:
    """Large-kappa limit (kappa / 2 pi)^((j-1)(p-1)/2) * j^(-(p-1)/2) of langevin_power_ratio"""
    _check_order(j)
    half = 0.5 * (p - 1)
    return math.exp((j - 1) * half * math.log(kappa / (2.0 * math.pi)) - half * math.log(j))
