"""
Reference value of M² for Gaussian models, computed without the kernel estimator.

With f(u, v) = f_Y(u v) u^(p-1) the measure splits into

    M² = E[f_Y(Y) |Y|^(p-1)] - E[f_U(|Y|)] / omega_(p-1),

where f_U(u) = u^(p-1) * integral over the sphere of f_Y(u v). Both
expectations are Monte Carlo averages over exact Gaussian draws; f_U comes
from a spherical product rule on a grid of radii, interpolated by a cubic
spline.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import cho_solve
from scipy.stats import multivariate_normal

from config import Config
from errors import QuadratureBudgetError
from simulation.models import ModelSpec, as_generator
from tools.kernels import surface_area
from tools.quadrature import spherical_rule_blocks

logger = logging.getLogger(__name__)

DEFAULT_DRAWS = 200_000
GRID_POINTS = 257
SELF_CHECK_TOL = 1e-6
PROBE_LEVELS = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class OracleResult:
    msq: float
    standard_error: float
    joint_term: float
    marginal_term: float
    draws: int
    seed: int
    nodes: Tuple[int, int]

    def as_dict(self) -> Dict:
        return {
            "msq": self.msq,
            "standard_error": self.standard_error,
            "joint_term": self.joint_term,
            "marginal_term": self.marginal_term,
            "draws": self.draws,
            "seed": self.seed,
            "nodes": list(self.nodes),
        }


def default_nodes(p: int) -> Tuple[int, int]:
    """(polar, azimuth) node counts of the spherical rule"""
    if p <= 3:
        return 64, 128
    return 32, 64


def radial_density(spec: ModelSpec, u: np.ndarray, n_polar: Optional[int] = None,
                   n_azimuth: Optional[int] = None) -> np.ndarray:
    """f_U(u) = u^(p-1) * sphere integral of the N(mu, sigma) density at u v"""
    default_polar, default_azimuth = default_nodes(spec.p)
    n_polar = n_polar or default_polar
    n_azimuth = n_azimuth or default_azimuth
    u = np.atleast_1d(np.asarray(u, dtype=float))
    p = spec.p

    factor = spec.cholesky_factor
    precision = cho_solve((factor, True), np.eye(p))
    shift = precision @ spec.mu
    offset = float(spec.mu @ shift)
    log_const = -0.5 * p * math.log(2.0 * math.pi) - float(np.sum(np.log(np.diag(factor))))

    total = np.zeros(len(u))
    for nodes, weights in spherical_rule_blocks(p, n_polar, n_azimuth):
        quadratic = np.einsum("ij,jk,ik->i", nodes, precision, nodes)
        linear = nodes @ shift
        exponent = log_const - 0.5 * (u[:, None] ** 2 * quadratic[None, :] - 2.0 * u[:, None] * linear[None, :] + offset)
        total += np.exp(exponent) @ weights
    return u ** (p - 1) * total


def check_spherical_rule(spec: ModelSpec, probes: np.ndarray, n_polar: int, n_azimuth: int) -> float:
    """Largest change of f_U at the probes when every node count is doubled"""
    base = radial_density(spec, probes, n_polar, n_azimuth)
    refined = radial_density(spec, probes, 2 * n_polar, 2 * n_azimuth)
    change = float(np.max(np.abs(refined - base)))
    if change > SELF_CHECK_TOL:
        raise QuadratureBudgetError(
            f"spherical rule ({n_polar} x {n_azimuth}) changes f_U by {change:.3e} under refinement"
        )
    return change


def oracle_msq(spec: ModelSpec, mc_draws: int = DEFAULT_DRAWS, seed: Optional[int] = None,
               n_polar: Optional[int] = None, n_azimuth: Optional[int] = None,
               grid_points: int = GRID_POINTS) -> OracleResult:
    seed = Config.SEED if seed is None else int(seed)
    default_polar, default_azimuth = default_nodes(spec.p)
    n_polar = n_polar or default_polar
    n_azimuth = n_azimuth or default_azimuth
    p = spec.p

    rng = as_generator(seed)
    draws = spec.mu + rng.standard_normal((mc_draws, p)) @ spec.cholesky_factor.T
    radii = np.linalg.norm(draws, axis=1)
    joint = np.exp(multivariate_normal(mean=spec.mu, cov=spec.sigma).logpdf(draws)) * radii ** (p - 1)

    probes = np.quantile(radii, PROBE_LEVELS)
    change = check_spherical_rule(spec, probes, n_polar, n_azimuth)
    logger.info("spherical rule self-check passed, max change %.2e", change)

    grid = np.linspace(0.0, float(radii.max()) * 1.0001, grid_points)
    spline = CubicSpline(grid, radial_density(spec, grid, n_polar, n_azimuth))
    spline_gap = float(np.max(np.abs(spline(probes) - radial_density(spec, probes, n_polar, n_azimuth))))
    if spline_gap > SELF_CHECK_TOL:
        logger.warning("radial density spline deviates by %.2e at the probes", spline_gap)
    marginal = spline(radii)

    omega = surface_area(p)
    contributions = joint - marginal / omega
    result = OracleResult(
        msq=float(np.mean(contributions)),
        standard_error=float(np.std(contributions, ddof=1) / math.sqrt(mc_draws)),
        joint_term=float(np.mean(joint)),
        marginal_term=float(np.mean(marginal)),
        draws=mc_draws,
        seed=seed,
        nodes=(n_polar, n_azimuth),
    )
    logger.info("oracle M² for %s: %.6f (se %.2e)", spec.name, result.msq, result.standard_error)
    return result


def reference_msq(spec: ModelSpec, mc_draws: int = DEFAULT_DRAWS, seed: Optional[int] = None) -> float:
    """Exact zero for spherical models, the oracle value otherwise"""
    if np.allclose(spec.mu, 0.0) and np.allclose(spec.sigma, spec.sigma[0, 0] * np.eye(spec.p)):
        return 0.0
    return oracle_msq(spec, mc_draws=mc_draws, seed=seed).msq
