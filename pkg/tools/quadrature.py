import itertools
import logging
from functools import lru_cache
from typing import Callable, Iterator, List, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, roots_gegenbauer, roots_legendre

from errors import ConfigError

logger = logging.getLogger(__name__)

PANEL_NODES = 64

LogIntegrand = Callable[[np.ndarray], np.ndarray]


@lru_cache(maxsize=32)
def gauss_legendre(n_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1]"""
    if n_nodes < 2:
        raise ConfigError("At least 2 nodes required for Gauss-Legendre quadrature")
    nodes, weights = roots_legendre(n_nodes)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=32)
def gauss_gegenbauer(n_nodes: int, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for the weight (1 - x^2)^(alpha - 1/2) on [-1, 1]"""
    if n_nodes < 2:
        raise ConfigError("At least 2 nodes required for Gauss-Gegenbauer quadrature")
    nodes, weights = roots_gegenbauer(n_nodes, alpha)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def integrate_panels(func: Callable[[np.ndarray], np.ndarray], edges: Sequence[float],
                     n_nodes: int = PANEL_NODES) -> float:
    """Composite Gauss-Legendre rule over consecutive panels [edges[i], edges[i+1]]"""
    nodes, weights = gauss_legendre(n_nodes)
    total = []
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        x = 0.5 * (a + b) + half * nodes
        total.append(half * float(np.dot(weights, func(x))))
    return float(np.sum(total))


def _log_panel(log_f: LogIntegrand, a: float, b: float, n_nodes: int) -> float:
    nodes, weights = gauss_legendre(n_nodes)
    half = 0.5 * (b - a)
    x = 0.5 * (a + b) + half * nodes
    with np.errstate(divide="ignore"):
        values = log_f(x) + np.log(weights * half)
        return float(logsumexp(values))


def _relative_gap(coarse: float, fine: float, log_scale: float) -> float:
    if coarse == -np.inf and fine == -np.inf:
        return 0.0
    return abs(np.exp(fine - log_scale) - np.exp(coarse - log_scale))


def log_adaptive_gauss_legendre(log_f: LogIntegrand, edges: Sequence[float], rtol: float = 1e-10,
                                n_nodes: int = PANEL_NODES, max_depth: int = 40) -> float:
    """Log of the integral of exp(log_f) over [edges[0], edges[-1]]

    Each panel is bisected until the halves agree with the parent estimate to
    rtol relative to the whole integral, shared across panels by length.
    All arithmetic stays in log space, so integrands far beyond the range of
    double exponentials are handled by the max-shift inside logsumexp.
    """
    edges = [float(e) for e in edges]
    length = edges[-1] - edges[0]
    coarse = [_log_panel(log_f, a, b, n_nodes) for a, b in zip(edges[:-1], edges[1:])]
    log_total = float(logsumexp(coarse)) if coarse else -np.inf
    if log_total == -np.inf:
        return -np.inf

    accepted: List[float] = []
    unresolved = 0
    stack = [(a, b, est, 0) for (a, b), est in zip(zip(edges[:-1], edges[1:]), coarse)]
    while stack:
        a, b, estimate, depth = stack.pop()
        mid = 0.5 * (a + b)
        left = _log_panel(log_f, a, mid, n_nodes)
        right = _log_panel(log_f, mid, b, n_nodes)
        refined = float(np.logaddexp(left, right))
        gap = _relative_gap(estimate, refined, log_total)
        if gap <= rtol * (b - a) / length:
            accepted.append(refined)
        elif depth >= max_depth:
            unresolved += 1
            accepted.append(refined)
        else:
            stack.append((a, mid, left, depth + 1))
            stack.append((mid, b, right, depth + 1))

    if unresolved:
        logger.warning("adaptive quadrature left %d panels above tolerance %.1e", unresolved, rtol)
    return float(logsumexp(accepted))


def concentrated_edges(width: float, upper: float) -> List[float]:
    """Panel edges on [0, upper] doubling away from 0 starting at width"""
    if width <= 0 or width >= upper / 4:
        return [0.0, 0.5 * upper, upper]
    edges = [0.0]
    edge = width
    while edge < upper:
        edges.append(edge)
        edge *= 2.0
    edges.append(upper)
    return edges


def _circle_rule(n_azimuth: int) -> Tuple[np.ndarray, np.ndarray]:
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    nodes = np.column_stack([np.cos(phi), np.sin(phi)])
    weights = np.full(n_azimuth, 2.0 * np.pi / n_azimuth)
    return nodes, weights


def _lift(nodes: np.ndarray, weights: np.ndarray, x: float, wx: float) -> Tuple[np.ndarray, np.ndarray]:
    radius = np.sqrt(1.0 - x * x)
    lifted = np.column_stack([radius * nodes, np.full(len(nodes), x)])
    return lifted, weights * wx


def _sphere2_rule(n_polar: int, n_azimuth: int) -> Tuple[np.ndarray, np.ndarray]:
    circle_nodes, circle_weights = _circle_rule(n_azimuth)
    x, wx = gauss_gegenbauer(n_polar, 0.5)
    blocks = [_lift(circle_nodes, circle_weights, xi, wi) for xi, wi in zip(x, wx)]
    return np.vstack([b[0] for b in blocks]), np.concatenate([b[1] for b in blocks])


def spherical_rule_blocks(p: int, n_polar: int = 64, n_azimuth: int = 128) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Product rule on the unit sphere S^(p-1), yielded in blocks

    p = 2 is the trapezoid rule on the circle; p = 3 is Gauss-Legendre in the
    polar cosine times the trapezoid rule in azimuth; every further dimension
    adds a Gauss-Gegenbauer factor for the weight (1 - x^2)^((d-3)/2). The
    weights of all blocks sum to the surface area of the sphere.
    """
    if p < 2:
        raise ConfigError(f"spherical rule needs p >= 2, got {p}")
    if p == 2:
        yield _circle_rule(n_azimuth)
        return
    base_nodes, base_weights = _sphere2_rule(n_polar, n_azimuth)
    if p == 3:
        yield base_nodes, base_weights
        return
    outer = [gauss_gegenbauer(n_polar, (d - 2) / 2.0) for d in range(4, p + 1)]
    for combo in itertools.product(range(n_polar), repeat=len(outer)):
        nodes, weights = base_nodes, base_weights
        for (x, wx), idx in zip(outer, combo):
            nodes, weights = _lift(nodes, weights, x[idx], wx[idx])
        yield nodes, weights


def spherical_rule(p: int, n_polar: int = 64, n_azimuth: int = 128) -> Tuple[np.ndarray, np.ndarray]:
    """Whole product rule as one node matrix (small rules only)"""
    blocks = list(spherical_rule_blocks(p, n_polar, n_azimuth))
    return np.vstack([b[0] for b in blocks]), np.concatenate([b[1] for b in blocks])
