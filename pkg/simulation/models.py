"""
Data generating models: Gaussian, spherical Gaussian and the componentwise
AR(1) Gaussian model with matching marginals.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, Optional, Union

import numpy as np
from scipy.signal import lfilter

from analysis.estimator import ZERO_NORM, Sample
from errors import ConfigError, FactorizationError, NumericError

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]

BURN_IN = 500
MAX_RESAMPLE = 100


class ModelKind(str, Enum):
    GAUSSIAN = "gaussian"
    AR1_GAUSSIAN = "ar1_gaussian"
    SPHERICAL_GAUSSIAN = "spherical_gaussian"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    mu: np.ndarray
    sigma: np.ndarray
    rho: Optional[float] = None
    name: str = "custom"
    burn_in: int = BURN_IN
    reference_msq: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        mu = np.array(self.mu, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        if mu.ndim != 1 or sigma.shape != (len(mu), len(mu)):
            raise ConfigError(f"mean of length {len(mu)} does not match covariance of shape {sigma.shape}")
        if len(mu) < 2:
            raise ConfigError("models need dimension p >= 2")
        if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12):
            raise FactorizationError("covariance matrix is not symmetric")
        if self.kind == ModelKind.AR1_GAUSSIAN:
            if self.rho is None or not -1.0 < self.rho < 1.0:
                raise ConfigError(f"AR(1) coefficient must lie in (-1, 1), got {self.rho}")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        self.cholesky_factor  # factorizes or raises

    @property
    def p(self) -> int:
        return len(self.mu)

    @cached_property
    def cholesky_factor(self) -> np.ndarray:
        """Lower-triangular L with L L' = sigma"""
        try:
            factor = np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError:
            raise FactorizationError(f"covariance of model '{self.name}' is not positive definite")
        factor.setflags(write=False)
        return factor

    def with_rho(self, rho: float) -> "ModelSpec":
        return ModelSpec(ModelKind.AR1_GAUSSIAN, self.mu, self.sigma, rho=rho,
                         name=f"{self.name}-ar1", burn_in=self.burn_in, reference_msq=self.reference_msq)

    def as_dict(self) -> Dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "rho": self.rho,
            "burn_in": self.burn_in if self.kind == ModelKind.AR1_GAUSSIAN else None,
            "stationary_start": self.kind == ModelKind.AR1_GAUSSIAN,
        }


def model1() -> ModelSpec:
    sigma = 0.25 * np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return ModelSpec(ModelKind.GAUSSIAN, np.array([1.0, 0.0, 2.0]), sigma, name="model1", reference_msq=0.95)


def model2() -> ModelSpec:
    sigma = 0.25 * np.array([
        [1.0, 0.2, 0.0, 0.0, 0.0],
        [0.2, 1.0, 0.3, 0.0, 0.0],
        [0.0, 0.3, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.2],
        [0.0, 0.0, 0.0, 0.2, 1.0],
    ])
    return ModelSpec(ModelKind.GAUSSIAN, np.array([1.0, 0.0, 0.0, -2.0, 0.0]), sigma, name="model2",
                     reference_msq=1.97)


def ar1_model(rho: float = 0.3) -> ModelSpec:
    return model1().with_rho(rho)


def spherical_gaussian(p: int = 3) -> ModelSpec:
    return ModelSpec(ModelKind.SPHERICAL_GAUSSIAN, np.zeros(p), np.eye(p), name=f"spherical-p{p}",
                     reference_msq=0.0)


MODEL_PRESETS = {
    "model1": model1,
    "model2": model2,
    "ar1": ar1_model,
    "spherical-p2": lambda: spherical_gaussian(2),
    "spherical-p3": lambda: spherical_gaussian(3),
    "spherical-p5": lambda: spherical_gaussian(5),
}

# bandwidth preset matching each model
GRID_FOR_MODEL = {
    "model1": "model1-p3",
    "model1-ar1": "model1-p3",
    "model2": "model2-p5",
    "spherical-p2": "spherical-p2",
    "spherical-p3": "model1-p3",
    "spherical-p5": "model2-p5",
}


def get_model(name: str) -> ModelSpec:
    try:
        return MODEL_PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown model '{name}', choose from {sorted(MODEL_PRESETS)}")


def derive_rng(master: int, *keys: int) -> np.random.Generator:
    """Independent Philox stream for the key path (master, *keys)"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master, spawn_key=tuple(keys))))


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return derive_rng(int(seed))


def _zero_rows(data: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.linalg.norm(data, axis=1) < ZERO_NORM)


def gen_gaussian(spec: ModelSpec, n: int, seed: SeedLike) -> Sample:
    """Y = mu + L Z with L the lower Cholesky factor of sigma"""
    if n < 2:
        raise ConfigError(f"sample size must be at least 2, got {n}")
    rng = as_generator(seed)
    factor = spec.cholesky_factor
    data = spec.mu + rng.standard_normal((n, spec.p)) @ factor.T
    for _ in range(MAX_RESAMPLE):
        zero = _zero_rows(data)
        if not len(zero):
            break
        logger.warning("resampling %d zero observations", len(zero))
        data[zero] = spec.mu + rng.standard_normal((len(zero), spec.p)) @ factor.T
    return Sample(data)


def simulate_ar1_latent(rho: float, n: int, p: int, rng: np.random.Generator, burn_in: int = BURN_IN) -> np.ndarray:
    """Componentwise z_t = rho z_(t-1) + e_t started from N(0, 1/(1 - rho²))"""
    start = rng.standard_normal(p) / math.sqrt(1.0 - rho * rho)
    innovations = rng.standard_normal((burn_in + n, p))
    latent = lfilter([1.0], [1.0, -rho], innovations, axis=0, zi=(rho * start)[None, :])[0]
    return latent[burn_in:]


def gen_ar1(spec: ModelSpec, n: int, seed: SeedLike) -> Sample:
    """Y_i = mu + sqrt(1 - rho²) L z_i, so every Y_i has the N(mu, sigma) marginal"""
    if spec.rho is None:
        raise ConfigError("AR(1) generation needs rho")
    if n < 2:
        raise ConfigError(f"sample size must be at least 2, got {n}")
    rng = as_generator(seed)
    scale = math.sqrt(1.0 - spec.rho ** 2)
    for _ in range(MAX_RESAMPLE):
        latent = simulate_ar1_latent(spec.rho, n, spec.p, rng, spec.burn_in)
        data = spec.mu + scale * latent @ spec.cholesky_factor.T
        if not len(_zero_rows(data)):
            return Sample(data)
        logger.warning("AR(1) series hit the zero vector, regenerating")
    raise NumericError("could not draw a series without zero observations")


def generate(spec: ModelSpec, n: int, seed: SeedLike) -> Sample:
    if spec.kind == ModelKind.AR1_GAUSSIAN:
        return gen_ar1(spec, n, seed)
    return gen_gaussian(spec, n, seed)
