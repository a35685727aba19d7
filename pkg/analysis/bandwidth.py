import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from analysis.estimator import (
    DEFAULT_KERNEL,
    Bandwidths,
    MsqEstimate,
    PairSums,
    PolarSample,
    compute_pair_sums,
    estimate_msq,
    estimate_msq_bias_reduced,
)
from analysis.inference import vhat
from errors import ConfigError
from tools.kernels import RadialKernel

logger = logging.getLogger(__name__)

WINDOW = 3
DEFAULT_A = (0.75, 0.8125, 0.875, 0.9375, 1.0)


@dataclass(frozen=True)
class GridPreset:
    p: int
    a_list: Tuple[float, ...]
    c_list: Tuple[float, ...]


PRESETS: Dict[str, GridPreset] = {
    "model1-p3": GridPreset(p=3, a_list=DEFAULT_A, c_list=(72.5, 73.75, 75.0, 76.25, 77.5)),
    "model2-p5": GridPreset(p=5, a_list=DEFAULT_A, c_list=(37.5, 38.75, 40.0, 41.25, 42.5)),
    "spherical-p2": GridPreset(p=2, a_list=DEFAULT_A, c_list=(72.5, 73.75, 75.0, 76.25, 77.5)),
}


@dataclass(frozen=True)
class BandwidthGrid:
    """(h_i, kappa_i) = (n^(-1/(2(p+8))) a_i, n^(1/(p+8)) c_i)"""

    entries: Tuple[Tuple[float, float], ...]
    a_list: Tuple[float, ...]
    c_list: Tuple[float, ...]
    n: int
    p: int

    def __len__(self):
        return len(self.entries)

    def as_dict(self) -> Dict:
        return {
            "n": self.n,
            "p": self.p,
            "a_list": list(self.a_list),
            "c_list": list(self.c_list),
            "entries": [list(e) for e in self.entries],
        }


@dataclass(frozen=True)
class BandwidthSelection:
    bandwidths: Bandwidths
    index: int
    vhats: Tuple[float, ...]
    window_se: Tuple[float, ...]
    estimates: Tuple[MsqEstimate, ...]
    pair_sums: Tuple[PairSums, ...]

    @property
    def estimate(self) -> MsqEstimate:
        return self.estimates[self.index]

    @property
    def pairs(self) -> PairSums:
        return self.pair_sums[self.index]

    def as_dict(self) -> Dict:
        return {
            "index": self.index,
            "h": self.bandwidths.h,
            "kappa": self.bandwidths.kappa,
            "vhats": list(self.vhats),
            "window_se": list(self.window_se),
        }


def build_grid(n: int, p: int, a_list: Sequence[float], c_list: Sequence[float]) -> BandwidthGrid:
    a_list = tuple(float(a) for a in a_list)
    c_list = tuple(float(c) for c in c_list)
    if len(a_list) != len(c_list):
        raise ConfigError(f"a_list and c_list differ in length ({len(a_list)} vs {len(c_list)})")
    if len(a_list) < WINDOW:
        raise ConfigError(f"bandwidth grid needs at least {WINDOW} entries, got {len(a_list)}")
    if min(a_list) <= 0 or min(c_list) <= 0:
        raise ConfigError("bandwidth constants must be strictly positive")
    if n < 2 or p < 2:
        raise ConfigError(f"grid needs n >= 2 and p >= 2, got n={n}, p={p}")
    h_rate = n ** (-1.0 / (2.0 * (p + 8)))
    kappa_rate = n ** (1.0 / (p + 8))
    entries = tuple((h_rate * a, kappa_rate * c) for a, c in zip(a_list, c_list))
    return BandwidthGrid(entries=entries, a_list=a_list, c_list=c_list, n=n, p=p)


def grid_from_preset(name: str, n: int, p: Optional[int] = None) -> BandwidthGrid:
    try:
        preset = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown bandwidth preset '{name}', choose from {sorted(PRESETS)}")
    if p is not None and p != preset.p:
        raise ConfigError(f"preset '{name}' is defined for p={preset.p}, data has p={p}")
    return build_grid(n, preset.p, preset.a_list, preset.c_list)


def window_standard_errors(vhats: Sequence[float]) -> np.ndarray:
    """sd/sqrt(3) of each interior 3-window {V̂_(i-1), V̂_i, V̂_(i+1)}"""
    values = np.asarray(vhats, dtype=float)
    if len(values) < WINDOW:
        raise ConfigError(f"need at least {WINDOW} values, got {len(values)}")
    windows = np.lib.stride_tricks.sliding_window_view(values, WINDOW)
    return np.std(windows, axis=1, ddof=1) / math.sqrt(WINDOW)


def select_index(vhats: Sequence[float]) -> int:
    """0-based grid index at the flattest interior window, first index on ties"""
    return int(np.argmin(window_standard_errors(vhats))) + 1


def _evaluate_entry(polar: PolarSample, h: float, kappa: float, kernel: RadialKernel,
                    bias_reduction_a: Optional[float]) -> Tuple[MsqEstimate, PairSums]:
    bw = Bandwidths(h=h, kappa=kappa, bias_reduction_a=bias_reduction_a, radial_kernel=kernel)
    if bias_reduction_a is None:
        pairs = compute_pair_sums(polar, h, kernel, (kappa,))
        return estimate_msq(polar, bw, pairs=pairs), pairs
    pairs = compute_pair_sums(polar, h, kernel, (kappa, bias_reduction_a * kappa))
    return estimate_msq_bias_reduced(polar, bw, pairs=pairs), pairs


def select_bandwidth(polar: PolarSample, grid: BandwidthGrid, kernel: RadialKernel = DEFAULT_KERNEL,
                     bias_reduction_a: Optional[float] = None, threads: int = 1) -> BandwidthSelection:
    """Grid pair minimizing the local volatility of V̂_n"""
    if len(grid) < WINDOW:
        raise ConfigError(f"bandwidth grid needs at least {WINDOW} entries")
    if polar.p != grid.p:
        raise ConfigError(f"grid built for p={grid.p}, data has p={polar.p}")

    def work(entry):
        return _evaluate_entry(polar, entry[0], entry[1], kernel, bias_reduction_a)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(work, grid.entries))
    else:
        results = [work(entry) for entry in grid.entries]

    estimates = tuple(r[0] for r in results)
    vhats = tuple(vhat(est) for est in estimates)
    window_se = window_standard_errors(vhats)
    index = select_index(vhats)
    logger.info("selected bandwidth index %d of %d: h=%.6g kappa=%.6g",
                index, len(grid), grid.entries[index][0], grid.entries[index][1])
    return BandwidthSelection(
        bandwidths=estimates[index].bandwidths,
        index=index,
        vhats=vhats,
        window_se=tuple(float(x) for x in window_se),
        estimates=estimates,
        pair_sums=tuple(r[1] for r in results),
    )


def turning_point_curves(polar: PolarSample, grid: BandwidthGrid, kernel: RadialKernel = DEFAULT_KERNEL,
                         bias_reduction_a: Optional[float] = None) -> Dict[str, pd.DataFrame]:
    """M̂²_n along h at the middle kappa and along kappa at the middle h"""
    middle = len(grid) // 2
    h_mid, kappa_mid = grid.entries[middle]
    h_values = [entry[0] for entry in grid.entries]
    kappa_values = [entry[1] for entry in grid.entries]

    def curve(pairs: List[Tuple[float, float]], column: str) -> pd.DataFrame:
        rows = []
        for h, kappa in pairs:
            estimate, _ = _evaluate_entry(polar, h, kappa, kernel, bias_reduction_a)
            rows.append({"h": h, "kappa": kappa, "msq": estimate.msq, "vhat": vhat(estimate)})
        return pd.DataFrame(rows).sort_values(column).reset_index(drop=True)

    return {
        "h": curve([(h, kappa_mid) for h in h_values], "h"),
        "kappa": curve([(h_mid, kappa) for kappa in kappa_values], "kappa"),
    }
