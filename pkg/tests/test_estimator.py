import math
from itertools import combinations

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from analysis.estimator import (
    Bandwidths,
    MsqEstimate,
    PolarSample,
    Sample,
    bias_reduction_weights,
    compensated_cumsum,
    compute_pair_sums,
    estimate_m1,
    estimate_m2,
    estimate_msq,
    estimate_msq_bias_reduced,
    kernel_h,
    polar_decompose,
    sequential_process,
)
from errors import ConfigError, DimensionError, ParseError, ZeroVectorError
from simulation.models import gen_gaussian, spherical_gaussian
from tools.kernels import RadialKernel, c_one, eval_langevin_log, surface_area


def brute_force_msq(polar, bw):
    n = polar.n
    total = math.fsum(
        kernel_h(polar.u[i], polar.u[j], polar.v[i], polar.v[j], bw) for i, j in combinations(range(n), 2)
    )
    return 2.0 * total / (n * (n - 1))


class TestSample:
    def test_shape(self):
        sample = Sample(np.ones((5, 3)))
        assert (sample.n, sample.p) == (5, 3)

    @pytest.mark.parametrize("data", [np.ones(4), np.ones((4, 1)), np.ones((1, 3))])
    def test_dimension_errors(self, data):
        with pytest.raises(DimensionError):
            Sample(data)

    def test_non_finite_cell_location(self):
        data = np.ones((8, 3))
        data[6, 1] = np.nan
        with pytest.raises(ParseError) as info:
            Sample(data)
        assert (info.value.row, info.value.column) == (7, 2)

    def test_data_is_read_only(self):
        sample = Sample(np.ones((3, 2)))
        with pytest.raises(ValueError):
            sample.data[0, 0] = 2.0


def test_polar_decompose():
    polar = polar_decompose(Sample(np.array([[3.0, 4.0], [0.0, -2.0]])))
    np.testing.assert_allclose(polar.u, [5.0, 2.0])
    np.testing.assert_allclose(polar.v, [[0.6, 0.8], [0.0, -1.0]])


def test_zero_row_is_named():
    data = np.ones((5, 3))
    data[3] = 0.0
    with pytest.raises(ZeroVectorError) as info:
        polar_decompose(Sample(data))
    assert info.value.row == 4
    assert "row 4" in str(info.value)


@pytest.mark.parametrize("h, kappa, a", [(0.0, 1.0, None), (1.0, -2.0, None), (1.0, 1.0, 1.0), (math.nan, 1.0, None)])
def test_bandwidth_validation(h, kappa, a):
    with pytest.raises(ConfigError):
        Bandwidths(h=h, kappa=kappa, bias_reduction_a=a)


@pytest.mark.parametrize("kernel", ["jackknife-epanechnikov", "biweight"])
def test_matches_pairwise_definition(model1_polar, kernel):
    polar = model1_polar.subset(range(30))
    bw = Bandwidths(h=0.5, kappa=30.0, radial_kernel=RadialKernel.from_name(kernel))
    assert estimate_msq(polar, bw).msq == pytest.approx(brute_force_msq(polar, bw), abs=1e-10)


def test_sequential_path_is_prefix_estimate(model1_polar, bandwidths):
    estimate = estimate_msq(model1_polar, bandwidths)
    assert isinstance(estimate, MsqEstimate)
    assert estimate.n == model1_polar.n
    assert len(estimate.sequential) == model1_polar.n - 1
    for k in (2, 5, 17, 50):
        prefix = estimate_msq(model1_polar.subset(range(k)), bandwidths)
        assert estimate.path_at(k) == pytest.approx(prefix.msq, abs=1e-10)
    assert estimate.path_at(model1_polar.n) == estimate.msq


def test_path_index_range(model1_polar, bandwidths):
    estimate = estimate_msq(model1_polar, bandwidths)
    with pytest.raises(ConfigError):
        estimate.path_at(1)
    with pytest.raises(ConfigError):
        estimate.path_at(model1_polar.n + 1)


def test_rotation_invariance(model1_sample, bandwidths):
    rotation = special_ortho_group.rvs(3, random_state=3)
    rotated = Sample(model1_sample.data @ rotation.T)
    before = estimate_msq(polar_decompose(model1_sample), bandwidths).msq
    after = estimate_msq(polar_decompose(rotated), bandwidths).msq
    assert after == pytest.approx(before, abs=1e-10)


def test_permutation_invariance(model1_polar, bandwidths, rng):
    order = rng.permutation(model1_polar.n)
    before = estimate_msq(model1_polar, bandwidths).msq
    after = estimate_msq(model1_polar.subset(order), bandwidths).msq
    assert after == pytest.approx(before, abs=1e-12)


def test_worker_count_does_not_change_sums(model1_polar):
    one = compute_pair_sums(model1_polar, 0.6, kappas=(25.0,), threads=1, block=16)
    four = compute_pair_sums(model1_polar, 0.6, kappas=(25.0,), threads=4, block=16)
    np.testing.assert_array_equal(one.lower_kl, four.lower_kl)
    np.testing.assert_array_equal(one.full_k, four.full_k)


def test_components(model1_polar, bandwidths):
    estimate = estimate_msq(model1_polar, bandwidths)
    m1 = estimate_m1(model1_polar, bandwidths.h, bandwidths.radial_kernel)
    m2 = estimate_m2(model1_polar, bandwidths)
    assert estimate.m1 == pytest.approx(m1, rel=1e-12)
    assert estimate.m2 == pytest.approx(m2, rel=1e-12)
    assert estimate.msq == pytest.approx(m2 - m1 / surface_area(3), abs=1e-10)


def test_bias_reduction_weights():
    w1, w2 = bias_reduction_weights(0.5)
    assert (w1, w2) == (2.0, -1.0)
    assert sum(bias_reduction_weights(0.3)) == pytest.approx(1.0)
    for a in (0.0, 1.0, -0.2, None):
        with pytest.raises(ConfigError):
            bias_reduction_weights(a)


def test_bias_reduced_is_pointwise_combination(model1_polar):
    bw = Bandwidths(h=0.6, kappa=40.0, bias_reduction_a=0.5)
    reduced = estimate_msq_bias_reduced(model1_polar, bw)
    at_kappa = estimate_msq(model1_polar, Bandwidths(h=0.6, kappa=40.0))
    at_half = estimate_msq(model1_polar, Bandwidths(h=0.6, kappa=20.0))
    assert reduced.bias_reduced
    np.testing.assert_allclose(reduced.sequential, 2.0 * at_kappa.sequential - at_half.sequential, atol=1e-10)


def test_sequential_process(model1_polar, bandwidths):
    estimate = estimate_msq(model1_polar, bandwidths)
    process = sequential_process(estimate)
    assert len(process) == model1_polar.n - 1
    assert process[-1] == 0.0
    k = 10
    expected = k / (2.0 * math.sqrt(model1_polar.n)) * (estimate.path_at(k) - estimate.msq)
    assert process[k - 2] == pytest.approx(expected)


def test_compensated_cumsum(rng):
    values = rng.standard_normal(500) * 1e8 + rng.standard_normal(500)
    running = compensated_cumsum(values)
    for k in (1, 10, 250, 500):
        assert running[k - 1] == pytest.approx(math.fsum(values[:k]), rel=1e-15, abs=1e-6)


def test_as_dict(model1_polar, bandwidths):
    record = estimate_msq(model1_polar, bandwidths).as_dict(include_path=True)
    assert record["n"] == model1_polar.n
    assert record["bandwidths"]["radial_kernel"] == "jackknife-epanechnikov"
    assert len(record["sequential"]) == model1_polar.n - 1


def test_kernel_h_on_identical_points():
    bw = Bandwidths(h=1.0, kappa=10.0, radial_kernel=RadialKernel.from_name("epanechnikov"))
    v = np.array([0.0, 0.6, 0.8])
    langevin = 10.0 * math.exp(10.0) / (4.0 * math.pi * math.sinh(10.0))
    expected = 0.75 * (langevin / c_one(3, 10.0) - 1.0 / (4.0 * math.pi))
    assert kernel_h(2.0, 2.0, v, v, bw) == pytest.approx(expected, rel=1e-12)


def test_m1_of_uniform_radii():
    n = 2000
    h = n ** (-1.0 / 3.0)
    kernel = RadialKernel.from_name("epanechnikov")
    rng = np.random.default_rng(2024)
    directions = np.tile([1.0, 0.0, 0.0], (n, 1))
    values = [estimate_m1(PolarSample(u=rng.uniform(0.0, 1.0, n), v=directions), h, kernel) for _ in range(10)]
    # the density is cut at 0 and 1, so E = 1 - h * E|Z| with E|Z| = 3/8 under K
    expected = 1.0 - 0.375 * h
    se = np.std(values, ddof=1) / math.sqrt(len(values))
    assert abs(np.mean(values) - expected) < 4.0 * se


def test_pair_kernel_has_conditional_mean_zero_under_sphericity():
    bw = Bandwidths(h=0.5, kappa=20.0)
    draws = gen_gaussian(spherical_gaussian(3), 100_000, seed=31).data
    u = np.linalg.norm(draws, axis=1)
    v = draws / u[:, None]
    params = bw.spherical_params(3)
    for y in ([1.0, 0.0, 0.0], [0.5, 1.2, -0.3], [-1.0, 1.0, 1.0]):
        y = np.asarray(y)
        uj = float(np.linalg.norm(y))
        vj = y / uj
        langevin = np.exp(eval_langevin_log(params, np.clip(v @ vj, -1.0, 1.0)))
        values = bw.radial_kernel((u - uj) / bw.h) * (langevin / c_one(3, bw.kappa) - 1.0 / surface_area(3)) / bw.h
        for i in range(3):
            assert values[i] == pytest.approx(kernel_h(u[i], uj, v[i], vj, bw), rel=1e-10, abs=1e-14)
        se = np.std(values, ddof=1) / math.sqrt(len(values))
        assert abs(np.mean(values)) < 4.0 * se

def test_unbiased_under_sphericity_small():
    bw = Bandwidths(h=0.6, kappa=8.0)
    values = [
        estimate_msq(polar_decompose(gen_gaussian(spherical_gaussian(3), 40, seed=1000 + r)), bw).msq
        for r in range(200)
    ]
    mean = np.mean(values)
    se = np.std(values, ddof=1) / math.sqrt(len(values))
    assert abs(mean) < 4.0 * se


@pytest.mark.slow
def test_unbiased_under_sphericity():
    n = 200
    bw = Bandwidths(h=n ** (-1.0 / 22.0) * 0.875, kappa=n ** (1.0 / 11.0) * 75.0)
    values = [
        estimate_msq(polar_decompose(gen_gaussian(spherical_gaussian(3), n, seed=5000 + r)), bw).msq
        for r in range(500)
    ]
    mean = np.mean(values)
    se = np.std(values, ddof=1) / math.sqrt(len(values))
    assert abs(mean) < 3.0 * se
