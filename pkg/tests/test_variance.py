import math
import warnings

import numpy as np
import pytest

from analysis.estimator import (
    Bandwidths,
    Sample,
    bias_reduced_pair_sums,
    bias_reduction_weights,
    compute_pair_sums,
    estimate_msq,
    estimate_msq_bias_reduced,
    polar_decompose,
)
from analysis.variance import (
    jackknife,
    leave_one_out_estimates,
    plug_in_only,
    plug_in_prefactor,
    plug_in_variance,
    pseudovalues_degenerate,
)
from errors import DegenerateSampleWarning, DimensionError
from simulation.models import gen_gaussian, model1, spherical_gaussian


def brute_force_leave_one_out(polar, bw, reduced=False):
    estimator = estimate_msq_bias_reduced if reduced else estimate_msq
    values = []
    for i in range(polar.n):
        keep = [j for j in range(polar.n) if j != i]
        values.append(estimator(polar.subset(keep), bw).msq)
    return np.array(values)


@pytest.mark.parametrize("seed, n", [(1, 12), (2, 25), (3, 40), (4, 60)])
def test_row_sum_leave_one_out_matches_recomputation(seed, n):
    polar = polar_decompose(gen_gaussian(model1(), n, seed=seed))
    bw = Bandwidths(h=0.7, kappa=20.0)
    pairs = compute_pair_sums(polar, bw.h, bw.radial_kernel, (bw.kappa,))
    loo = leave_one_out_estimates(pairs, [1.0])
    np.testing.assert_allclose(loo, brute_force_leave_one_out(polar, bw), rtol=0.0, atol=1e-9)


def test_bias_reduced_leave_one_out():
    polar = polar_decompose(gen_gaussian(model1(), 30, seed=9))
    bw = Bandwidths(h=0.7, kappa=30.0, bias_reduction_a=0.5)
    pairs = bias_reduced_pair_sums(polar, bw)
    loo = leave_one_out_estimates(pairs, list(bias_reduction_weights(0.5)))
    np.testing.assert_allclose(loo, brute_force_leave_one_out(polar, bw, reduced=True), rtol=0.0, atol=1e-9)


@pytest.mark.slow
def test_leave_one_out_many_datasets():
    bw = Bandwidths(h=0.7, kappa=20.0)
    for seed in range(20):
        n = 20 + 2 * seed
        polar = polar_decompose(gen_gaussian(model1(), n, seed=100 + seed))
        pairs = compute_pair_sums(polar, bw.h, bw.radial_kernel, (bw.kappa,))
        np.testing.assert_allclose(leave_one_out_estimates(pairs, [1.0]), brute_force_leave_one_out(polar, bw),
                                   rtol=0.0, atol=1e-9)


def test_pseudovalues(model1_polar, bandwidths):
    var = jackknife(model1_polar, bandwidths)
    estimate = estimate_msq(model1_polar, bandwidths)
    n = model1_polar.n
    assert var.n == n
    # leave-one-out values of a U-statistic average to the full estimate
    assert var.jackknife_mean == pytest.approx(estimate.msq, abs=1e-10)
    expected = np.sum((var.pseudovalues - var.pseudovalues.mean()) ** 2) / (4.0 * (n - 1))
    assert var.sigma_hat_sq == pytest.approx(expected, rel=1e-12)
    assert var.sigma_hat_sq > 0
    assert not var.degenerate


def test_bias_reduced_jackknife_uses_combined_kernel(model1_polar):
    bw = Bandwidths(h=0.6, kappa=40.0, bias_reduction_a=0.5)
    var = jackknife(model1_polar, bw, bias_reduce=True)
    assert var.jackknife_mean == pytest.approx(estimate_msq_bias_reduced(model1_polar, bw).msq, abs=1e-10)


def test_plug_in_variance(model1_polar, bandwidths):
    estimate = estimate_msq(model1_polar, bandwidths)
    value = plug_in_variance(model1_polar, bandwidths)
    expected = plug_in_prefactor(model1_polar.n, 3, bandwidths) * estimate.m2
    assert value == pytest.approx(expected, rel=1e-12)
    assert plug_in_variance(model1_polar, bandwidths, m2=estimate.m2) == pytest.approx(value, rel=1e-12)
    assert value >= 0.0


def test_plug_in_prefactor_scaling(bandwidths):
    # psi_2 of the corrected Epanechnikov kernel enters linearly, 1/(n(n-1)h) sets the rate
    ratio = plug_in_prefactor(100, 3, bandwidths) / plug_in_prefactor(200, 3, bandwidths)
    assert ratio == pytest.approx(200 * 199 / (100 * 99))


def test_degenerate_sample_warns():
    # radii so far apart that every radial kernel weight vanishes
    data = np.array([[1.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 100.0], [1000.0, 0.0, 0.0]])
    polar = polar_decompose(Sample(data))
    with pytest.warns(DegenerateSampleWarning):
        var = jackknife(polar, Bandwidths(h=0.5, kappa=10.0))
    assert var.degenerate
    assert var.sigma_hat_sq == 0.0


def test_jackknife_needs_three_observations():
    polar = polar_decompose(Sample(np.array([[1.0, 0.0], [0.0, 2.0]])))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(DimensionError):
            jackknife(polar, Bandwidths(h=0.5, kappa=10.0))


def test_pseudovalues_equal_up_to_rounding_are_degenerate():
    assert pseudovalues_degenerate(0.3 + np.array([0.0, 1.0, -1.0, 2.0]) * 1e-14)
    assert pseudovalues_degenerate(np.zeros(5))
    assert not pseudovalues_degenerate(np.array([0.3, 0.31, 0.3]))
    assert not pseudovalues_degenerate(np.array([-1e-3, 1e-3, 0.0]))


def test_two_observations_get_plug_in_variance_only():
    polar = polar_decompose(Sample(np.array([[1.0, 0.0, 0.0], [0.0, 1.2, 0.0]])))
    bw = Bandwidths(h=1.0, kappa=5.0)
    var = plug_in_only(polar, bw)
    assert var.s_hat_sq == pytest.approx(plug_in_variance(polar, bw), rel=1e-12)
    assert math.isnan(var.sigma_hat_sq)
    assert var.n == 0
    assert not var.degenerate


@pytest.mark.slow
def test_plug_in_variance_tracks_sampling_variance_under_sphericity():
    n = 400
    bw = Bandwidths(h=n ** (-1.0 / 22.0) * 0.875, kappa=n ** (1.0 / 11.0) * 75.0)
    estimates, plug_ins = [], []
    for r in range(500):
        polar = polar_decompose(gen_gaussian(spherical_gaussian(3), n, seed=9000 + r))
        estimate = estimate_msq(polar, bw)
        estimates.append(estimate.msq)
        plug_ins.append(plug_in_variance(polar, bw, m2=estimate.m2))
    ratio = np.var(estimates, ddof=1) / np.mean(plug_ins)
    assert 0.7 <= ratio <= 1.4
