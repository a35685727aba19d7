import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import chi

from errors import QuadratureBudgetError
from simulation.models import model1, model2, spherical_gaussian
from simulation.oracle import check_spherical_rule, oracle_msq, radial_density, reference_msq


@pytest.mark.parametrize("p", [2, 3])
def test_radial_density_of_spherical_gaussian_is_chi(p):
    u = np.array([0.3, 1.0, 2.2])
    values = radial_density(spherical_gaussian(p), u, n_polar=16, n_azimuth=32)
    np.testing.assert_allclose(values, chi(p).pdf(u), rtol=1e-10)


def test_radial_density_integrates_to_one():
    u = np.linspace(0.0, 6.0, 601)
    values = radial_density(model1(), u)
    assert trapezoid(values, u) == pytest.approx(1.0, abs=1e-4)


def test_spherical_model_has_zero_msq():
    result = oracle_msq(spherical_gaussian(3), mc_draws=20000, seed=1, n_polar=16, n_azimuth=32)
    assert abs(result.msq) < 1e-6
    assert reference_msq(spherical_gaussian(3)) == 0.0


def test_coarse_rule_fails_self_check():
    with pytest.raises(QuadratureBudgetError):
        check_spherical_rule(model1(), np.array([2.0]), n_polar=2, n_azimuth=4)


def test_model1_reference_value():
    result = oracle_msq(model1(), mc_draws=50000, seed=3)
    assert result.msq == pytest.approx(0.95, abs=0.02 + 3.0 * result.standard_error)
    assert result.as_dict()["draws"] == 50000


@pytest.mark.slow
def test_model2_reference_value():
    result = oracle_msq(model2(), mc_draws=200000, seed=4)
    assert result.msq == pytest.approx(1.97, abs=0.04)
