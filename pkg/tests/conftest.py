import numpy as np
import pytest

from analysis.estimator import Bandwidths, Sample, polar_decompose
from simulation.models import gen_gaussian, model1, spherical_gaussian


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def spherical_polar():
    """60 draws from the standard Gaussian in R^3"""
    return polar_decompose(gen_gaussian(spherical_gaussian(3), 60, seed=7))


@pytest.fixture
def model1_sample():
    return gen_gaussian(model1(), 80, seed=11)


@pytest.fixture
def model1_polar(model1_sample):
    return polar_decompose(model1_sample)


@pytest.fixture
def bandwidths():
    return Bandwidths(h=0.6, kappa=25.0)


@pytest.fixture
def csv_file(tmp_path):
    """Write rows to a CSV file and return its path"""

    def write(rows, header=None, name="sample.csv"):
        path = tmp_path / name
        lines = [",".join(header)] if header else []
        lines += [",".join(str(x) for x in row) for row in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(path)

    return write


def random_sample(rng, n, p=3, shift=0.0):
    return Sample(rng.standard_normal((n, p)) + shift)
