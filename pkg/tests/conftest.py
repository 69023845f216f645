import numpy as np
import pytest

from invlab import Condition, MixtureModel, build_schedule, default_schedule
from invlab.bench import generate_suite


@pytest.fixture(scope="session")
def s2():
    # T=2 linear schedule with betas [0.1, 0.2]: alpha_bars 0.9, 0.72
    return build_schedule(2, 0.1, 0.2, "linear")


@pytest.fixture(scope="session")
def s50():
    return default_schedule(50)


@pytest.fixture(scope="session")
def small_suite():
    return generate_suite(3, 7, dims=(16, 16), K=4)


@pytest.fixture(scope="session")
def scenario(small_suite):
    return small_suite[0]


def random_mixture(rng, K=2, dims=(4, 4), spread=2.0):
    means = rng.normal(0.0, spread, size=(K,) + tuple(dims))
    sigma2 = rng.uniform(0.3, 1.5, size=K)
    prior = rng.dirichlet(np.ones(K))
    return MixtureModel(means, sigma2, prior)


@pytest.fixture
def k2_model():
    return random_mixture(np.random.default_rng(3), K=2, dims=(4, 4))


@pytest.fixture
def k1_model():
    rng = np.random.default_rng(5)
    return MixtureModel(rng.normal(size=(1, 4, 4)), [0.7], [1.0])


def strong(K, k, strength=4.0):
    return Condition.one_hot(K, k, strength)
