import sys

import numpy as np
import pytest

from wgad.nn import NetworkSpec, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_critic():
    spec = NetworkSpec.mlp([2, 8, 8, 1], hidden="tanh")
    return spec, init_params(spec, 3)


@pytest.fixture
def small_generator():
    spec = NetworkSpec.mlp([2, 8, 2], hidden="leaky_relu")
    return spec, init_params(spec, 4)


@pytest.fixture(scope="session")
def toy_model():
    """A small WGAN-GP fitted to the 7-mode ring, shared across test modules.

    Uses a short schedule with a light penalty weight and a larger step so
    the fit converges within seconds; runs at the default settings live in
    the acceptance suite.
    """
    from wgad.datasets import GaussianMixtureSpec, sample_gaussian_mixture
    from wgad.nn import Network
    from wgad.training import GanConfig, train_wgan_gp

    spec = GaussianMixtureSpec()
    data = sample_gaussian_mixture(spec, 20000, seed=0)
    gen = NetworkSpec.mlp([2, 64, 64, 2])
    critic = NetworkSpec.mlp([2, 64, 64, 1])
    res = train_wgan_gp(data, gen, critic, GanConfig(epochs=5, lambda_gp=0.1, lr=1e-3, seed=0))
    return spec, data, Network(gen, res.generator), Network(critic, res.critic)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criterion lines at the end of the run."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
