import numpy as np
import pytest

from pescal import SyntheticM2dpSpec, frontdoor_reduce, generate_dataset


@pytest.fixture(scope="session")
def spec():
    return SyntheticM2dpSpec()


@pytest.fixture(scope="session")
def mdp(spec):
    return frontdoor_reduce(spec, 0.95)


@pytest.fixture(scope="session")
def data50k(spec):
    return generate_dataset(spec, 50_000, seed=11)


def sigmoid_ref(x):
    # independent oracle: the textbook form, fine for moderate |x|
    return np.exp(x) / (1.0 + np.exp(x))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
