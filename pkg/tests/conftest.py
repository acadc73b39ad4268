import numpy as np
import pytest

from rotokin.kinematics import BodyShape, load_tree


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE {name}: {report.outcome.upper()}", flush=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture(scope="session")
def tree22():
    return load_tree("body22")


@pytest.fixture(scope="session")
def tree26():
    return load_tree("body26")


@pytest.fixture(scope="session")
def shape22(tree22):
    return BodyShape.neutral(tree22.joint_count)


def central_difference(f, x, step=1e-6):
    """Dense central finite-difference gradient of a scalar function."""
    grad = np.zeros_like(x, dtype=np.float64)
    for i in range(x.size):
        up = x.copy()
        up.flat[i] += step
        down = x.copy()
        down.flat[i] -= step
        grad.flat[i] = (f(up) - f(down)) / (2.0 * step)
    return grad
