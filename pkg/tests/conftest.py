import warnings

import numpy as np
import pytest

from gse.manifolds import get_manifold
from gse.model import GseModel
from gse.neighborhoods import HyperParams


def _fit(points, q, variant):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return GseModel.fit(points, HyperParams(q=q, variant=variant))


@pytest.fixture(scope="session")
def plane():
    return get_manifold("affineplane", p=5, q=2, seed=0)


@pytest.fixture(scope="session")
def plane_data(plane):
    return plane.sample(200, 0), plane.sample(100, 1)


@pytest.fixture(scope="session", params=["gse", "ogse"])
def plane_model(request, plane_data):
    train, _ = plane_data
    return _fit(train.points, 2, request.param)


@pytest.fixture(scope="session")
def swissroll():
    return get_manifold("swissroll")


@pytest.fixture(scope="session")
def roll450(swissroll):
    return _fit(swissroll.sample(450, 0).points, 2, "ogse")


@pytest.fixture(scope="session")
def roll450_gse(swissroll):
    return _fit(swissroll.sample(450, 0).points, 2, "gse")


@pytest.fixture(scope="session")
def roll_test(swissroll):
    return swissroll.sample(200, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def affine_fit(A, B):
    """Least-squares affine map ``B ~ A @ M + c``; returns the max residual norm."""
    Ah = np.hstack([A, np.ones((A.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(Ah, B, rcond=None)
    return float(np.max(np.linalg.norm(Ah @ coef - B, axis=1))), coef


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
