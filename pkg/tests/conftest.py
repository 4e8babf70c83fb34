import logging

import numpy as np
import pytest

from maxstable.combinatorics import ComponentSet
from maxstable.spatial import MaternParams, SiteSet
from maxstable.spectral import (
    ArchimedeanClusterSpec,
    ClusteredArchimedeanSpectral,
    CopulaSpec,
    GaussianSpectral,
    MarginSpec,
    build_gaussian_spectral,
    build_logistic,
)


@pytest.fixture
def logistic3():
    return build_logistic(3, 2.0)


@pytest.fixture
def gaussian2():
    return GaussianSpectral.from_correlation([[1.0, 0.5], [0.5, 1.0]])


@pytest.fixture
def matern3():
    sites = SiteSet(np.array([[0.0, 0.0], [0.6, 0.2], [0.3, 0.9]]))
    return build_gaussian_spectral(sites, MaternParams(1.0, 1.0))


@pytest.fixture
def clustered4():
    """Gumbel pair {1,2} and Clayton pair {3,4}, LogNormal and Weibull margins."""
    m = 4
    return ClusteredArchimedeanSpectral([
        ArchimedeanClusterSpec(ComponentSet((0, 1), m), CopulaSpec("gumbel", 1.5), MarginSpec("lognormal", 0.8)),
        ArchimedeanClusterSpec(ComponentSet((2, 3), m), CopulaSpec("clayton", 0.7), MarginSpec("weibull", 1.5)),
    ], m)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def propagate_package_logs():
    """setup_logging detaches the package logger from root; caplog needs it attached."""
    logger = logging.getLogger("maxstable")
    yield
    logger.handlers.clear()
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
