import logging
import os

import numpy as np
import pytest

from srb_gradient.logging_setup import LOGGER_NAME
from srb_gradient.maps import build_map

SLOW_ENV = "SRB_GRAD_RUN_SLOW"


# Add test marks
def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: long-running trajectory test"
    )
    config.addinivalue_line(
        "markers", "acceptance: reproduces a published experiment at reduced scale"
    )


def slow_tests_enabled():
    """Long runs are opt-in through SRB_GRAD_RUN_SLOW=1"""
    return os.environ.get(SLOW_ENV, "") == "1"


def pytest_runtest_setup(item):
    """Skip slow and acceptance tests unless explicitly enabled"""
    for marker in item.iter_markers():
        if marker.name in ('slow', 'acceptance') and not slow_tests_enabled():
            pytest.skip(f"Long-running test; set {SLOW_ENV}=1 to run")


@pytest.fixture(autouse=True)
def reset_package_logger():
    """Handlers bound to a captured stream must not outlive the test"""
    yield
    logger = logging.getLogger(LOGGER_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


@pytest.fixture
def classical_baker():
    return build_map("baker2d", [0.0, 0.0, 0.0, 0.0])


@pytest.fixture
def straight_baker():
    return build_map("baker2d", [0.0, 0.4, 0.0, 0.0])


@pytest.fixture
def curved_baker():
    return build_map("baker2d", [0.0, 0.0, 0.0, 0.4])


@pytest.fixture
def baker3d():
    return build_map("baker3d", [0.0, 0.9, 0.1])


@pytest.fixture
def cat_map():
    return build_map("cat")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
