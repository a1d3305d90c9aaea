import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mhecert.certify import reference_reactor_certificate, synthesize_certificate  # noqa: E402
from mhecert.model import reactor_model  # noqa: E402

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS


@pytest.fixture(scope="session")
def reactor():
    return reactor_model()


@pytest.fixture(scope="session")
def ref_cert():
    return reference_reactor_certificate()


@pytest.fixture(scope="session")
def synth_cert(reactor):
    return synthesize_certificate(reactor)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
