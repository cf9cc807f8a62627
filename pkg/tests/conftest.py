from __future__ import annotations

import numpy as np
import pytest

from upconv_g2.propagation import GateResponse, gate_response, experiment_setup, propagate


@pytest.fixture(scope="session")
def operating_record():
    c, p, s = experiment_setup(1.5)
    return propagate(c, p, s)


@pytest.fixture(scope="session")
def sim_gate(operating_record):
    return gate_response(operating_record)


@pytest.fixture(scope="session")
def gauss_gate():
    return GateResponse.gaussian(4.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
