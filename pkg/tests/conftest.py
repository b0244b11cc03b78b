from __future__ import annotations

import pytest

from parisian_knockin.model import MarketParams, ParisianContract
from parisian_knockin.pricer import ParisianPricer

DEFAULT_MARKET = MarketParams(r=0.05, D=0.04, sigma=0.2)
DEFAULT_CONTRACT = ParisianContract(K=100.0, S_bar=95.0, J_bar=0.05, T=1.0)
EUROPEAN_CONTRACT = ParisianContract(K=100.0, S_bar=95.0, J_bar=0.05, T=1.0,
                                     embedded_style="european")


@pytest.fixture(scope="session")
def default_pricer():
    return ParisianPricer(DEFAULT_MARKET, DEFAULT_CONTRACT)


@pytest.fixture(scope="session")
def european_pricer():
    return ParisianPricer(DEFAULT_MARKET, EUROPEAN_CONTRACT)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running oracle comparison")


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
