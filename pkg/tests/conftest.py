import math

import pytest

from levytax import LevyModel, TaxParams, build_scale_evaluator, optimal_threshold


@pytest.fixture(scope="session")
def example_model():
    """Erlang-2 jumps (rate 1, jump rate 2), loading 0.1, unit volatility."""
    return LevyModel.with_loading()


@pytest.fixture(scope="session")
def example_tax():
    return TaxParams(alpha=0.3, beta=0.6, eta=1.25, q=0.1)


@pytest.fixture(scope="session")
def example_ev(example_model):
    return build_scale_evaluator(example_model, 0.1)


@pytest.fixture(scope="session")
def example_b_star(example_ev, example_tax):
    return optimal_threshold(example_ev, example_tax)


@pytest.fixture(scope="session")
def brownian():
    """Pure Brownian motion with psi(s) = s**2."""
    return LevyModel(0.0, math.sqrt(2.0))


@pytest.fixture(scope="session")
def bv_model():
    """Bounded-variation model: drift 1.5 and one Erlang-2 component."""
    return LevyModel(1.5, 0.0, ((1.0, 2, 2.0),))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_levytax_acceptance", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
