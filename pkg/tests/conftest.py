import dataclasses

import pytest

from hetfba.hfba import HfbaProgram, apply_no_cross_feed, maximize_mu
from hetfba.model_io import load_scenario

SCENARIOS = ("aerobic_unlimited", "aerobic_o2limited")

# lines printed by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def scenarios():
    return {name: load_scenario(name) for name in SCENARIOS}


@pytest.fixture(scope="session")
def model(scenarios):
    return scenarios["aerobic_unlimited"].load_model()


class _Solved:
    """Lazily solved heterogeneous programs shared across test modules."""

    def __init__(self, scenarios, model):
        self._scenarios = scenarios
        self._model = model
        self._cache = {}

    def program(self, name, equality=False, no_cross_feed=False, **changes):
        s = dataclasses.replace(self._scenarios[name], equality_mode=equality, **changes)
        p = HfbaProgram.from_scenario(s, self._model)
        return apply_no_cross_feed(p) if no_cross_feed else p

    def __call__(self, name, equality=False, no_cross_feed=False):
        key = (name, equality, no_cross_feed)
        if key not in self._cache:
            self._cache[key] = maximize_mu(self.program(name, equality, no_cross_feed))
        return self._cache[key]


@pytest.fixture(scope="session")
def solved(scenarios, model):
    return _Solved(scenarios, model)
