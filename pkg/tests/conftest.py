from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import pytest

from staticext.mesh import Chart, Surface, refine
from staticext.solver import factorize
from staticext.system import StaticSystem

BASELINE = (16, 12, 24)
COARSE = (12, 8, 16)

# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


@dataclass
class Setup:
    chart: Chart

    @cached_property
    def system(self) -> StaticSystem:
        return StaticSystem(self.chart)

    @cached_property
    def Lbar(self):
        return self.system.linearize_flat()

    @cached_property
    def factor(self):
        return factorize(self.Lbar, self.system)

    @cached_property
    def basis(self):
        return self.system.basis


@pytest.fixture(scope="session")
def baseline() -> Setup:
    return Setup(Chart(Surface.sphere(), *BASELINE))


@pytest.fixture(scope="session")
def refined(baseline) -> Setup:
    return Setup(refine(baseline.chart))


@pytest.fixture(scope="session")
def coarse() -> Setup:
    return Setup(Chart(Surface.sphere(), *COARSE))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
