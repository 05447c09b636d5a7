from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from pilotwave.fields import ComplexField, UnitSystem, make_grid, normalize

ACCEPTANCE_LINES: list[str] = []


def scenario_path(name: str) -> Path:
    return Path(str(resources.files("pilotwave") / "scenarios" / f"{name}.yaml"))


def gaussian(grid, center=0.0, sigma=1.0, momentum=0.0, hbar=1.0) -> ComplexField:
    x = grid.axis(0)
    return normalize(ComplexField(grid, np.exp(-(x - center) ** 2 / (4 * sigma ** 2) + 1j * momentum * x / hbar)))


def free_gaussian_exact(grid, t, sigma0=1.0, hbar=1.0, mass=1.0) -> ComplexField:
    """Closed-form free evolution of exp(-x^2 / 4 sigma0^2)."""
    x = grid.axis(0)
    z = 1.0 + 1j * hbar * t / (2 * mass * sigma0 ** 2)
    psi = (2 * np.pi * sigma0 ** 2) ** -0.25 / np.sqrt(z) * np.exp(-x ** 2 / (4 * sigma0 ** 2 * z))
    return ComplexField(grid, psi)


@pytest.fixture
def units():
    return UnitSystem()


@pytest.fixture
def line_grid():
    return make_grid([[-10.0, 10.0]], 512)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
