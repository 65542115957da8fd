import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from minimax_interp.densities import Lorentzian, SpectralDensity  # noqa: E402
from minimax_interp.grids import FrequencyGrid, MissingSet, WeightFunction  # noqa: E402
from minimax_interp.minimax import DensityClass, saddle_iterate  # noqa: E402

MODELS = Path(__file__).resolve().parent.parent / "models"

_criteria: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criteria, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _criteria.append(line)
        print(line)
        assert ok, line

    return record


@pytest.fixture(scope="session")
def default_grid():
    return FrequencyGrid.nyquist(1 / 128, 4097)


@pytest.fixture(scope="session")
def toy_grid():
    return FrequencyGrid.nyquist(0.25, 31)


@pytest.fixture(scope="session")
def unit_interval():
    S = MissingSet(((-1.0, 0.0),), 1 / 128)
    return S, WeightFunction.constant(S)


@pytest.fixture(scope="session")
def ou_density(default_grid):
    return Lorentzian.scalar(2.0, 1.0).sample(default_grid)


class Toy:
    """Scalar 16-bin moment × contamination classes on a coarse lattice."""

    def __init__(self, grid, bins=None):
        self.grid = grid
        self.S = MissingSet(((-1.0, 0.0),), 0.25)
        self.a = WeightFunction.constant(self.S)
        self.level = np.pi / grid.lambda_max  # white density with unit integral
        self.G1 = SpectralDensity.constant(grid, [[self.level]])
        self.D_F = DensityClass("D0-1", 1, {"p": 1.0}, bins=bins)
        self.D_G = DensityClass("Deps-1", 1, {"q": 1.0, "eps": 0.1}, {"G1": self.G1}, bins=bins)

    def solve(self, **kw):
        return saddle_iterate(self.G1, self.G1, self.D_F, self.D_G, self.a, self.S, self.grid, **kw)


@pytest.fixture(scope="session")
def toy(toy_grid):
    return Toy(toy_grid)


@pytest.fixture(scope="session")
def toy_saddle(toy):
    return toy.solve(tol=1e-4, max_iter=40000)
