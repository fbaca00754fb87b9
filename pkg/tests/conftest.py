from pathlib import Path

import numpy as np
import pytest

from biot_homog.effective import homogenize
from biot_homog.geometry import Cube, MacroDomain, build_unit_cell
from biot_homog.materials import PhaseMaterials

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


@pytest.fixture(scope="session")
def cell2d():
    return build_unit_cell(2, 8, Cube(0.5))


@pytest.fixture(scope="session")
def cell3d():
    return build_unit_cell(3, 8, Cube(0.5))


@pytest.fixture(scope="session")
def contrast2d():
    """Stiffer, less permeable inclusion; alpha2 < alpha1."""
    return PhaseMaterials.isotropic(2, 1.0, 1.0, 2.0, 2.0, K2=0.1, g=2.0, alpha2=0.8)


@pytest.fixture(scope="session")
def solution2d(cell2d, contrast2d):
    return homogenize(cell2d, contrast2d, f1=[0.0, -1.0], f2=[0.0, -1.0], dt=0.05, steps=16)


@pytest.fixture(scope="session")
def macro2d():
    return MacroDomain(2, (1.0, 1.0), (8, 8))


def rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


ACCEPTANCE = {}


@pytest.fixture
def accept(capsys):
    """Record one acceptance criterion; the line is echoed now and in the summary."""
    def record(number, title, passed, detail):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE[number] = line
        with capsys.disabled():
            print("\n" + line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
