import functools

import numpy as np
import pytest

from taylorhel.geometry import build_domain
from taylorhel.grid import GridSpec
from taylorhel.harmonic import build_basis


@functools.lru_cache(maxsize=None)
def domain(recipe, n, **params):
    c, atlas = build_domain(recipe, GridSpec.cube(n), **params)
    return c, atlas, build_basis(c, atlas)


@pytest.fixture(scope="session")
def torus16():
    return domain("solid_torus", 16)


@pytest.fixture(scope="session")
def shell16():
    return domain("toroidal_shell", 16)


@pytest.fixture(scope="session")
def twofold16():
    return domain("nfold_torus", 16)


@pytest.fixture(scope="session")
def box12():
    return domain("box", 12)


@pytest.fixture(scope="session", params=["solid_torus", "nfold_torus", "toroidal_shell"])
def handled16(request):
    return domain(request.param, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
