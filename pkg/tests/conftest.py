import numpy as np
import pytest

from maxreg_fem.coefficients import make_sample
from maxreg_fem.evolution import spectral_decompose
from maxreg_fem.fespace import assemble, build_space
from maxreg_fem.geometry import unit_square_mesh

ROUGH = {"z": (0.5, 0.5), "beta": 0.6}


@pytest.fixture(scope="session")
def square_family():
    """Nested diagonal meshes of the unit square keyed by ``n`` (spacing ``1/n``)."""
    m = {4: unit_square_mesh(4)}
    from maxreg_fem.geometry import refine_uniform
    for n in (8, 16, 32):
        m[n] = refine_uniform(m[n // 2])
    return m


@pytest.fixture(scope="session")
def p1_identity(square_family):
    """``(space, pair, spec)`` for r = 1, a = I at n = 8."""
    s = build_space(square_family[8], 1)
    p = assemble(s, make_sample("identity"))
    return s, p, spectral_decompose(p)


@pytest.fixture(scope="session")
def p2_rough(square_family):
    s = build_space(square_family[8], 2)
    p = assemble(s, make_sample("rough_isotropic", ROUGH))
    return s, p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion; returns the recorder."""

    def record(number, title, passed, detail):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'} {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
