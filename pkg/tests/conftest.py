import pytest

from cipricing.intensity import ModelParams, build_intensity_set, england_table
from cipricing.solver import SolverConfig, solve


@pytest.fixture(scope="session")
def tables():
    return england_table("incidence"), england_table("other_mortality")


@pytest.fixture(scope="session")
def england(tables):
    """Baseline intensity sets keyed by variant name."""
    return {v: build_intensity_set(*tables, v) for v in ("M0", "M1", "M2")}


@pytest.fixture(scope="session")
def grids30(england):
    return {v: solve(s, 30.0, SolverConfig()) for v, s in england.items()}


def make_set(tables, variant, **params):
    return build_intensity_set(*tables, variant, ModelParams(**params))


def rel(a, b):
    return (a - b) / b




def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(lines):
            terminalreporter.write_line(lines[cid])
