import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bernflow.grid import Ball, make_grid, rasterize_shape

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid128():
    return make_grid((-2, -2), (2, 2), (128, 128))


@pytest.fixture(scope="session")
def grid256():
    return make_grid((-3.2, -3.2), (3.2, 3.2), (256, 256))


@pytest.fixture(scope="session")
def unit_source(grid256):
    return rasterize_shape(Ball((0, 0), 1.0), grid256)


def disk(grid, r, center=(0, 0)):
    return rasterize_shape(Ball(center, r), grid)


def assert_close(a, b, rel=None, abs_=None):
    assert a == pytest.approx(b, rel=rel, abs=abs_)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and return the outcome."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
