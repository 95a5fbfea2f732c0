import functools

import numpy as np
import pytest

from kneadforge.shapes import gen_shape, load_geometries


@functools.lru_cache(maxsize=None)
def target(name: str, step: float = 1.0, n: int = 400):
    return gen_shape(load_geometries()[name]["shape"], step, n)


@pytest.fixture(scope="session")
def geometries():
    return load_geometries()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one verdict line per acceptance criterion; printed in the summary."""

    def record(n: int, ok: bool, detail: str):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
