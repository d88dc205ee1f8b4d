import numpy as np
import pytest

from ppmn import ops


@pytest.fixture(params=ops.available_backends())
def kernels(request):
    """Each available kernel backend (compiled and pure numpy)."""
    return ops.get_backend(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def uniform(rng, shape, dtype=np.float32):
    return rng.uniform(-1, 1, size=shape).astype(dtype)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
