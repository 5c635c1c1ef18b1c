import numpy as np
import pytest

from amsdb.core.tensor import Tensor

_ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def leaf():
    """Build a float64 leaf tensor that requires grad."""
    def make(a):
        return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)
    return make


def jitter(module, seed=0, scale=0.3):
    """Add O(scale) noise to every parameter so no gradient path is numerically negligible."""
    r = np.random.default_rng(seed)
    for p in module.parameters():
        p.data = np.asarray(p.data + scale * r.standard_normal(p.shape), dtype=p.dtype)
    # move step sizes out of softplus's flat tail, where their gradients vanish
    for name, p in module.named_parameters():
        if name.endswith("dt_bias"):
            p.data = np.asarray(scale * r.standard_normal(p.shape), dtype=p.dtype)
    return module


@pytest.fixture(scope="session")
def acceptance_report():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
