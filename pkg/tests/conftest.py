import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    g = np.zeros(flat.shape[0])
    for i in range(flat.shape[0]):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(x.shape)


def max_rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


_ACCEPTANCE = []


def record(criterion, passed, detail):
    """Store an acceptance outcome for the terminal summary."""
    _ACCEPTANCE.append((criterion, passed, detail))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training runs used by the acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("ACCEPTANCE")
    for criterion, passed, detail in sorted(_ACCEPTANCE, key=lambda x: x[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")
