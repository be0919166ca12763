import numpy as np
import pytest

from sndoe.geometry import Euclidean, Product, Spd2, UnitQuaternion


def all_manifolds():
    return [Euclidean(3), UnitQuaternion(), Spd2(), Product([Euclidean(3), UnitQuaternion()])]


def manifold_id(m):
    return m.to_dict()["kind"] if m.to_dict()["kind"] != "euclidean" else f"r{m.ambient_dim}"


def central_fd(fn, x, h=1e-4):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(a)))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
