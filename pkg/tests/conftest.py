import numpy as np
import pytest

from archipelago import FiniteFK


class StubStream:
    """Replays fixed uniforms (and normals) in order."""

    def __init__(self, uniforms=(), normals=()):
        self._u = list(uniforms)
        self._z = list(normals)

    def _take(self, pool, size):
        n = 1 if size is None else int(np.prod(size))
        if len(pool) < n:
            raise AssertionError("stub stream exhausted")
        out = [pool.pop(0) for _ in range(n)]
        return out[0] if size is None else np.asarray(out, dtype=float).reshape(size)

    def random(self, size=None):
        return self._take(self._u, size)

    def standard_normal(self, size=None):
        return self._take(self._z, size)


def indicator(k):
    return lambda x: (np.asarray(x) == k).astype(float)


HMM_M = [[0.8, 0.2], [0.3, 0.7]]
HMM_E = [[0.8, 0.2], [0.3, 0.7]]
HMM_Y = [1, 0, 1, 1, 0]


@pytest.fixture
def stub():
    return StubStream


@pytest.fixture
def hand_model():
    """Two states, identity kernel, unit potentials."""
    return FiniteFK([0.5, 0.5], np.eye(2), [1.0, 1.0])


@pytest.fixture
def hmm():
    return FiniteFK.from_hmm([0.5, 0.5], HMM_M, HMM_E, HMM_Y)


def random_finite(rng, d=3, steps=None, proposal=False):
    """Random finite model with strictly positive kernels and potentials."""
    shape = (d, d) if steps is None else (steps, d, d)
    M = rng.uniform(0.05, 1.0, shape)
    M /= M.sum(axis=-1, keepdims=True)
    g = rng.uniform(0.1, 2.0, (d,) if steps is None else (steps, d))
    chi = rng.dirichlet(np.ones(d))
    R = None
    if proposal:
        R = rng.uniform(0.05, 1.0, shape)
        R /= R.sum(axis=-1, keepdims=True)
    return FiniteFK(chi, M, g, proposal=R)


# one PASS/FAIL line per acceptance criterion at the end of the run
_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion_"):
        return
    key = int(name.split("_")[2])
    ok = report.passed and _ACCEPTANCE.get(key, True)
    _ACCEPTANCE[key] = ok


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        status = "PASS" if _ACCEPTANCE[key] else "FAIL"
        terminalreporter.write_line(f"criterion {key:2d}: {status}")
