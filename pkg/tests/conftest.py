import numpy as np
import pytest

from heightlab import FiniteAtoms, Mechanism, TruncatedStable
from heightlab.levypath import LevyPath


def stick_path(dt=0.01, n=400):
    """X rises 0 -> 1 with slope 1, jumps +0.5 at s=1, then falls with slope -1."""
    t = np.arange(n + 1) * dt
    x = np.where(t <= 1, t, 1.5 - (t - 1))
    k = int(round(1 / dt))
    x[k] = 1.5
    return LevyPath(dt=dt, values=x, jump_index=np.array([k]), jump_size=np.array([0.5]), eps_sim=0.1,
                    brownian_increments=np.zeros(n), small_jump_increments=np.zeros(n), drift=0.0,
                    beta=1.0, alpha=0.0)


@pytest.fixture
def stick():
    return stick_path()


@pytest.fixture
def bm():
    return Mechanism(0.0, 1.0)


@pytest.fixture
def atom_mech():
    return Mechanism(0.2, 1.0, FiniteAtoms([(1.0, 0.5), (0.3, 2.0)]))


@pytest.fixture
def stable_mech():
    return Mechanism(0.0, 1.0, TruncatedStable(1.5, 0.5, 5.0))


_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one summary line per acceptance criterion (printed at the end of the run)."""

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
