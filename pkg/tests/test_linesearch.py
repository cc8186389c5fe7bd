"""
Armijo 回溯下降的单元测试：收敛、单调性、障碍拒绝与失败上报。
"""

import math

import numpy as np
import pytest

from gpcplast.errors import LineSearchFailure
from gpcplast.linesearch import Objective, minimize
from gpcplast.models import SolverOptions


class FakeQuadratic(Objective):
    def __init__(self, A, b, barrier=None):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.barrier = barrier

    def value(self, x):
        if self.barrier is not None and x[0] >= self.barrier:
            return math.inf
        return float(0.5 * x @ self.A @ x - self.b @ x)

    def gradient(self, x):
        return self.A @ x - self.b


class FakeIsland(Objective):
    """只有起点可行的目标。"""

    def __init__(self, x0):
        self.x0 = np.asarray(x0, dtype=float)

    def value(self, x):
        return 0.0 if np.array_equal(x, self.x0) else math.inf

    def gradient(self, x):
        return np.ones_like(x)


class FakeFlat(Objective):
    def __init__(self, g):
        self.g = g

    def value(self, x):
        return 0.0

    def gradient(self, x):
        return np.full_like(x, self.g)


@pytest.mark.parametrize("direction", ["newton_cg", "steepest"])
def test_quadratic_converges(direction):
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    opts = SolverOptions(direction=direction, g_tol=1e-10)
    res = minimize(FakeQuadratic(A, b), np.zeros(2), opts)
    assert res.converged
    assert np.allclose(res.x, np.linalg.solve(A, b), atol=1e-9)


def test_history_is_non_increasing():
    A = np.diag([1.0, 50.0, 400.0])
    res = minimize(FakeQuadratic(A, np.ones(3)), np.ones(3), SolverOptions(direction="steepest"))
    assert np.all(np.diff(res.history) <= 0.0)


def test_barrier_rejects_infeasible_trials():
    obj = FakeQuadratic(np.eye(1), np.array([2.0]), barrier=1.0)
    res = minimize(obj, np.zeros(1), SolverOptions(), max_iter=10)
    assert res.x[0] < 1.0
    assert all(math.isfinite(f) for f in res.history)
    assert not res.converged


def test_no_feasible_step_raises():
    with pytest.raises(LineSearchFailure) as exc_info:
        minimize(FakeIsland(np.zeros(2)), np.zeros(2), SolverOptions(), label="island")
    assert exc_info.value.data["iteration"] == 0
    assert "island" in exc_info.value.message


def test_roundoff_stall_is_not_an_error():
    res = minimize(FakeFlat(1e-10), np.zeros(2), SolverOptions(g_tol=1e-12))
    assert not res.converged
    assert res.iterations == 0


def test_infinite_start_raises():
    obj = FakeQuadratic(np.eye(1), np.zeros(1), barrier=0.0)
    with pytest.raises(LineSearchFailure):
        minimize(obj, np.zeros(1), SolverOptions())
