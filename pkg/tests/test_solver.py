"""
增量极小化引擎的单元测试：弹性/塑性子步、单步、演化与失败传播。
"""

import math

import numpy as np
import pytest
from scipy.optimize import minimize as scipy_minimize
from scipy.optimize import minimize_scalar

from gpcplast.dissipation import rho
from gpcplast.energy import LoadProgram, PlasticState
from gpcplast.errors import LineSearchFailure
from gpcplast.linesearch import Objective, minimize
from gpcplast.mesh import build_rect_mesh
from gpcplast.models import Material, SolverOptions
from gpcplast.solver import (
    Problem,
    elastic_substep,
    evolve,
    incremental_step,
    initial_state,
    plastic_substep,
    solve_step,
)


def _traction(g):
    return LoadProgram(np.zeros(2), np.array([0.0, g]))


def _problem(n=4, material=None, loads=None):
    return Problem(build_rect_mesh(n, n, 1.0, 1.0), material or Material(), loads)


def _zero_z(problem):
    return PlasticState(np.zeros(problem.mesh.n_nodes), np.zeros((problem.mesh.n_nodes, 0)))


# ── 子步 ─────────────────────────────────────────────────────────────────


def test_elastic_substep_keeps_stationary_point():
    problem = _problem(2)
    y, res = elastic_substep(0.0, _zero_z(problem), problem.y_dirichlet, problem, SolverOptions())
    assert res.converged
    assert np.abs(y - problem.y_dirichlet).max() < 1e-8


def test_elastic_response_grows_with_traction():
    opts = SolverOptions()
    uplift = []
    for g in (0.01, 0.02, 0.04):
        problem = _problem(4, loads=_traction(g))
        y, res = elastic_substep(1.0, _zero_z(problem), problem.y_dirichlet, problem, opts)
        assert res.converged
        assert np.all(np.diff(res.history) <= 0.0)
        right = np.isclose(problem.mesh.nodes[:, 0], 1.0)
        uplift.append(float(np.mean((y - problem.y_dirichlet)[right, 1])))
    assert 0.0 < uplift[0] < uplift[1] < uplift[2]


def test_plastic_substep_at_rest_returns_zero():
    problem = _problem(2)
    z0 = _zero_z(problem)
    z, res = plastic_substep(0.0, problem.y_dirichlet, z0, z0, problem, SolverOptions())
    assert res.converged
    assert np.abs(z.gamma).max() <= 1e-8


class FakeProx(Objective):
    """½a(x − b)² + κ·ρ_η(x − x_prev)，单节点的光滑化塑性子步。"""

    def __init__(self, a, b, kappa, x_prev, eta):
        self.a, self.b, self.kappa, self.x_prev, self.eta = a, b, kappa, x_prev, eta

    def value(self, x):
        return float(0.5 * self.a * (x[0] - self.b) ** 2 + self.kappa * rho(x[0] - self.x_prev, self.eta))

    def gradient(self, x):
        d = x[0] - self.x_prev
        return np.array([self.a * (x[0] - self.b) + self.kappa * d / math.hypot(d, self.eta)])


@pytest.mark.parametrize("b", [1.0, 0.2, -0.5])
def test_smoothed_prox_approaches_exact_prox(b):
    a, kappa, x_prev, eta = 1.0, 0.3, 0.1, 1e-6
    res = minimize(FakeProx(a, b, kappa, x_prev, eta), np.array([x_prev]), SolverOptions(eta=eta))
    exact = minimize_scalar(
        lambda x: 0.5 * a * (x - b) ** 2 + kappa * abs(x - x_prev),
        bracket=(-2.0, 2.0),
        method="golden",
        tol=1e-12,
    )
    assert abs(res.x[0] - exact.x) < 5.0 * math.sqrt(eta)


# ── 单步 ─────────────────────────────────────────────────────────────────


def test_zero_load_step_returns_previous_state():
    problem = _problem(2)
    q_prev = problem.initial_guess()
    q = incremental_step(1.0, q_prev, problem, SolverOptions())
    assert np.abs(problem.pack(q) - problem.pack(q_prev)).max() < 1e-8


def test_huge_kappa_freezes_plastic_state():
    problem = _problem(4, material=Material(kappa=1e6), loads=_traction(0.04))
    opts = SolverOptions()
    q_prev = initial_state(problem, opts)
    q, stats = solve_step(1.0, q_prev, problem, opts)
    assert np.abs(q.gamma - q_prev.gamma).max() < 1e-10
    assert np.abs(q.y - q_prev.y).max() > 1e-4
    assert stats.warm_start_slack >= 0.0


def test_step_matches_derivative_free_oracle():
    problem = _problem(1, loads=_traction(0.2))
    opts = SolverOptions()
    q_prev = initial_state(problem, opts)
    q, stats = solve_step(1.0, q_prev, problem, opts)

    z_prev = q_prev.z
    oracle = scipy_minimize(
        lambda x: problem.incremental_objective(1.0, problem.unpack(x), z_prev),
        problem.pack(q_prev),
        method="Powell",
        options={"xtol": 1e-10, "ftol": 1e-15, "maxfev": 200000},
    )
    assert stats.objective == pytest.approx(problem.incremental_objective(1.0, q, z_prev))
    assert stats.objective <= oracle.fun + 1e-6


def test_step_history_is_non_increasing():
    problem = _problem(2, loads=_traction(0.2))
    opts = SolverOptions()
    _, stats = solve_step(1.0, initial_state(problem, opts), problem, opts)
    h = np.asarray(stats.history)
    assert np.all(np.diff(h) <= 1e-13 * (1.0 + np.abs(h[:-1])))


def test_multi_start_is_never_worse():
    problem = _problem(2, loads=_traction(0.2))
    single = SolverOptions()
    multi = SolverOptions(n_starts=3, start_radius=1e-3)
    q_prev = initial_state(problem, single)
    _, s1 = solve_step(1.0, q_prev, problem, single)
    _, s3 = solve_step(1.0, q_prev, problem, multi)
    assert s3.objective <= s1.objective


# ── 演化 ─────────────────────────────────────────────────────────────────


def test_zero_load_trajectory_is_constant():
    problem = _problem(2)
    traj = evolve(problem, SolverOptions(), steps=20)
    assert len(traj.states) == 21
    assert traj.times[0] == 0.0 and traj.times[-1] == 1.0
    assert traj.var_total == 0.0
    e = traj.energies
    assert np.abs(e - e[0]).max() < 1e-12
    for q in traj.states[1:]:
        assert np.abs(problem.pack(q) - problem.pack(traj.states[0])).max() < 1e-8


def test_below_yield_load_keeps_slip_dormant():
    opts = SolverOptions()
    problem = _problem(4, loads=_traction(1e-4))
    traj = evolve(problem, opts, steps=4)
    assert max(np.abs(q.gamma).max() for q in traj.states) < 10.0 * opts.eta


def test_ledger_balance_bookkeeping():
    problem = _problem(2, loads=_traction(0.1))
    traj = evolve(problem, SolverOptions(), steps=3)
    recs = traj.records
    assert [r.k for r in recs] == [0, 1, 2, 3]
    assert recs[-1].var_cumulative == pytest.approx(sum(r.diss_increment for r in recs))
    last = recs[-1]
    expected = last.energy + last.var_cumulative - recs[0].energy + sum(r.work_increment for r in recs)
    assert last.balance_residual == pytest.approx(expected, abs=1e-14)
    assert traj.variation(0.0, 1.0) == pytest.approx(traj.var_total, rel=1e-12)


def test_step_failure_carries_step_index(monkeypatch):
    def failing_minimize(obj, x0, opts, **kwargs):
        raise LineSearchFailure("找不到可行的下降步", data={"iteration": 0})

    problem = _problem(2, loads=_traction(0.1))
    q0 = problem.initial_guess()
    monkeypatch.setattr("gpcplast.solver.minimize", failing_minimize)
    with pytest.raises(LineSearchFailure) as exc_info:
        evolve(problem, SolverOptions(), steps=2, q0=q0)
    assert exc_info.value.data["step"] == 1


# ── τ 加密 ───────────────────────────────────────────────────────────────


@pytest.mark.slow
def test_final_state_settles_under_step_halving():
    problem = _problem(2, loads=_traction(0.2))
    finals = [problem.pack(evolve(problem, SolverOptions(), steps=n).states[-1]) for n in (10, 20, 40, 80)]
    gaps = [np.abs(b - a).max() for a, b in zip(finals, finals[1:])]
    # 相邻两级的差不增；1e-7 是求解容差带来的噪声底
    for coarse, fine in zip(gaps, gaps[1:]):
        assert fine <= coarse + 1e-7
