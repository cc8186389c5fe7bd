"""
轨迹审计的单元测试：粗化演示运行上的自审计、稳定性探测、先验有界性、
速率无关性（含反例）、反向 Young 不等式与 τ 加密趋势。
"""

import json
import math
import sys

import numpy as np
import pytest

from gpcplast.diagnostics import (
    apriori_audit,
    balance_trend_audit,
    energy_inequality_audit,
    inequality_slacks,
    rate_independence_audit,
    reverse_young_check,
    reverse_young_rhs,
    stability_margin,
    stability_probe,
    step_audit,
    trajectory_discrepancy,
    trajectory_stability_audit,
)
from gpcplast.energy import LoadProgram
from gpcplast.errors import DomainError
from gpcplast.mesh import build_rect_mesh
from gpcplast.models import Material, SolverOptions
from gpcplast.solver import Problem, evolve, run_evolution


def _with(cfg, **sections):
    update = {name: getattr(cfg, name).model_copy(update=vals) for name, vals in sections.items()}
    return cfg.model_copy(update=update)


# ── 粗化演示运行的自审计 ─────────────────────────────────────────────────────


def test_coarse_ledger_shape(coarse_traj, coarse_cfg):
    assert len(coarse_traj.states) == coarse_cfg.loading.steps + 1
    assert coarse_traj.times[0] == 0.0
    assert np.all(np.diff(coarse_traj.times) > 0)
    assert all(math.isfinite(e) for e in coarse_traj.energies)


def test_coarse_step_checks(coarse_traj, coarse_cfg):
    report = step_audit(coarse_traj, coarse_cfg.solver)
    assert report.get("unimodularity").value < 1e-14
    assert report.get("feasibility").value > 0.0
    assert report.get("warm_start_dominance").passed


def test_coarse_energy_inequalities(coarse_traj, coarse_cfg):
    report = energy_inequality_audit(coarse_traj, coarse_cfg.solver)
    upper = report.get("energy_inequality_upper")
    lower = report.get("energy_inequality_lower")
    assert upper.passed and lower.passed
    assert upper.tolerance < 1e-6


def test_coarse_stability(coarse_traj, coarse_cfg):
    a = coarse_cfg.audit
    report = trajectory_stability_audit(coarse_traj, a.n_samples, a.radius, a.seed, 1, a.tol_stab_rel)
    check = report.get("stability_trajectory")
    assert check.passed, check.details


def test_coarse_full_report(coarse_report):
    names = {c.name for c in coarse_report.checks}
    assert {"stability_initial", "unimodularity", "energy_inequality_upper", "apriori_bounded"} <= names
    assert coarse_report.passed, coarse_report.to_text()


def test_coarse_apriori_consistency(coarse_traj):
    report = apriori_audit(coarse_traj)
    assert report.get("apriori_bounded").passed
    assert report.get("apriori_var_consistency").passed


def test_audit_report_dumps_to_strict_json(coarse_report):
    text = json.dumps(coarse_report.model_dump(mode="json"), allow_nan=False)
    bounded = next(c for c in json.loads(text)["checks"] if c["name"] == "apriori_bounded")
    assert bounded["tolerance"] == sys.float_info.max


@pytest.mark.slow
def test_coarse_apriori_refinement(coarse_traj, coarse_cfg):
    finer = run_evolution(
        _with(coarse_cfg, loading={"steps": 20}, solver={"tau": None}), probe_initial=False
    )
    check = apriori_audit(coarse_traj, reference=finer).get("apriori_refinement")
    assert check.passed, check.data


# ── 能量不等式 ───────────────────────────────────────────────────────────


def test_single_step_reduces_to_warm_start_slack():
    problem = Problem(
        build_rect_mesh(2, 2, 1.0, 1.0),
        Material(),
        LoadProgram(np.zeros(2), np.array([0.0, 0.2])),
    )
    traj = evolve(problem, SolverOptions(), steps=1)
    upper, lower = inequality_slacks(traj)
    assert upper.shape == lower.shape == (1,)
    assert upper[0] == pytest.approx(traj.records[1].warm_start_slack, abs=1e-12)
    assert energy_inequality_audit(traj).passed


# ── 稳定性 ───────────────────────────────────────────────────────────────


def test_margin_against_itself_is_zero(coarse_traj):
    q = coarse_traj.states[5]
    assert stability_margin(coarse_traj.times[5], q, q, coarse_traj.problem) == 0.0


def test_margin_against_previous_state_is_minus_warm_start_slack(coarse_traj):
    k = 7
    margin = stability_margin(
        coarse_traj.times[k], coarse_traj.states[k], coarse_traj.states[k - 1], coarse_traj.problem
    )
    slack = coarse_traj.records[k].warm_start_slack
    assert margin == pytest.approx(-slack, abs=1e-12 * (1.0 + abs(coarse_traj.energies[k])))


def test_reference_state_is_stable_under_zero_load():
    problem = Problem(build_rect_mesh(4, 4, 1.0, 1.0), Material())
    report = stability_probe(0.0, problem.initial_guess(), problem, n_samples=60, radius=0.01, seed=3)
    check = report.get("stability")
    assert check.passed
    assert check.value <= 0.0
    assert {"max_gaussian", "max_elastic", "max_plastic"} <= set(check.data)


def test_huge_radius_sampling_reports_infeasible_competitors():
    problem = Problem(build_rect_mesh(2, 2, 1.0, 1.0), Material())
    report = stability_probe(0.0, problem.initial_guess(), problem, n_samples=30, radius=10.0)
    assert report.get("stability").data["skipped"] > 0


# ── 速率无关性 ───────────────────────────────────────────────────────────


def test_rate_independence_small(small_cfg):
    report = rate_independence_audit(small_cfg)
    assert report.passed, report.to_text()
    assert report.get("rate_independence_states").value < 1e-10


def test_rate_independence_negative_control(small_cfg):
    other = _with(small_cfg, loading={"g_max": (0.0, 0.3)})
    report = rate_independence_audit(small_cfg, compressed=other)
    assert not report.passed


def test_discrepancy_of_different_lengths(small_cfg):
    a = run_evolution(small_cfg, probe_initial=False)
    b = run_evolution(_with(small_cfg, loading={"steps": 2}), probe_initial=False)
    assert trajectory_discrepancy(a, b) == (math.inf, math.inf)


@pytest.mark.slow
def test_demo_rate_independence(demo_cfg):
    report = rate_independence_audit(demo_cfg)
    assert report.passed, report.to_text()


# ── 反向 Young 不等式 ─────────────────────────────────────────────────────


def test_reverse_young_random_sweep():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        a, b = 10.0 ** rng.uniform(-1.0, 1.0, size=2)
        delta = 10.0 ** rng.uniform(-0.3, 0.3)
        r = rng.uniform(1.1, 5.0)
        check = reverse_young_check(a, b, delta, r).checks[0]
        rhs = check.data["rhs"]
        bound = -1e-12 * (1.0 + abs(rhs)) if math.isfinite(rhs) else 0.0
        assert check.value >= bound


@pytest.mark.parametrize("r", [2.0, 3.0, 1.5])
def test_reverse_young_equality_case(r):
    b, delta = 1.5, 0.8
    a = b ** (r / (r - 1.0)) * delta ** (r * r / (r - 1.0) ** 2)
    check = reverse_young_check(a, b, delta, r).checks[0]
    assert check.passed
    assert check.value == pytest.approx(0.0, abs=1e-12)


def test_reverse_young_square_case():
    # r = 2: a/b − 2δ²√a + δ⁴b = (√(a/b) − δ²√b)²
    a, b, delta = 2.0, 3.0, 0.7
    assert reverse_young_rhs(a, b, delta, 2.0) == pytest.approx(
        2.0 * delta**2 * math.sqrt(a) - delta**4 * b
    )


def test_reverse_young_overflow_is_handled():
    assert reverse_young_rhs(1.0, 1e6, 50.0, 1.01) == -math.inf
    assert reverse_young_check(1.0, 1e6, 50.0, 1.01).passed


def test_reverse_young_large_but_representable_rhs():
    # r = 2, b = 1, δ⁴ = 1e305, a = 4δ⁴：rhs = 4δ⁴ − δ⁴ = 3e305，lhs = 4e305
    delta = 10.0 ** (305.0 / 4.0)
    a = 4.0 * delta**4
    assert reverse_young_rhs(a, 1.0, delta, 2.0) == pytest.approx(3e305, rel=1e-10)
    check = reverse_young_check(a, 1.0, delta, 2.0).checks[0]
    assert check.passed
    assert check.value == pytest.approx(1e305, rel=1e-10)


def test_reverse_young_compares_in_log_space_beyond_float_range():
    # a/b = 1e320 与 2δ²√a = 2e310 都超出浮点范围
    a, b, delta = 1e300, 1e-20, 1e80
    assert reverse_young_rhs(a, b, delta, 2.0) == math.inf
    check = reverse_young_check(a, b, delta, 2.0).checks[0]
    assert check.passed
    assert check.value == pytest.approx(math.log(5e9), rel=1e-9)


@pytest.mark.parametrize(
    "args",
    [(1.0, 1.0, 1.0, 1.0), (0.0, 1.0, 1.0, 2.0), (1.0, -1.0, 1.0, 2.0), (1.0, 1.0, 0.0, 2.0), (math.nan, 1.0, 1.0, 2.0)],
)
def test_reverse_young_domain(args):
    with pytest.raises(DomainError):
        reverse_young_check(*args)


# ── τ 加密趋势 ───────────────────────────────────────────────────────────


@pytest.mark.slow
def test_balance_residual_trend(demo_cfg):
    report = balance_trend_audit(demo_cfg, steps=(10, 20, 40))
    assert report.passed, report.to_text()
