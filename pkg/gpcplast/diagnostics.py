"""
对计算轨迹的数值审计：双边离散能量不等式、稳定性采样、先验有界性、
速率无关性、单步检查以及独立的反向 Young 不等式。

失败不会抛出异常，而是以 :class:`~gpcplast.models.AuditCheck` 的形式记录在报告里。
"""

from __future__ import annotations

import logging
import math
import sys
from typing import Optional, Sequence

import numpy as np

from gpcplast.energy import State
from gpcplast.errors import DomainError, GpcPlastError
from gpcplast.models import AuditCheck, AuditReport, RunConfig, SolverOptions
from gpcplast.solver import Problem, Trajectory, run_evolution
from gpcplast.tensor import det, slip_matrix

logger = logging.getLogger(__name__)


def _report(*checks: AuditCheck) -> AuditReport:
    report = AuditReport(checks=list(checks))
    for c in checks:
        if not c.passed:
            logger.warning("审计未通过: %s (value=%.6e, tol=%.3e)", c.name, c.value, c.tolerance)
    return report


def _energy_scale(traj: Trajectory) -> float:
    return 1.0 + float(np.max(np.abs(traj.energies)))


# ── 离散能量不等式 ───────────────────────────────────────────────────────


def _worst_window(slacks: np.ndarray) -> tuple[float, int, int]:
    """所有连续区间和 Σ_{I<k≤II} s_k 的最小值及其端点 (I, II)。"""
    prefix = np.concatenate([[0.0], np.cumsum(slacks)])
    best, pair = 0.0, (0, 0)
    run_max, arg_max = prefix[0], 0
    for j in range(1, prefix.size):
        cand = prefix[j] - run_max
        if cand < best:
            best, pair = cand, (arg_max, j)
        if prefix[j] > run_max:
            run_max, arg_max = prefix[j], j
    return float(best), pair[0], pair[1]


def inequality_slacks(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """
    逐步的 (上界松弛, 下界松弛)，均应 ≥ 0::

        upper_k = −Δr_k·ℓ(y^{k−1}) − (ℐ_k + 𝒟_k − ℐ_{k−1})
        lower_k = (ℐ_k + 𝒟_k − ℐ_{k−1}) + Δr_k·ℓ(y^k)

    L 对 y 线性且 r 已知，区间上的功积分取闭式，不引入时间求积误差。
    """
    e = traj.energies
    d = traj.diss_increments
    r = np.asarray(traj.load_values)
    lw = np.asarray(traj.linear_work)
    inc = e[1:] + d[1:] - e[:-1]
    dr = np.diff(r)
    return -dr * lw[:-1] - inc, inc + dr * lw[1:]


def energy_inequality_audit(
    traj: Trajectory, opts: Optional[SolverOptions] = None
) -> AuditReport:
    """对所有 t_I ≤ t_II 检查双边能量不等式，报告两侧的最差松弛。"""
    opts = opts or SolverOptions()
    n = len(traj.records) - 1
    upper, lower = inequality_slacks(traj)
    bias = traj.problem.smoothing_bias(opts.eta)
    tol = (opts.e_tol + bias) * max(n, 1) + 1e-12 * _energy_scale(traj) * max(n, 1)

    checks = []
    for name, s in (("energy_inequality_upper", upper), ("energy_inequality_lower", lower)):
        worst, i, j = _worst_window(s) if s.size else (0.0, 0, 0)
        checks.append(
            AuditCheck(
                name=name,
                passed=worst >= -tol,
                value=worst,
                tolerance=tol,
                details=f"worst pair t_I={traj.times[i]:.6g}, t_II={traj.times[j]:.6g}",
                data={"t_I": traj.times[i], "t_II": traj.times[j]},
            )
        )
    return _report(*checks)


# ── 稳定性 ───────────────────────────────────────────────────────────────


def stability_margin(t: float, q: State, q_tilde: State, problem: Problem) -> float:
    """ℐ(t, q) − ℐ(t, q̃) − 𝒟(z, z̃)；正值即违背稳定性。不可行的 q̃ 返回 −inf。"""
    e_tilde = problem.energy(t, q_tilde)
    if not math.isfinite(e_tilde):
        return -math.inf
    return problem.energy(t, q) - e_tilde - problem.dissipation(q.z, q_tilde.z)


def stability_probe(
    t: float,
    q: State,
    problem: Problem,
    n_samples: int = 100,
    radius: float = 0.01,
    seed: int = 0,
    tol_rel: float = 1e-8,
    q_prev: Optional[State] = None,
) -> AuditReport:
    """
    随机竞争者（整体高斯扰动、纯弹性扰动、纯塑性扰动，轮流生成）加上 q^{k−1}，
    报告 max ℐ(t,q) − ℐ(t,q̃) − 𝒟(z,z̃)。Γ₀ 上的数据在扰动后保持不变。
    """
    energy = problem.energy(t, q)
    rng = np.random.default_rng(seed)
    x0 = problem.pack(q)
    n_y = problem.n_y
    kinds = ("gaussian", "elastic", "plastic")
    worst = {k: -math.inf for k in kinds}
    skipped = 0
    for i in range(n_samples):
        kind = kinds[i % 3]
        noise = radius * rng.standard_normal(x0.size)
        if kind == "elastic":
            noise[n_y:] = 0.0
        elif kind == "plastic":
            noise[:n_y] = 0.0
        margin = stability_margin(t, q, problem.unpack(x0 + noise), problem)
        if margin == -math.inf:
            skipped += 1
            continue
        worst[kind] = max(worst[kind], margin)

    data = {f"max_{k}": v for k, v in worst.items() if math.isfinite(v)}
    if q_prev is not None:
        data["q_prev"] = stability_margin(t, q, q_prev, problem)
    data["skipped"] = float(skipped)
    data["energy"] = energy
    margins = [v for k, v in data.items() if k.startswith("max_") or k == "q_prev"]
    value = max(margins) if margins else 0.0
    tol = tol_rel * (1.0 + abs(energy))
    return _report(
        AuditCheck(
            name="stability",
            passed=value <= tol,
            value=value,
            tolerance=tol,
            details=f"t={t:.6g}, {n_samples} samples, radius={radius:g}, skipped={skipped}",
            data=data,
        )
    )


def trajectory_stability_audit(
    traj: Trajectory,
    n_samples: int = 100,
    radius: float = 0.01,
    seed: int = 0,
    stride: int = 1,
    tol_rel: float = 1e-8,
) -> AuditReport:
    """对每 ``stride`` 个存储步做稳定性探测（第 k 步使用种子 seed + k）。"""
    worst_value, worst_tol, worst_k = -math.inf, 0.0, 0
    failures = 0
    for k in range(1, len(traj.states), stride):
        rep = stability_probe(
            traj.times[k],
            traj.states[k],
            traj.problem,
            n_samples=n_samples,
            radius=radius,
            seed=seed + k,
            tol_rel=tol_rel,
            q_prev=traj.states[k - 1],
        )
        check = rep.checks[0]
        failures += not check.passed
        if check.value - check.tolerance > worst_value - worst_tol:
            worst_value, worst_tol, worst_k = check.value, check.tolerance, k
    if worst_k == 0:
        worst_value = 0.0
    return _report(
        AuditCheck(
            name="stability_trajectory",
            passed=failures == 0,
            value=worst_value,
            tolerance=worst_tol,
            details=f"worst at step {worst_k}; {failures} step(s) violated",
            data={"worst_step": float(worst_k), "failures": float(failures)},
        )
    )


# ── 先验有界性 ───────────────────────────────────────────────────────────


def _sobolev_proxy(problem: Problem, u: np.ndarray, q: float) -> float:
    """节点值的加权 ℓ^q 范数 + 单元梯度的 L^q 范数。"""
    mesh = problem.mesh
    u2 = u.reshape(mesh.n_nodes, -1)
    nodal = float(mesh.lumped_areas @ np.linalg.norm(u2, axis=1) ** q) ** (1.0 / q)
    grad = mesh.element_gradient(u)
    gn = np.sqrt(np.sum(grad * grad, axis=tuple(range(1, grad.ndim))))
    return nodal + float(mesh.element_areas @ gn**q) ** (1.0 / q)


def apriori_bounds(traj: Trajectory) -> dict[str, float]:
    mat = traj.problem.material
    out = {
        "y_sup": max(_sobolev_proxy(traj.problem, q.y, mat.sobolev_d) for q in traj.states),
        "var_total": traj.var_total,
        "gamma_sup": max(_sobolev_proxy(traj.problem, q.gamma, mat.beta) for q in traj.states),
    }
    if mat.hardening_enabled:
        out["p_sup"] = max(_sobolev_proxy(traj.problem, q.p, mat.omega) for q in traj.states)
    return out


def _within_factor(a: float, b: float, factor: float = 2.0, floor: float = 1e-14) -> bool:
    if max(a, b) <= floor:
        return True
    return max(a, b) <= factor * min(a, b)


def apriori_audit(traj: Trajectory, reference: Optional[Trajectory] = None) -> AuditReport:
    """
    sup_t ‖y‖_{W^{1,d}}、Var 与 z 的 Sobolev 代理范数；
    给定参考轨迹（如 τ 减半的运行）时，各上确界须在 2 倍以内一致。
    """
    bounds = apriori_bounds(traj)
    finite = all(math.isfinite(v) for v in bounds.values())
    checks = [
        AuditCheck(
            name="apriori_bounded",
            passed=finite,
            value=max(bounds.values()),
            tolerance=sys.float_info.max,
            details=", ".join(f"{k}={v:.6e}" for k, v in bounds.items()),
            data=bounds,
        )
    ]

    var_direct = traj.variation(traj.times[0], traj.times[-1])
    ledger = float(np.sum(traj.diss_increments))
    tol = 1e-12 * (1.0 + abs(ledger))
    checks.append(
        AuditCheck(
            name="apriori_var_consistency",
            passed=abs(var_direct - ledger) <= tol,
            value=abs(var_direct - ledger),
            tolerance=tol,
            details=f"Var={var_direct:.12e}, ledger sum={ledger:.12e}",
        )
    )

    if reference is not None:
        ref = apriori_bounds(reference)
        ratios = {
            k: max(bounds[k], ref[k]) / max(min(bounds[k], ref[k]), 1e-300) for k in bounds
        }
        ok = all(_within_factor(bounds[k], ref[k]) for k in bounds)
        checks.append(
            AuditCheck(
                name="apriori_refinement",
                passed=ok,
                value=max(
                    (r for k, r in ratios.items() if max(bounds[k], ref[k]) > 1e-14),
                    default=1.0,
                ),
                tolerance=2.0,
                details="sup ratios between runs",
                data=ratios,
            )
        )
    return _report(*checks)


# ── 速率无关性 ───────────────────────────────────────────────────────────


def compressed_config(config: RunConfig) -> RunConfig:
    """同样步数、载荷值序列相同、时间区间压缩为 [0, T/2] 的配置。"""
    loading = config.loading.model_copy(update={"T": config.loading.T / 2.0})
    solver = config.solver.model_copy(update={"tau": None})
    return config.model_copy(update={"loading": loading, "solver": solver})


def trajectory_discrepancy(a: Trajectory, b: Trajectory) -> tuple[float, float]:
    """(最大状态自由度差, Var 差)；步数不同时为 inf。"""
    if len(a.states) != len(b.states):
        return math.inf, math.inf
    state_diff = max(
        float(np.max(np.abs(a.problem.pack(qa) - b.problem.pack(qb))))
        for qa, qb in zip(a.states, b.states)
    )
    return state_diff, abs(a.var_total - b.var_total)


def rate_independence_audit(
    config: RunConfig, compressed: Optional[RunConfig] = None, tol: float = 1e-10
) -> AuditReport:
    """原始载荷与时间压缩载荷各跑一次，比较状态序列与 Var。"""
    compressed = compressed or compressed_config(config)
    original = run_evolution(config, probe_initial=False)
    rerun = run_evolution(compressed, probe_initial=False)
    state_diff, var_diff = trajectory_discrepancy(original, rerun)
    return _report(
        AuditCheck(
            name="rate_independence_states",
            passed=state_diff < tol,
            value=state_diff,
            tolerance=tol,
            details=f"T={config.loading.T:g} vs T={compressed.loading.T:g}",
        ),
        AuditCheck(
            name="rate_independence_var",
            passed=var_diff < tol,
            value=var_diff,
            tolerance=tol,
            details=f"Var={original.var_total:.12e} vs {rerun.var_total:.12e}",
        ),
    )


# ── 反向 Young 不等式 ─────────────────────────────────────────────────────


_LOG_MAX = math.log(sys.float_info.max)


def _reverse_young_logs(a: float, b: float, delta: float, r: float) -> tuple[float, float]:
    """右端两项的对数 (log 正项, log 负项)。"""
    e1 = r / (r - 1.0)
    t1 = math.log(r) + e1 * math.log(delta) + math.log(a) / r
    t2 = math.log(r - 1.0) + e1 * e1 * math.log(delta) + math.log(b) / (r - 1.0)
    return t1, t2


def _log_difference(t1: float, t2: float) -> tuple[int, float]:
    """exp(t1) − exp(t2) 的 (符号, 对数模)。"""
    if t1 == t2:
        return 0, -math.inf
    hi, lo = max(t1, t2), min(t1, t2)
    return (1 if t1 > t2 else -1), hi + math.log1p(-math.exp(lo - hi))


def reverse_young_rhs(a: float, b: float, delta: float, r: float) -> float:
    """r·δ^{r/(r−1)}·a^{1/r} − (r−1)·δ^{r²/(r−1)²}·b^{1/(r−1)}；超出浮点范围时为 ±inf。"""
    t1, t2 = _reverse_young_logs(a, b, delta, r)
    if max(t1, t2) < _LOG_MAX:
        return math.exp(t1) - math.exp(t2)
    sign, log_mag = _log_difference(t1, t2)
    if sign == 0:
        return 0.0
    return sign * (math.inf if log_mag >= _LOG_MAX else math.exp(log_mag))


def reverse_young_check(a: float, b: float, delta: float, r: float) -> AuditReport:
    """
    a/b ≥ r·δ^{r/(r−1)}·a^{1/r} − (r−1)·δ^{r²/(r−1)²}·b^{1/(r−1)}。

    两边均可表示时按绝对差比较；任一边溢出时改用对数比 log(lhs/rhs)，
    此时 value 与 tolerance 都是对数量。
    """
    values = {"a": a, "b": b, "delta": delta, "r": r}
    if any(not math.isfinite(v) for v in values.values()):
        raise DomainError("输入必须为有限数", data=values)
    if a <= 0 or b <= 0 or delta <= 0:
        raise DomainError("a、b、delta 必须 > 0", data=values)
    if r <= 1:
        raise DomainError("r 必须 > 1", data=values)
    lhs = a / b
    rhs = reverse_young_rhs(a, b, delta, r)
    if math.isfinite(lhs) and math.isfinite(rhs):
        tol = 1e-12 * (1.0 + abs(rhs))
        slack = lhs - rhs
        details = f"lhs={lhs:.12e}, rhs={rhs:.12e}"
    else:
        sign, log_rhs = _log_difference(*_reverse_young_logs(a, b, delta, r))
        tol = -math.log1p(-1e-12)
        log_lhs = math.log(a) - math.log(b)
        slack = log_lhs - log_rhs if sign > 0 else math.inf
        details = f"log lhs={log_lhs:.12e}, log|rhs|={log_rhs:.12e} (sign {sign:+d})"
    return AuditReport(
        checks=[
            AuditCheck(
                name="reverse_young",
                passed=slack >= -tol,
                value=slack,
                tolerance=tol,
                details=details,
                data={"lhs": lhs, "rhs": rhs},
            )
        ]
    )


# ── 单步检查 ─────────────────────────────────────────────────────────────


def step_audit(traj: Trajectory, opts: Optional[SolverOptions] = None) -> AuditReport:
    """det F_p = 1（节点）、det F_e > 0（单元）与每步的暖启动占优。"""
    opts = opts or SolverOptions()
    problem = traj.problem
    slip = problem.material.slip
    unimod = max(float(np.max(np.abs(det(slip_matrix(q.gamma, slip)) - 1.0))) for q in traj.states)
    min_det = min(float(problem.assembler.kinematics(q).J.min()) for q in traj.states)

    worst_slack, worst_tol, worst_k = math.inf, 0.0, 0
    for k in range(1, len(traj.states)):
        t = traj.times[k]
        warm = problem.energy(t, traj.states[k - 1])
        rec = traj.records[k]
        slack = warm - rec.energy - rec.diss_increment
        tol = 1e-10 * (1.0 + abs(warm)) + problem.smoothing_bias(opts.eta)
        if slack + tol < worst_slack + worst_tol:
            worst_slack, worst_tol, worst_k = slack, tol, k
    if worst_k == 0:
        worst_slack, worst_tol = 0.0, 0.0

    return _report(
        AuditCheck(
            name="unimodularity",
            passed=unimod <= 1e-14,
            value=unimod,
            tolerance=1e-14,
            details="max |det F_p − 1| over nodes and steps",
        ),
        AuditCheck(
            name="feasibility",
            passed=min_det > 0.0,
            value=min_det,
            tolerance=0.0,
            details="min det F_e over elements and steps",
        ),
        AuditCheck(
            name="warm_start_dominance",
            passed=worst_slack >= -worst_tol,
            value=worst_slack,
            tolerance=worst_tol,
            details=f"min slack at step {worst_k}",
        ),
    )


# ── τ 加密趋势 ───────────────────────────────────────────────────────────


def balance_trend_audit(config: RunConfig, steps: Sequence[int] = (10, 20, 40)) -> AuditReport:
    """能量平衡残差的最大值随 τ 减半不增（只检查趋势，不声称收敛阶）。"""
    residuals = []
    for n in steps:
        cfg = config.model_copy(
            update={
                "loading": config.loading.model_copy(update={"steps": n}),
                "solver": config.solver.model_copy(update={"tau": None}),
            }
        )
        traj = run_evolution(cfg, probe_initial=False)
        residuals.append(max(abs(r.balance_residual) for r in traj.records))
    tol = 1e-12
    increases = [b - a for a, b in zip(residuals, residuals[1:])]
    worst = max(increases, default=0.0)
    return _report(
        AuditCheck(
            name="balance_trend",
            passed=worst <= tol,
            value=worst,
            tolerance=tol,
            details=", ".join(f"N={n}: {r:.6e}" for n, r in zip(steps, residuals)),
            data={f"N{n}": r for n, r in zip(steps, residuals)},
        )
    )


# ── 汇总 ─────────────────────────────────────────────────────────────────


def run_audits(traj: Trajectory, config: RunConfig) -> AuditReport:
    """按 ``[audit]`` 配置执行启用的审计。"""
    a = config.audit
    report = AuditReport()
    if traj.initial_stability is not None:
        init = traj.initial_stability.checks[0].model_copy(update={"name": "stability_initial"})
        report.checks.append(init)
    if a.step_checks:
        report.extend(step_audit(traj, config.solver))
    if a.energy_inequality:
        report.extend(energy_inequality_audit(traj, config.solver))
    if a.stability:
        report.extend(
            trajectory_stability_audit(
                traj, a.n_samples, a.radius, a.seed, a.stability_stride, a.tol_stab_rel
            )
        )
    if a.apriori:
        report.extend(apriori_audit(traj))
    if a.rate_independence:
        try:
            report.extend(rate_independence_audit(config))
        except GpcPlastError as exc:
            report.checks.append(
                AuditCheck(
                    name="rate_independence_states",
                    passed=False,
                    value=math.inf,
                    tolerance=1e-10,
                    details=f"rerun failed: {exc.message}",
                )
            )
    logger.info("审计完成: %s (%d 项)", "PASS" if report.passed else "FAIL", len(report.checks))
    return report
