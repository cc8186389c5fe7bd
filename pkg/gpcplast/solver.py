"""
时间增量极小化引擎。

每个时间点 t_k 求解 min_q ℐ(t_k, q) + 𝒟(z^{k−1}, z)：
弹性块 (y) 与塑性块 (γ, p) 交替下降，耗散在子步内以 ρ_η 光滑化，
交替结束后对全部自由度做一次联合打磨。所有台账量使用精确的 |·| 距离。

局部下降无法保证全局极小；与全局稳定性的差距由 diagnostics 中的稳定性探测量化。
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from gpcplast.dissipation import SmoothedDissipation, diss_distance, variation
from gpcplast.energy import EnergyAssembler, LoadProgram, PlasticState, State
from gpcplast.errors import GpcPlastError, InfeasiblePoint, LineSearchFailure
from gpcplast.linesearch import DescentResult, Objective, minimize
from gpcplast.mesh import Mesh, build_rect_mesh
from gpcplast.models import (
    AuditReport,
    DissipationSpec,
    Material,
    RunConfig,
    SolverOptions,
)

logger = logging.getLogger(__name__)


# ── 问题上下文 ───────────────────────────────────────────────────────────


class Problem:
    """
    一次运行的全部不可变上下文：网格、材料、载荷、Dirichlet 数据与装配器。

    自由自由度向量的排列为 ``[y(非 Γ₀ 节点).ravel(), γ, p.ravel()]``。
    """

    def __init__(
        self,
        mesh: Mesh,
        material: Material,
        loads: Optional[LoadProgram] = None,
        gamma0_data: str = "natural",
        threads: Optional[int] = None,
    ) -> None:
        self.mesh = mesh
        self.material = material
        self.loads = loads or LoadProgram.zero()
        self.dspec = DissipationSpec.from_material(material)
        self.assembler = EnergyAssembler(mesh, material, self.loads, threads=threads)
        self.stretch = material.natural_stretch() if gamma0_data == "natural" else 1.0
        self.y_dirichlet = self.stretch * np.array(mesh.nodes)
        self.n_y = 2 * mesh.free_nodes.size
        self.n_gamma = mesh.n_nodes
        self.n_p = mesh.n_nodes * material.m

    @classmethod
    def from_config(cls, cfg: RunConfig, threads: Optional[int] = None) -> "Problem":
        mc = cfg.mesh
        mesh = build_rect_mesh(mc.nx, mc.ny, mc.Lx, mc.Ly, mc.gamma0_side, mc.gamma1_side)
        return cls(
            mesh,
            cfg.material,
            LoadProgram.from_config(cfg.loading),
            gamma0_data=mc.gamma0_data,
            threads=threads,
        )

    @property
    def n_free(self) -> int:
        return self.n_y + self.n_gamma + self.n_p

    def initial_guess(self) -> State:
        """y = y₀(x)（Γ₀ 数据的自然延拓）、γ ≡ 0、p ≡ 0。"""
        return State(
            y=self.y_dirichlet.copy(),
            gamma=np.zeros(self.mesh.n_nodes),
            p=np.zeros((self.mesh.n_nodes, self.material.m)),
            slip=self.material.slip,
        )

    def pack(self, q: State) -> NDArray[np.float64]:
        return np.concatenate([q.y[self.mesh.free_nodes].ravel(), q.gamma, q.p.ravel()])

    def unpack(self, x: NDArray[np.float64]) -> State:
        y = self.y_dirichlet.copy()
        y[self.mesh.free_nodes] = x[: self.n_y].reshape(-1, 2)
        gamma = x[self.n_y : self.n_y + self.n_gamma].copy()
        p = x[self.n_y + self.n_gamma :].reshape(self.mesh.n_nodes, self.material.m).copy()
        return State(y=y, gamma=gamma, p=p, slip=self.material.slip)

    def energy(self, t: float, q: State) -> float:
        return self.assembler.total(t, q)

    def dissipation(self, z1: PlasticState, z2: PlasticState) -> float:
        return diss_distance(z1, z2, self.mesh, self.dspec)

    def incremental_objective(self, t: float, q: State, z_prev: PlasticState) -> float:
        """精确的 ℐ(t, q) + 𝒟(z_prev, z)。"""
        e = self.energy(t, q)
        return e + self.dissipation(z_prev, q.z) if math.isfinite(e) else math.inf

    def smoothing_bias(self, eta: float) -> float:
        """单步上光滑化带来的耗散偏差上界 η·(κ + κ_p)·|Ω|。"""
        return eta * (self.dspec.kappa + self.dspec.kappa_p) * self.mesh.area


# ── 块目标 ───────────────────────────────────────────────────────────────


class BlockObjective(Objective):
    """
    在固定其余自由度的前提下，把 ℐ(t, ·) + 光滑耗散限制到所选的块上。

    ``block`` 取 ``"y"``、``"z"`` 或 ``"all"``。
    """

    def __init__(
        self,
        problem: Problem,
        t: float,
        base: State,
        smooth: SmoothedDissipation,
        block: str,
    ) -> None:
        self.problem = problem
        self.t = t
        self.smooth = smooth
        self.block = block
        self._base = problem.pack(base)
        n_y = problem.n_y
        if block == "y":
            self._sel = slice(0, n_y)
        elif block == "z":
            self._sel = slice(n_y, problem.n_free)
        elif block == "all":
            self._sel = slice(0, problem.n_free)
        else:
            raise ValueError(f"未知的块: {block!r}")
        self._scales: Optional[NDArray[np.float64]] = None

    # 块向量 ↔ 完整状态
    def full(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        v = self._base.copy()
        v[self._sel] = x
        return v

    def state(self, x: NDArray[np.float64]) -> State:
        return self.problem.unpack(self.full(x))

    def start(self) -> NDArray[np.float64]:
        return self._base[self._sel].copy()

    def _split_z(self, v: NDArray[np.float64]) -> tuple[np.ndarray, np.ndarray]:
        p = self.problem
        gamma = v[p.n_y : p.n_y + p.n_gamma]
        pp = v[p.n_y + p.n_gamma :].reshape(p.mesh.n_nodes, p.material.m)
        return gamma, pp

    def _with_diss(self) -> bool:
        return self.block != "y"

    def value(self, x: NDArray[np.float64]) -> float:
        v = self.full(x)
        e = self.problem.assembler.total(self.t, self.problem.unpack(v))
        if not math.isfinite(e):
            return math.inf
        if self._with_diss():
            e += self.smooth.value(*self._split_z(v))
        return e

    def smooth_gradient(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        v = self.full(x)
        g = self.problem.assembler.free_gradient(self.t, self.problem.unpack(v))
        return g[self._sel]

    def _diss_gradient(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        gg, gp = self.smooth.gradient(*self._split_z(self.full(x)))
        return self._place_z(gg, gp)

    def _place_z(self, gg: np.ndarray, gp: np.ndarray) -> NDArray[np.float64]:
        out = np.zeros(self.problem.n_free)
        n_y, n_g = self.problem.n_y, self.problem.n_gamma
        out[n_y : n_y + n_g] = gg
        out[n_y + n_g :] = gp.ravel()
        return out[self._sel]

    def gradient(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        g = self.smooth_gradient(x)
        if self._with_diss():
            g = g + self._diss_gradient(x)
        return g

    def hessp(self, x, v, g=None):
        scale = float(np.max(np.abs(v)))
        if scale == 0.0:
            return np.zeros_like(v)
        eps = 1e-7 / scale
        g0 = self.smooth_gradient(x)
        h = (self.smooth_gradient(x + eps * v) - g0) / eps
        if self._with_diss():
            gamma, p = self._split_z(self.full(x))
            dv = np.zeros(self.problem.n_free)
            dv[self._sel] = v
            vg, vp = self._split_z(dv)
            hg, hp = self.smooth.hessp(gamma, p, vg, vp)
            h = h + self._place_z(hg, hp)
        return h

    def _block_scales(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """各块光滑部分 Hessian 对角线均值的 Hutchinson 估计（固定种子）。"""
        p = self.problem
        bounds = [(0, p.n_y), (p.n_y, p.n_y + p.n_gamma), (p.n_y + p.n_gamma, p.n_free)]
        lo, hi = self._sel.start, self._sel.stop
        rng = np.random.default_rng(0)
        scales = np.ones(hi - lo)
        g0 = self.smooth_gradient(x)
        for a, b in bounds:
            a, b = max(a, lo), min(b, hi)
            if b <= a:
                continue
            v = np.zeros(hi - lo)
            v[a - lo : b - lo] = rng.choice([-1.0, 1.0], size=b - a)
            eps = 1e-7
            try:
                hv = (self.smooth_gradient(x + eps * v) - g0) / eps
            except GpcPlastError:
                continue
            est = float(v @ hv) / (b - a)
            if math.isfinite(est) and est > 0.0:
                scales[a - lo : b - lo] = est
        return scales

    def diag(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        if self._scales is None:
            self._scales = self._block_scales(x)
        d = self._scales.copy()
        if self._with_diss():
            dg, dp = self.smooth.diag(*self._split_z(self.full(x)))
            d = d + self._place_z(dg, dp)
        return d


# ── 子步 ─────────────────────────────────────────────────────────────────


@dataclass
class StepStats:
    outer_iters: int = 0
    inner_iters: int = 0
    grad_norm: float = math.nan
    converged: bool = False
    objective: float = math.nan
    warm_start: float = math.nan
    history: list[float] = field(default_factory=list)

    @property
    def warm_start_slack(self) -> float:
        """ℐ(t_k, q^{k−1}) − [ℐ(t_k, q^k) + 𝒟(z^{k−1}, z^k)]，应 ≥ 0。"""
        return self.warm_start - self.objective


def _smoothed(problem: Problem, z_prev: PlasticState, opts: SolverOptions) -> SmoothedDissipation:
    return SmoothedDissipation(problem.mesh, problem.dspec, z_prev, opts.eta)


def elastic_substep(
    t: float,
    z: PlasticState,
    y_init: NDArray[np.float64],
    problem: Problem,
    opts: SolverOptions,
    *,
    g_tol: Optional[float] = None,
) -> tuple[NDArray[np.float64], DescentResult]:
    """固定 z，对 y ↦ ℐ(t, (y, z)) 下降；被接受的迭代点均满足 det F_e > 0。"""
    q = State(y=np.asarray(y_init, dtype=float), gamma=z.gamma, p=z.p, slip=problem.material.slip)
    if not math.isfinite(problem.energy(t, q)):
        raise InfeasiblePoint("弹性子步的初始点能量非有限")
    obj = BlockObjective(problem, t, q, _smoothed(problem, z, opts), "y")
    res = minimize(obj, obj.start(), opts, g_tol=g_tol, label="elastic")
    return obj.state(res.x).y, res


def plastic_substep(
    t: float,
    y: NDArray[np.float64],
    z_init: PlasticState,
    z_prev: PlasticState,
    problem: Problem,
    opts: SolverOptions,
    *,
    g_tol: Optional[float] = None,
) -> tuple[PlasticState, DescentResult]:
    """固定 y，对 z ↦ ℐ(t, (y, z)) + ∫κ ρ_η(γ − γ_prev) 下降。"""
    q = State(y=np.asarray(y, dtype=float), gamma=z_init.gamma, p=z_init.p, slip=problem.material.slip)
    if not math.isfinite(problem.energy(t, q)):
        raise InfeasiblePoint("塑性子步的初始点能量非有限")
    obj = BlockObjective(problem, t, q, _smoothed(problem, z_prev, opts), "z")
    res = minimize(obj, obj.start(), opts, g_tol=g_tol, label="plastic")
    return obj.state(res.x).z, res


# ── 增量步 ───────────────────────────────────────────────────────────────


def _alternate(
    t: float,
    q_start: State,
    z_prev: PlasticState,
    problem: Problem,
    opts: SolverOptions,
) -> tuple[State, StepStats]:
    smooth = _smoothed(problem, z_prev, opts)
    stats = StepStats()
    q = q_start
    joint = BlockObjective(problem, t, q, smooth, "all")
    f_old = joint.value(joint.start())
    stats.history.append(f_old)

    for outer in range(opts.max_outer):
        joint = BlockObjective(problem, t, q, smooth, "all")
        gnorm = float(np.linalg.norm(joint.gradient(joint.start())))
        if gnorm <= opts.g_tol:
            break
        block_tol = max(opts.g_tol, opts.block_forcing * gnorm)
        y, res_y = elastic_substep(t, q.z, q.y, problem, opts, g_tol=block_tol)
        q = q.with_(y=y)
        z, res_z = plastic_substep(t, q.y, q.z, z_prev, problem, opts, g_tol=block_tol)
        q = q.with_(gamma=z.gamma, p=z.p)
        stats.outer_iters = outer + 1
        stats.inner_iters += res_y.iterations + res_z.iterations
        f_new = joint.value(problem.pack(q))
        stats.history.append(f_new)
        decrease = f_old - f_new
        f_old = f_new
        if decrease < opts.e_tol:
            break
    else:
        logger.warning("t=%.6g: 交替迭代达到上限 max_outer=%d", t, opts.max_outer)

    joint = BlockObjective(problem, t, q, smooth, "all")
    if opts.polish:
        res = minimize(joint, joint.start(), opts, label="polish")
        q = joint.state(res.x)
        stats.inner_iters += res.iterations
        stats.grad_norm = res.grad_norm
        stats.history.extend(res.history[1:])
    else:
        stats.grad_norm = float(np.linalg.norm(joint.gradient(joint.start())))
    stats.converged = stats.grad_norm <= opts.g_tol
    return q, stats


def _perturbed_starts(
    q_prev: State, problem: Problem, opts: SolverOptions, t: float
) -> list[State]:
    starts = [q_prev]
    rng = np.random.default_rng(opts.seed)
    x0 = problem.pack(q_prev)
    for _ in range(opts.n_starts - 1):
        x = x0 + opts.start_radius * rng.standard_normal(x0.size)
        cand = problem.unpack(x)
        if math.isfinite(problem.energy(t, cand)):
            starts.append(cand)
    return starts


def solve_step(
    t_k: float,
    q_prev: State,
    problem: Problem,
    opts: SolverOptions,
    z_prev: Optional[PlasticState] = None,
) -> tuple[State, StepStats]:
    """
    一个增量步，返回 (q_k, 统计量)。

    q_k 的精确目标值从不高于暖启动 ℐ(t_k, q_prev)：若光滑化偏差使候选解
    略差于暖启动，则保留 q_prev。
    """
    z_prev = q_prev.z if z_prev is None else z_prev
    warm = problem.energy(t_k, q_prev)
    if not math.isfinite(warm):
        raise InfeasiblePoint(f"t={t_k:g}: 暖启动点能量非有限")
    warm_obj = problem.incremental_objective(t_k, q_prev, z_prev)

    best: Optional[tuple[State, StepStats, float]] = None
    for i, start in enumerate(_perturbed_starts(q_prev, problem, opts, t_k)):
        try:
            q, stats = _alternate(t_k, start, z_prev, problem, opts)
        except LineSearchFailure:
            if i == 0:
                raise
            logger.warning("t=%.6g: 第 %d 个起点的下降失败，已跳过", t_k, i)
            continue
        obj = problem.incremental_objective(t_k, q, z_prev)
        if best is None or obj < best[2]:
            best = (q, stats, obj)
    assert best is not None
    q, stats, obj = best

    if obj > warm_obj:
        logger.debug(
            "t=%.6g: 候选解精确目标 %.15e 高于暖启动 %.15e，保留暖启动", t_k, obj, warm_obj
        )
        q, obj = q_prev, warm_obj
    if obj > warm + opts.e_tol + problem.smoothing_bias(opts.eta):
        logger.warning(
            "t=%.6g: 增量目标 %.15e 超出暖启动 %.15e 的容许范围", t_k, obj, warm
        )
    stats.objective = obj
    stats.warm_start = warm
    return q, stats


def incremental_step(
    t_k: float, q_prev: State, problem: Problem, opts: SolverOptions
) -> State:
    """min_q ℐ(t_k, q) + 𝒟(z_prev, z)，从 q_prev 暖启动。"""
    return solve_step(t_k, q_prev, problem, opts)[0]


# ── 演化 ─────────────────────────────────────────────────────────────────


@dataclass
class StepRecord:
    k: int
    t: float
    energy: float
    diss_increment: float
    var_cumulative: float
    work_increment: float
    balance_residual: float
    outer_iters: int
    inner_iters: int
    grad_norm: float
    converged: bool
    warm_start_slack: float


@dataclass
class Trajectory:
    """分段常值插值 q_τ(t) = q^k，t ∈ [t_k, t_{k+1})。"""

    mesh: Mesh
    problem: Problem
    times: list[float] = field(default_factory=list)
    states: list[State] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)
    load_values: list[float] = field(default_factory=list)
    linear_work: list[float] = field(default_factory=list)
    initial_stability: Optional[AuditReport] = None
    wall_time: float = 0.0

    @property
    def energies(self) -> NDArray[np.float64]:
        return np.array([r.energy for r in self.records])

    @property
    def diss_increments(self) -> NDArray[np.float64]:
        return np.array([r.diss_increment for r in self.records])

    @property
    def var_total(self) -> float:
        return self.records[-1].var_cumulative if self.records else 0.0

    def variation(self, t0: float, t1: float) -> float:
        return variation(self, t0, t1, self.problem.dspec, self.mesh)


def initial_state(problem: Problem, opts: SolverOptions) -> State:
    """t = 0 的纯弹性问题（γ ≡ 0），从 Γ₀ 数据的自然延拓出发。"""
    q = problem.initial_guess()
    y, res = elastic_substep(0.0, q.z, q.y, problem, opts)
    logger.info("初始弹性解: ℐ=%.12e, ‖g‖=%.3e, 迭代 %d", res.value, res.grad_norm, res.iterations)
    return q.with_(y=y)


def _record(
    k: int,
    t: float,
    energy: float,
    diss: float,
    var_cum: float,
    work: float,
    balance: float,
    stats: Optional[StepStats],
) -> StepRecord:
    return StepRecord(
        k=k,
        t=t,
        energy=energy,
        diss_increment=diss,
        var_cumulative=var_cum,
        work_increment=work,
        balance_residual=balance,
        outer_iters=stats.outer_iters if stats else 0,
        inner_iters=stats.inner_iters if stats else 0,
        grad_norm=stats.grad_norm if stats else 0.0,
        converged=stats.converged if stats else True,
        warm_start_slack=stats.warm_start_slack if stats else 0.0,
    )


def evolve(
    problem: Problem,
    opts: SolverOptions,
    steps: int,
    q0: Optional[State] = None,
    probe: Optional[dict] = None,
) -> Trajectory:
    """在 [0, T] 上以 N = steps 个等距步推进；t_k = k·T/N。"""
    started = time.perf_counter()
    T = problem.loads.T
    times = [k * T / steps for k in range(steps + 1)]
    q = initial_state(problem, opts) if q0 is None else q0
    traj = Trajectory(mesh=problem.mesh, problem=problem)
    e0 = problem.energy(times[0], q)
    traj.times.append(times[0])
    traj.states.append(q)
    traj.load_values.append(problem.loads.ramp(times[0]))
    traj.linear_work.append(problem.assembler.linear_work(q.y))
    traj.records.append(_record(0, times[0], e0, 0.0, 0.0, 0.0, 0.0, None))

    if probe is not None:
        from gpcplast.diagnostics import stability_probe

        traj.initial_stability = stability_probe(times[0], q, problem, **probe)
        if not traj.initial_stability.passed:
            logger.warning("初始条件 q⁰ 未通过稳定性探测")

    var_cum = 0.0
    work_sum = 0.0
    for k in range(1, steps + 1):
        t = times[k]
        q_prev = q
        try:
            q, stats = solve_step(t, q_prev, problem, opts)
        except GpcPlastError as exc:
            data = dict(exc.data) if isinstance(exc.data, dict) else {}
            data["step"] = k
            raise type(exc)(f"第 {k} 步 (t={t:g}) 失败: {exc.message}", data=data) from exc
        energy = problem.energy(t, q)
        diss = problem.dissipation(q_prev.z, q.z)
        r_k = problem.loads.ramp(t)
        work = (r_k - traj.load_values[-1]) * traj.linear_work[-1]
        var_cum += diss
        work_sum += work
        balance = energy + var_cum - e0 + work_sum

        traj.times.append(t)
        traj.states.append(q)
        traj.load_values.append(r_k)
        traj.linear_work.append(problem.assembler.linear_work(q.y))
        traj.records.append(_record(k, t, energy, diss, var_cum, work, balance, stats))
        logger.info(
            "step %d/%d t=%.6g ℐ=%.12e 𝒟=%.3e outer=%d inner=%d ‖g‖=%.3e",
            k,
            steps,
            t,
            energy,
            diss,
            stats.outer_iters,
            stats.inner_iters,
            stats.grad_norm,
        )
    traj.wall_time = time.perf_counter() - started
    return traj


def run_evolution(config: RunConfig, probe_initial: bool = True) -> Trajectory:
    """按运行配置完成一整次演化；q⁰ 的稳定性按审计配置探测。"""
    problem = Problem.from_config(config)
    logger.info(
        "开始演化: %d 个节点, %d 个单元, N=%d, T=%g",
        problem.mesh.n_nodes,
        problem.mesh.n_elements,
        config.loading.steps,
        config.loading.T,
    )
    probe = None
    if probe_initial and config.audit.stability:
        a = config.audit
        probe = {
            "n_samples": a.n_samples,
            "radius": a.radius,
            "seed": a.seed,
            "tol_rel": a.tol_stab_rel,
        }
    traj = evolve(problem, config.solver, config.loading.steps, probe=probe)
    logger.info("演化完成: Var=%.6e, 用时 %.2fs", traj.var_total, traj.wall_time)
    return traj
