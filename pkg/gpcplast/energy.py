"""
储能 W = W₁(F_e, H) + W₂、载荷泛函 L(t, y)、总泛函 ℐ(t, q) 的装配，
以及对全部自由自由度的解析梯度。

离散约定（P1 单元）::

    F    = ∇y                              单元常量
    F_p  = I + γ̄ a⊗b                       γ̄ 为单元三个顶点的平均
    F_e  = F F_p⁻¹
    A    = cof(F) F_pᵀ
    H    = ∇(recover_nodal(A))             梯度恢复
    G    = ∇γ

不可行（任一单元 det F_e ≤ 0）以 ``+inf`` 哨兵值表示，而非抛出异常。
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from config import settings
from gpcplast.errors import DimensionMismatch, InfeasiblePoint
from gpcplast.mesh import Mesh
from gpcplast.models import LoadingConfig, Material, SlipSystem
from gpcplast.tensor import cof, cof_vjp, det, inv_cramer, slip_matrix

logger = logging.getLogger(__name__)

INFEASIBLE = math.inf

# 单元数超过该值时才把逐点计算分块派发到线程池
_PARALLEL_MIN_ELEMENTS = 4096


# ── 状态与载荷 ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class PlasticState:
    """塑性状态 z = (γ, p)。"""

    gamma: NDArray[np.float64]
    p: NDArray[np.float64]


@dataclass(frozen=True)
class State:
    """q = (y, z)：节点变形场、滑移场与可选的硬化变量。"""

    y: NDArray[np.float64]
    gamma: NDArray[np.float64]
    p: NDArray[np.float64]
    slip: SlipSystem = field(default_factory=SlipSystem)

    @property
    def z(self) -> PlasticState:
        return PlasticState(self.gamma, self.p)

    def with_(self, **changes: object) -> "State":
        return replace(self, **changes)

    @classmethod
    def reference(
        cls, mesh: Mesh, slip: SlipSystem, m: int = 0, stretch: float = 1.0
    ) -> "State":
        """y = stretch·x、γ ≡ 0、p ≡ 0。"""
        return cls(
            y=stretch * np.array(mesh.nodes),
            gamma=np.zeros(mesh.n_nodes),
            p=np.zeros((mesh.n_nodes, m)),
            slip=slip,
        )


def _linear_ramp(s: float) -> float:
    return s


def _linear_rate(s: float) -> float:
    return 1.0


def _sin_ramp(s: float) -> float:
    return math.sin(2.0 * math.pi * s)


def _sin_rate(s: float) -> float:
    return 2.0 * math.pi * math.cos(2.0 * math.pi * s)


_RAMPS: dict[str, tuple[Callable[[float], float], Callable[[float], float]]] = {
    "linear": (_linear_ramp, _linear_rate),
    "sinusoidal": (_sin_ramp, _sin_rate),
}


@dataclass(frozen=True)
class LoadProgram:
    """体力密度 f(t) = r(t) f_max 与 Γ₁ 上面力 g(t) = r(t) g_max；r ∈ C¹。"""

    f_max: NDArray[np.float64]
    g_max: NDArray[np.float64]
    T: float = 1.0
    kind: str = "linear"

    @classmethod
    def from_config(cls, cfg: LoadingConfig) -> "LoadProgram":
        return cls(
            f_max=np.asarray(cfg.f_max, dtype=float),
            g_max=np.asarray(cfg.g_max, dtype=float),
            T=cfg.T,
            kind=cfg.ramp,
        )

    @classmethod
    def zero(cls, T: float = 1.0) -> "LoadProgram":
        return cls(np.zeros(2), np.zeros(2), T)

    def ramp(self, t: float) -> float:
        return _RAMPS[self.kind][0](t / self.T)

    def rate(self, t: float) -> float:
        return _RAMPS[self.kind][1](t / self.T) / self.T

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.f_max) or np.any(self.g_max))


# ── 储能密度 ─────────────────────────────────────────────────────────────

# 名称 → (F_e, material) ↦ (密度, 第一 Piola 应力)
_STORED_ENERGIES: dict[
    str, Callable[[np.ndarray, Material], tuple[np.ndarray, np.ndarray]]
] = {}


def stored_energy(name: str):
    """将函数注册为可选的 W₁ 弹性律。"""

    def decorator(fn):
        _STORED_ENERGIES[name] = fn
        return fn

    return decorator


@stored_energy("svk")
def _svk(Fe: np.ndarray, m: Material) -> tuple[np.ndarray, np.ndarray]:
    n = Fe.shape[-1]
    C = np.swapaxes(Fe, -1, -2) @ Fe
    E = 0.5 * (C - np.eye(n))
    trE = np.trace(E, axis1=-2, axis2=-1)
    psi = 0.5 * m.lam * trE**2 + m.mu * np.sum(E * E, axis=(-2, -1))
    S = m.lam * trE[..., None, None] * np.eye(n) + 2.0 * m.mu * E
    return psi, Fe @ S


def w1_svk(F_e: ArrayLike, m: Material) -> NDArray[np.float64]:
    """Saint Venant–Kirchhoff 密度 ½λ(tr E)² + μ‖E‖²，E = ½(F_eᵀF_e − I)。"""
    return _svk(np.asarray(F_e, dtype=float), m)[0]


def w1_total(F_e: ArrayLike, H: ArrayLike, m: Material) -> NDArray[np.float64]:
    """W₁ + c_det (det F_e)^(−s) + c_H ‖H‖²；det F_e ≤ 0 处为 +inf。"""
    Fe = np.asarray(F_e, dtype=float)
    H = np.asarray(H, dtype=float)
    J = det(Fe)
    ok = J > 0.0
    Jsafe = np.where(ok, J, 1.0)
    psi = _STORED_ENERGIES[m.elastic_law](Fe, m)[0]
    h2 = np.sum(H * H, axis=(-3, -2, -1))
    value = psi + m.c_det * Jsafe ** (-m.s) + m.c_H * h2
    return np.where(ok, value, INFEASIBLE)


def _pow_norm(x: np.ndarray, q: float, naxes: int) -> tuple[np.ndarray, np.ndarray]:
    """(|x|^q, ∂|x|^q/∂x)，范数取最后 ``naxes`` 个轴，|x| = 0 处梯度取 0。"""
    axes = tuple(range(-naxes, 0)) if naxes else ()
    r2 = np.sum(x * x, axis=axes) if naxes else x * x
    r = np.sqrt(r2)
    value = r**q
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(r > 0.0, q * r ** (q - 2.0), 0.0)
    return value, coef.reshape(coef.shape + (1,) * naxes) * x


def w2(
    gamma: ArrayLike,
    Gslip: ArrayLike,
    p: ArrayLike,
    pi: ArrayLike,
    m: Material,
    s: SlipSystem,
) -> NDArray[np.float64]:
    """
    塑性正则项 eps_p‖I + γ a⊗b‖^β + eps_p(‖∇γ‖‖a⊗b‖)^β
    [+ eps_p(|p|^ω + ‖∇p‖^ω)，仅启用硬化时]。
    """
    gamma = np.asarray(gamma, dtype=float)
    Gslip = np.asarray(Gslip, dtype=float)
    Fp = slip_matrix(gamma, s)
    pn = float(np.linalg.norm(s.schmid))
    value = m.eps_p * _pow_norm(Fp, m.beta, 2)[0]
    value = value + m.eps_p * pn**m.beta * _pow_norm(Gslip, m.beta, 1)[0]
    if m.hardening_enabled:
        p = np.asarray(p, dtype=float)
        pi = np.asarray(pi, dtype=float)
        value = value + m.eps_p * (
            _pow_norm(p, m.omega, 1)[0] + _pow_norm(pi, m.omega, 2)[0]
        )
    return value


# ── 装配 ─────────────────────────────────────────────────────────────────


@dataclass
class Kinematics:
    F: np.ndarray
    gbar: np.ndarray
    Fp: np.ndarray
    Fp_inv: np.ndarray
    Fe: np.ndarray
    J: np.ndarray
    cofF: np.ndarray
    A: np.ndarray
    H: np.ndarray
    G: np.ndarray
    pbar: np.ndarray
    pi: np.ndarray

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.J > 0.0))


@dataclass(frozen=True)
class EnergyBreakdown:
    """ℐ = ∫W₁ + ∫W₂ − L，各项可单独取出。"""

    elastic: float
    plastic: float
    work: float

    @property
    def total(self) -> float:
        return self.elastic + self.plastic - self.work

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.elastic)


@dataclass(frozen=True)
class NodalGradient:
    y: NDArray[np.float64]
    gamma: NDArray[np.float64]
    p: NDArray[np.float64]


def _resolve_threads(threads: Optional[int]) -> int:
    n = settings.GPCPLAST_THREADS if threads is None else threads
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)


class EnergyAssembler:
    """
    对给定网格、材料与载荷程序装配 ℐ(t, q) 及其梯度。

    逐单元的本构计算是纯函数，单元数足够多时按块并发执行，
    块结果按固定顺序拼接，保证结果与线程数无关。
    """

    def __init__(
        self,
        mesh: Mesh,
        material: Material,
        loads: Optional[LoadProgram] = None,
        threads: Optional[int] = None,
    ) -> None:
        self.mesh = mesh
        self.material = material
        self.loads = loads or LoadProgram.zero()
        self.slip = material.slip
        self._P = self.slip.schmid
        self._pnorm = float(np.linalg.norm(self._P))
        self._threads = _resolve_threads(threads)
        if material.elastic_law not in _STORED_ENERGIES:
            raise KeyError(f"未注册的弹性律: {material.elastic_law!r}")

    # ── 载荷 ─────────────────────────────────────────────────────────────

    @cached_property
    def load_vector(self) -> NDArray[np.float64]:
        """线性泛函 ℓ(y) = ∫f_max·y + ∫_Γ₁ g_max·y 的节点表示。"""
        m = self.mesh
        body = m.centroid_adjoint(m.element_areas[:, None] * self.loads.f_max[None, :])
        return body + m.surface_load_vector(m.gamma1_facets, self.loads.g_max)

    def linear_work(self, y: ArrayLike) -> float:
        return float(np.sum(self.load_vector * np.asarray(y, dtype=float)))

    def loading(self, t: float, y: ArrayLike) -> float:
        return self.loads.ramp(t) * self.linear_work(y)

    # ── 运动学 ───────────────────────────────────────────────────────────

    def check_state(self, q: State) -> None:
        N = self.mesh.n_nodes
        m = self.material.m
        if q.y.shape != (N, 2) or q.gamma.shape != (N,) or q.p.shape != (N, m):
            raise DimensionMismatch(
                f"状态维度 y{q.y.shape}/γ{q.gamma.shape}/p{q.p.shape} 与网格 "
                f"(N={N}, m={m}) 不符"
            )

    def kinematics(self, q: State) -> Kinematics:
        self.check_state(q)
        mesh = self.mesh
        F = mesh.element_gradient(q.y)
        gbar = mesh.centroid_values(q.gamma)
        Fp = slip_matrix(gbar, self.slip)
        Fp_inv = inv_cramer(Fp)
        Fe = F @ Fp_inv
        cofF = cof(F)
        A = cofF @ np.swapaxes(Fp, -1, -2)
        H = mesh.element_gradient(mesh.recover_nodal(A))
        G = mesh.element_gradient(q.gamma)
        pbar = mesh.centroid_values(q.p) if q.p.shape[1] else np.zeros((mesh.n_elements, 0))
        pi = (
            mesh.element_gradient(q.p)
            if q.p.shape[1]
            else np.zeros((mesh.n_elements, 0, 2))
        )
        return Kinematics(F, gbar, Fp, Fp_inv, Fe, det(Fe), cofF, A, H, G, pbar, pi)

    # ── 逐单元本构 ───────────────────────────────────────────────────────

    def _pointwise(self, k: Kinematics, sl: slice, want_grad: bool) -> dict[str, np.ndarray]:
        mat = self.material
        Fe, J, H, Fp, G = k.Fe[sl], k.J[sl], k.H[sl], k.Fp[sl], k.G[sl]
        psi, PK = _STORED_ENERGIES[mat.elastic_law](Fe, mat)
        barrier = mat.c_det * J ** (-mat.s)
        w1 = psi + barrier + mat.c_H * np.sum(H * H, axis=(-3, -2, -1))

        fp_val, fp_grad = _pow_norm(Fp, mat.beta, 2)
        g_val, g_grad = _pow_norm(G, mat.beta, 1)
        w2v = mat.eps_p * (fp_val + self._pnorm**mat.beta * g_val)
        out = {"w1": w1, "w2": w2v}
        if mat.hardening_enabled:
            pb_val, pb_grad = _pow_norm(k.pbar[sl], mat.omega, 1)
            pi_val, pi_grad = _pow_norm(k.pi[sl], mat.omega, 2)
            out["w2"] = w2v + mat.eps_p * (pb_val + pi_val)
        if not want_grad:
            return out

        PK = PK - (mat.s * barrier / J)[:, None, None] * cof(Fe)
        out["PK"] = PK
        out["dH"] = 2.0 * mat.c_H * H
        out["dgbar"] = mat.eps_p * np.sum(fp_grad * self._P, axis=(-2, -1))
        out["dG"] = mat.eps_p * self._pnorm**mat.beta * g_grad
        if mat.hardening_enabled:
            out["dpbar"] = mat.eps_p * pb_grad
            out["dpi"] = mat.eps_p * pi_grad
        return out

    def _evaluate(self, k: Kinematics, want_grad: bool) -> dict[str, np.ndarray]:
        E = self.mesh.n_elements
        n_chunks = min(self._threads, max(1, E // _PARALLEL_MIN_ELEMENTS))
        if n_chunks <= 1:
            return self._pointwise(k, slice(0, E), want_grad)
        bounds = np.linspace(0, E, n_chunks + 1).astype(int)
        slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=n_chunks) as pool:
            parts = list(pool.map(lambda s: self._pointwise(k, s, want_grad), slices))
        return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}

    # ── 能量 ─────────────────────────────────────────────────────────────

    def breakdown(self, t: float, q: State) -> EnergyBreakdown:
        k = self.kinematics(q)
        work = self.loading(t, q.y)
        if not k.feasible:
            return EnergyBreakdown(INFEASIBLE, INFEASIBLE, work)
        vals = self._evaluate(k, want_grad=False)
        areas = self.mesh.element_areas
        return EnergyBreakdown(float(areas @ vals["w1"]), float(areas @ vals["w2"]), work)

    def total(self, t: float, q: State) -> float:
        b = self.breakdown(t, q)
        return b.total if b.feasible else INFEASIBLE

    def gradient(self, t: float, q: State) -> NodalGradient:
        """ℐ(t, ·) 对节点自由度 (y, γ, p) 的解析梯度（Dirichlet 消元前）。"""
        k = self.kinematics(q)
        if not k.feasible:
            raise InfeasiblePoint(
                "能量为 +inf（存在 det F_e <= 0 的单元），梯度无定义",
                data={"min_det": float(k.J.min())},
            )
        mesh = self.mesh
        P = self._P
        vals = self._evaluate(k, want_grad=True)
        area = mesh.element_areas
        a3 = area[:, None, None]

        PK = vals["PK"]
        gF = a3 * (PK @ np.swapaxes(k.Fp_inv, -1, -2))
        ggbar = area * (np.sum(PK * (-(k.F @ P)), axis=(-2, -1)) + vals["dgbar"])

        # H = ∇ R A 的链式法则：R 与 ∇ 都是固定的线性算子
        Hbar = area[:, None, None, None] * vals["dH"]
        Lam = mesh.recover_adjoint(mesh.element_gradient_adjoint(Hbar))
        gF = gF + cof_vjp(k.F, Lam @ k.Fp)
        ggbar = ggbar + np.sum(Lam * (k.cofF @ P.T), axis=(-2, -1))

        gy = mesh.element_gradient_adjoint(gF) - self.loads.ramp(t) * self.load_vector
        ggamma = mesh.centroid_adjoint(ggbar) + mesh.element_gradient_adjoint(
            area[:, None] * vals["dG"]
        )
        if self.material.hardening_enabled:
            gp = mesh.centroid_adjoint(area[:, None] * vals["dpbar"]) + mesh.element_gradient_adjoint(
                a3 * vals["dpi"]
            )
        else:
            gp = np.zeros_like(q.p)
        return NodalGradient(gy, ggamma, gp)

    def free_gradient(self, t: float, q: State) -> NDArray[np.float64]:
        """按 [y(非 Γ₀ 节点), γ, p] 排列的自由自由度梯度。"""
        g = self.gradient(t, q)
        return np.concatenate([g.y[self.mesh.free_nodes].ravel(), g.gamma, g.p.ravel()])


# ── 函数式接口 ───────────────────────────────────────────────────────────


def loading(t: float, y: ArrayLike, lp: LoadProgram, m: Mesh) -> float:
    """L(t, y) = r(t)·[∫_Ω f_max·y dx + ∫_Γ₁ g_max·y dS]。"""
    y = np.asarray(y, dtype=float)
    body = m.integrate(m.centroid_values(y) @ lp.f_max)
    surface = m.surface_integrate(m.gamma1_facets, y, lp.g_max)
    return lp.ramp(t) * (body + surface)


def total_energy(t: float, q: State, m: Mesh, mat: Material, lp: LoadProgram) -> float:
    return EnergyAssembler(m, mat, lp).total(t, q)


def grad_total_energy(
    t: float, q: State, m: Mesh, mat: Material, lp: LoadProgram
) -> NDArray[np.float64]:
    return EnergyAssembler(m, mat, lp).free_gradient(t, q)
