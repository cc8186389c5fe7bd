"""
单滑移的耗散距离 𝒟(z₁, z₂) = ∫ κ|γ₁ − γ₂| dx (+ κ_p ∫|p₁ − p₂| dx)、
子步内部使用的光滑化版本，以及离散轨迹上的全变差 Var。

δ = κ|·| 时按路径取下确界的定义退化为闭式 κ|γ₁ − γ₂|，此处直接按闭式计算。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Protocol, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import csr_matrix, identity

from gpcplast.energy import PlasticState
from gpcplast.errors import DimensionMismatch, OutOfRange
from gpcplast.mesh import Mesh
from gpcplast.models import DissipationSpec

logger = logging.getLogger(__name__)


class _HasStates(Protocol):
    times: Sequence[float]
    states: Sequence
    mesh: Mesh


# ── 求积 ─────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Quadrature:
    """稀疏求积算子 Q 与权重 w：∫φ(u) dx ≈ Σ w·φ(Q u)。"""

    Q: csr_matrix
    w: NDArray[np.float64]


def quadrature(m: Mesh, kind: str = "centroid") -> Quadrature:
    """
    ``centroid``：质心取值（先平均再取绝对值），权重为单元面积；
    ``vertex``：节点取值，权重为集中面积，𝒟 = 0 当且仅当各节点 γ 相同。
    """
    return _quadrature(m, kind)


@lru_cache(maxsize=32)
def _quadrature(m: Mesh, kind: str) -> Quadrature:
    if kind == "centroid":
        return Quadrature(m.averaging, np.asarray(m.element_areas))
    if kind == "vertex":
        return Quadrature(identity(m.n_nodes, format="csr"), np.asarray(m.lumped_areas))
    raise ValueError(f"未知的耗散求积方式: {kind!r}")


def _check(z: PlasticState, m: Mesh) -> None:
    if z.gamma.shape != (m.n_nodes,) or z.p.ndim != 2 or z.p.shape[0] != m.n_nodes:
        raise DimensionMismatch(
            f"塑性状态 γ{z.gamma.shape}/p{z.p.shape} 与网格节点数 {m.n_nodes} 不符"
        )


# ── 精确耗散距离 ─────────────────────────────────────────────────────────


def diss_distance(z1: PlasticState, z2: PlasticState, m: Mesh, d: DissipationSpec) -> float:
    """𝒟(z₁, z₂)，对称、满足三角不等式、对增量正一次齐次。"""
    _check(z1, m)
    _check(z2, m)
    if z1.p.shape != z2.p.shape:
        raise DimensionMismatch(f"硬化变量维度不一致: {z1.p.shape} vs {z2.p.shape}")
    quad = quadrature(m, d.quadrature)
    value = d.kappa * float(quad.w @ np.abs(quad.Q @ (z1.gamma - z2.gamma)))
    if d.kappa_p > 0.0 and z1.p.shape[1]:
        dp = quad.Q @ (z1.p - z2.p)
        value += d.kappa_p * float(quad.w @ np.linalg.norm(dp, axis=1))
    return value


# ── 光滑化耗散（仅供子步内部使用） ───────────────────────────────────────


def rho(x: np.ndarray, eta: float) -> np.ndarray:
    """ρ_η(x) = √(x² + η²) − η。"""
    return np.hypot(x, eta) - eta


class SmoothedDissipation:
    """
    以 z_prev 为中心的 γ ↦ ∫κ ρ_η(γ − γ_prev) [+ κ_p ∫ρ_η(|p − p_prev|)]。

    提供值、梯度、Hessian-向量积与对角预条件；误差不超过 η·(κ + κ_p)·|Ω|。
    """

    def __init__(self, m: Mesh, d: DissipationSpec, z_prev: PlasticState, eta: float) -> None:
        _check(z_prev, m)
        self.mesh = m
        self.dspec = d
        self.eta = eta
        self.z_prev = z_prev
        self.quad = quadrature(m, d.quadrature)
        self._use_p = d.kappa_p > 0.0 and z_prev.p.shape[1] > 0
        Q = self.quad.Q
        self._Q2 = Q.multiply(Q).tocsr()

    @property
    def bias_bound(self) -> float:
        return self.eta * (self.dspec.kappa + self.dspec.kappa_p) * self.mesh.area

    def _dg(self, gamma: np.ndarray) -> np.ndarray:
        return self.quad.Q @ (gamma - self.z_prev.gamma)

    def _dp(self, p: np.ndarray) -> np.ndarray:
        return self.quad.Q @ (p - self.z_prev.p)

    def value(self, gamma: np.ndarray, p: np.ndarray) -> float:
        w, eta = self.quad.w, self.eta
        v = self.dspec.kappa * float(w @ rho(self._dg(gamma), eta))
        if self._use_p:
            v += self.dspec.kappa_p * float(w @ rho(np.linalg.norm(self._dp(p), axis=1), eta))
        return v

    def gradient(self, gamma: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Q, w, eta = self.quad.Q, self.quad.w, self.eta
        x = self._dg(gamma)
        g_gamma = self.dspec.kappa * (Q.T @ (w * x / np.hypot(x, eta)))
        g_p = np.zeros_like(p)
        if self._use_p:
            dp = self._dp(p)
            r = np.linalg.norm(dp, axis=1)
            g_p = self.dspec.kappa_p * (Q.T @ ((w / np.hypot(r, eta))[:, None] * dp))
        return g_gamma, g_p

    def _curvature(self, gamma: np.ndarray) -> np.ndarray:
        x = self._dg(gamma)
        return self.dspec.kappa * self.quad.w * self.eta**2 / np.hypot(x, self.eta) ** 3

    def hessp(
        self, gamma: np.ndarray, p: np.ndarray, v_gamma: np.ndarray, v_p: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Qᵀ(w ρ''(Qγ − Qγ_prev) Q v)；p 分量按各向同性范数的 Hessian。"""
        Q = self.quad.Q
        h_gamma = Q.T @ (self._curvature(gamma) * (Q @ v_gamma))
        h_p = np.zeros_like(p)
        if self._use_p:
            dp = self._dp(p)
            qv = Q @ v_p
            s = np.hypot(np.linalg.norm(dp, axis=1), self.eta)
            w = self.dspec.kappa_p * self.quad.w
            radial = np.sum(dp * qv, axis=1)
            h_p = Q.T @ ((w / s)[:, None] * qv - (w * radial / s**3)[:, None] * dp)
        return h_gamma, h_p

    def diag(self, gamma: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Hessian 对角线（用作预条件）。"""
        d_gamma = self._Q2.T @ self._curvature(gamma)
        d_p = np.zeros_like(p)
        if self._use_p:
            s = np.hypot(np.linalg.norm(self._dp(p), axis=1), self.eta)
            d_p = np.repeat(
                (self._Q2.T @ (self.dspec.kappa_p * self.quad.w / s))[:, None], p.shape[1], 1
            )
        return d_gamma, d_p


# ── 全变差 ───────────────────────────────────────────────────────────────


def step_increments(
    traj: _HasStates, d: DissipationSpec, m: Optional[Mesh] = None
) -> NDArray[np.float64]:
    """逐步跳跃 𝒟(z^{k−1}, z^k)，k = 1..N。"""
    m = m or traj.mesh
    states = traj.states
    return np.array(
        [diss_distance(states[k - 1].z, states[k].z, m, d) for k in range(1, len(states))]
    )


def variation(
    traj: _HasStates, t0: float, t1: float, d: DissipationSpec, m: Optional[Mesh] = None
) -> float:
    """
    分段常值插值上的 Var(𝒟, z; [t0, t1])，即 (t0, t1] 内各步跳跃之和。

    分段常值轨迹的上确界由步划分取到，无需其它划分。
    """
    m = m or traj.mesh
    times = np.asarray(traj.times, dtype=float)
    span = (float(times[0]), float(times[-1]))
    tol = 1e-12 * max(1.0, abs(span[1]))
    if t0 > t1 or t0 < span[0] - tol or t1 > span[1] + tol:
        raise OutOfRange(
            f"区间 [{t0:g}, {t1:g}] 超出轨迹范围 [{span[0]:g}, {span[1]:g}]",
            data={"t0": t0, "t1": t1},
        )
    total = 0.0
    states = traj.states
    for k in range(1, len(states)):
        if t0 < times[k] <= t1:
            total += diss_distance(states[k - 1].z, states[k].z, m, d)
    logger.debug("Var[%g, %g] = %.6e", t0, t1, total)
    return total
