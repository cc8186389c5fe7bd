"""
小矩阵的精确代数（n = 2 为默认，n = 3 亦可）。

所有例程作用于形状为 ``(..., n, n)`` 的 numpy 数组，可批量处理；
行列式、余子式均按显式展开计算，不调用 LU 分解。
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from gpcplast.errors import NonFiniteEvaluation, SingularMatrix
from gpcplast.models import SlipSystem

Mat = NDArray[np.float64]
Mat3 = NDArray[np.float64]

SINGULAR_TOL = 1e-14


def _dim(M: np.ndarray) -> int:
    n = M.shape[-1]
    if M.ndim < 2 or M.shape[-2] != n or n not in (2, 3):
        raise ValueError(f"expected (..., n, n) with n in (2, 3), got {M.shape}")
    return n


def det(M: ArrayLike) -> NDArray[np.float64]:
    """行列式（直接展开）。"""
    M = np.asarray(M, dtype=float)
    if _dim(M) == 2:
        return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    return (
        M[..., 0, 0] * (M[..., 1, 1] * M[..., 2, 2] - M[..., 1, 2] * M[..., 2, 1])
        - M[..., 0, 1] * (M[..., 1, 0] * M[..., 2, 2] - M[..., 1, 2] * M[..., 2, 0])
        + M[..., 0, 2] * (M[..., 1, 0] * M[..., 2, 1] - M[..., 1, 1] * M[..., 2, 0])
    )


def cof(M: ArrayLike) -> Mat:
    """
    余子式矩阵（带符号的子式），M 奇异时同样有定义。

    可逆时 ``cof(M) = det(M) M^{-T}``；n = 2 时
    ``cof([[a, b], [c, d]]) = [[d, -c], [-b, a]]``。
    """
    M = np.asarray(M, dtype=float)
    if _dim(M) == 2:
        out = np.empty_like(M)
        out[..., 0, 0] = M[..., 1, 1]
        out[..., 0, 1] = -M[..., 1, 0]
        out[..., 1, 0] = -M[..., 0, 1]
        out[..., 1, 1] = M[..., 0, 0]
        return out
    r0, r1, r2 = M[..., 0, :], M[..., 1, :], M[..., 2, :]
    return np.stack(
        [np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], axis=-2
    )


def cof_vjp(F: ArrayLike, G: ArrayLike) -> Mat:
    """
    ``F ↦ G : cof(F)`` 对 F 的梯度。

    n = 2 时 cof 是线性的，梯度恰为 ``cof(G)``；
    n = 3 时按行叉积展开。
    """
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    if _dim(F) == 2:
        return cof(G)
    f0, f1, f2 = F[..., 0, :], F[..., 1, :], F[..., 2, :]
    g0, g1, g2 = G[..., 0, :], G[..., 1, :], G[..., 2, :]
    d0 = np.cross(g1, f2) + np.cross(f1, g2)
    d1 = np.cross(f2, g0) + np.cross(g2, f0)
    d2 = np.cross(g0, f1) + np.cross(f0, g1)
    return np.stack([d0, d1, d2], axis=-2)


def inv_cramer(M: ArrayLike) -> Mat:
    """克拉默法则求逆：``cof(M)^T / det(M)``。"""
    M = np.asarray(M, dtype=float)
    d = det(M)
    if np.any(np.abs(d) <= SINGULAR_TOL):
        raise SingularMatrix(
            f"|det M| <= {SINGULAR_TOL:g}，矩阵奇异",
            data={"min_abs_det": float(np.min(np.abs(d)))},
        )
    return np.swapaxes(cof(M), -1, -2) / d[..., None, None]


def slip_matrix(gamma: ArrayLike, s: SlipSystem) -> Mat:
    """``F_p = I + γ a⊗b``；a·b = 0 使其行列式恒为 1。"""
    g = np.asarray(gamma, dtype=float)
    n = s.dim
    return np.eye(n) + g[..., None, None] * s.schmid


def fd_gradient(
    phi: Callable[[np.ndarray], float], x: ArrayLike, h: float = 1e-6
) -> NDArray[np.float64]:
    """
    中心差分梯度 ``(φ(x+h eᵢ) − φ(x−h eᵢ)) / 2h``，用作所有解析导数的校验基准。

    任一模板点取到非有限值（例如越过行列式障碍）时抛出
    :class:`NonFiniteEvaluation`。
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    x = np.array(x, dtype=float)
    shape = x.shape
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        fp = phi(flat.reshape(shape))
        flat[i] = saved - h
        fm = phi(flat.reshape(shape))
        flat[i] = saved
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(
                f"第 {i} 个分量的差分模板上出现非有限值", data={"index": i}
            )
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(shape)
