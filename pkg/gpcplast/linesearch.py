"""
带可行性障碍的下降法：Armijo 回溯（拒绝 +inf 试探点）配合
最速下降或截断 Newton–CG 方向。

目标函数以 :class:`Objective` 的形式给出，作用在扁平自由度向量上。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from gpcplast.errors import GpcPlastError, LineSearchFailure
from gpcplast.models import SolverOptions

logger = logging.getLogger(__name__)

Vec = NDArray[np.float64]

# 回溯次数上限：shrink = 0.5 时对应步长 ~1e-18
MAX_BACKTRACKS = 60
# ‖g‖ 不超过 ROUNDOFF_FACTOR·g_tol 时，回溯失败视为舍入停滞而非错误
ROUNDOFF_FACTOR = 1e3
# 预测下降量 −g·d 不超过 ROUNDOFF_REL·(1+|f|) 时同样视为舍入停滞
ROUNDOFF_REL = 1e-14


class Objective:
    """
    可微目标的最小接口。

    子类至少实现 :meth:`value` 与 :meth:`gradient`；
    :meth:`hessp` 默认以梯度的前向差分近似，:meth:`diag` 默认为单位阵。
    """

    def value(self, x: Vec) -> float:
        raise NotImplementedError

    def gradient(self, x: Vec) -> Vec:
        raise NotImplementedError

    def hessp(self, x: Vec, v: Vec, g: Optional[Vec] = None) -> Vec:
        scale = float(np.max(np.abs(v)))
        if scale == 0.0:
            return np.zeros_like(v)
        eps = 1e-7 / scale
        g0 = self.gradient(x) if g is None else g
        return (self.gradient(x + eps * v) - g0) / eps

    def diag(self, x: Vec) -> Vec:
        return np.ones_like(x)


@dataclass
class DescentResult:
    x: Vec
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)


def _newton_cg_direction(
    obj: Objective, x: Vec, g: Vec, max_cg: int
) -> tuple[Vec, int]:
    """预条件 CG 近似求解 H d = −g；遇负曲率即截断。返回 (方向, CG 迭代数)。"""
    M = obj.diag(x)
    M = np.where(M > 0.0, M, 1.0)
    gnorm = float(np.linalg.norm(g))
    forcing = min(0.5, math.sqrt(gnorm)) * gnorm

    d = np.zeros_like(g)
    r = -g.copy()
    s = r / M
    p = s.copy()
    rs = float(r @ s)
    for it in range(max_cg):
        try:
            Hp = obj.hessp(x, p, g)
        except GpcPlastError:
            # 差分点越过障碍
            break
        curv = float(p @ Hp)
        if not math.isfinite(curv) or curv <= 0.0:
            if it == 0:
                return s, it + 1
            break
        a = rs / curv
        d = d + a * p
        r = r - a * Hp
        if float(np.linalg.norm(r)) <= forcing:
            return d, it + 1
        s = r / M
        rs_new = float(r @ s)
        p = s + (rs_new / rs) * p
        rs = rs_new
    if not np.any(d):
        return -g / M, max_cg
    return d, max_cg


def minimize(
    obj: Objective,
    x0: Vec,
    opts: SolverOptions,
    *,
    g_tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    label: str = "descent",
) -> DescentResult:
    """
    从 x0 出发单调下降直至 ‖∇f‖ ≤ g_tol 或达到迭代上限。

    每个被接受的迭代点都有有限目标值，值序列非增。
    回溯找不到下降步时：若 ‖g‖ 或预测下降量已处于舍入量级则记录警告并返回
    ``converged=False``，否则抛出 :class:`LineSearchFailure`。
    """
    g_tol = opts.g_tol if g_tol is None else g_tol
    max_iter = opts.max_inner if max_iter is None else max_iter
    x = np.array(x0, dtype=float)
    f = obj.value(x)
    if not math.isfinite(f):
        raise LineSearchFailure(f"{label}: 初始点目标值非有限", data={"value": f})
    history = [f]
    g = obj.gradient(x)
    gnorm = float(np.linalg.norm(g))

    for it in range(max_iter):
        if gnorm <= g_tol:
            return DescentResult(x, f, gnorm, it, True, history)

        if opts.direction == "newton_cg":
            d, n_cg = _newton_cg_direction(obj, x, g, opts.max_cg)
        else:
            M = obj.diag(x)
            d, n_cg = -g / np.where(M > 0.0, M, 1.0), 0
        slope = float(g @ d)
        if not (slope < 0.0 and math.isfinite(slope)):
            d = -g
            slope = -gnorm * gnorm

        step = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            x_try = x + step * d
            f_try = obj.value(x_try)
            if math.isfinite(f_try) and f_try <= f + opts.armijo_c * step * slope:
                accepted = True
                break
            step *= opts.shrink

        if not accepted:
            if gnorm <= ROUNDOFF_FACTOR * g_tol or -slope <= ROUNDOFF_REL * (1.0 + abs(f)):
                logger.warning(
                    "%s: 第 %d 次迭代回溯停滞于舍入量级 (‖g‖=%.3e)", label, it, gnorm
                )
                return DescentResult(x, f, gnorm, it, False, history)
            raise LineSearchFailure(
                f"{label}: 第 {it} 次迭代找不到可行的下降步",
                data={"iteration": it, "value": f, "grad_norm": gnorm, "slope": slope},
            )

        x, f = x_try, f_try
        history.append(f)
        g = obj.gradient(x)
        gnorm = float(np.linalg.norm(g))
        logger.debug(
            "%s it=%d f=%.15e |g|=%.3e step=%.3e cg=%d", label, it, f, gnorm, step, n_cg
        )

    converged = gnorm <= g_tol
    if not converged:
        logger.warning("%s: 达到迭代上限 %d (‖g‖=%.3e)", label, max_iter, gnorm)
    return DescentResult(x, f, gnorm, max_iter, converged, history)
