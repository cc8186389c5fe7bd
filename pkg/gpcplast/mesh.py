"""
二维单纯形有限元层：矩形结构化三角剖分、P1 形函数梯度、Γ₀/Γ₁ 边界标记、
单元梯度、节点恢复以及体积/边界求积。
"""

from __future__ import annotations

import logging
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse import coo_matrix, csr_matrix

from gpcplast.errors import DimensionMismatch, InvalidMesh, InvalidSelector
from gpcplast.tensor import inv_cramer

logger = logging.getLogger(__name__)

NodalField = NDArray[np.float64]
ElementField = NDArray[np.float64]

SIDES = ("left", "right", "bottom", "top")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Mesh:
    """
    构造后不可变的 P1 三角网格。

    - ``nodes``            : (N, 2) 节点坐标
    - ``elements``         : (E, 3) 正定向的节点编号
    - ``gamma0_facets``    : (F₀, 2) Dirichlet 边
    - ``gamma1_facets``    : (F₁, 2) Neumann 边
    - ``element_areas``    : (E,) 正面积
    - ``shape_gradients``  : (E, 3, 2) 三个 P1 基函数的常梯度
    """

    def __init__(
        self,
        nodes: ArrayLike,
        elements: ArrayLike,
        gamma0_facets: ArrayLike,
        gamma1_facets: ArrayLike,
        boundary_facets: ArrayLike,
    ) -> None:
        nodes = np.asarray(nodes, dtype=float)
        elements = np.asarray(elements, dtype=np.int64)
        g0 = np.asarray(gamma0_facets, dtype=np.int64).reshape(-1, 2)
        g1 = np.asarray(gamma1_facets, dtype=np.int64).reshape(-1, 2)
        boundary = np.asarray(boundary_facets, dtype=np.int64).reshape(-1, 2)

        p0 = nodes[elements[:, 0]]
        p1 = nodes[elements[:, 1]]
        p2 = nodes[elements[:, 2]]
        signed = 0.5 * (
            (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
            - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
        )
        if np.any(signed <= 0.0):
            bad = int(np.argmin(signed))
            raise InvalidMesh(
                f"单元 {bad} 的有向面积非正 ({signed[bad]:.3e})",
                data={"element": bad},
            )
        if g0.shape[0] == 0:
            raise InvalidSelector("Γ₀ 必须具有正的边界测度")

        def keys(f: np.ndarray) -> set[tuple[int, int]]:
            return {(int(min(a, b)), int(max(a, b))) for a, b in f}

        k0, k1, kb = keys(g0), keys(g1), keys(boundary)
        if k0 & k1:
            raise InvalidSelector("Γ₀ 与 Γ₁ 的边集必须不相交")
        if not (k0 | k1) <= kb:
            raise InvalidSelector("Γ₀/Γ₁ 的边必须位于边界上")

        # J = [p1-p0, p2-p0]（按列），∇λ₁、∇λ₂ 为 J⁻¹ 的行
        J = np.stack([p1 - p0, p2 - p0], axis=-1)
        Jinv = inv_cramer(J)
        grads = np.empty((elements.shape[0], 3, 2))
        grads[:, 1, :] = Jinv[:, 0, :]
        grads[:, 2, :] = Jinv[:, 1, :]
        grads[:, 0, :] = -grads[:, 1, :] - grads[:, 2, :]

        self.nodes = _frozen(nodes)
        self.elements = _frozen(elements)
        self.gamma0_facets = _frozen(g0)
        self.gamma1_facets = _frozen(g1)
        self.boundary_facets = _frozen(boundary)
        self.element_areas = _frozen(signed)
        self.shape_gradients = _frozen(grads)

    # ── 基本量 ───────────────────────────────────────────────────────────

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def area(self) -> float:
        return float(self.element_areas.sum())

    @cached_property
    def gamma0_nodes(self) -> NDArray[np.int64]:
        return _frozen(np.unique(self.gamma0_facets))

    @cached_property
    def free_nodes(self) -> NDArray[np.int64]:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.gamma0_nodes] = False
        return _frozen(np.flatnonzero(mask))

    @cached_property
    def lumped_areas(self) -> NDArray[np.float64]:
        """节点集中面积：每个单元面积平分给三个顶点。"""
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.elements, np.repeat(self.element_areas[:, None] / 3.0, 3, 1))
        return _frozen(w)

    # ── 稀疏算子 ─────────────────────────────────────────────────────────

    @cached_property
    def scatter(self) -> csr_matrix:
        """(N, 3E) 局部→全局的累加算子。"""
        E = self.n_elements
        return coo_matrix(
            (np.ones(3 * E), (self.elements.ravel(), np.arange(3 * E))),
            shape=(self.n_nodes, 3 * E),
        ).tocsr()

    @cached_property
    def averaging(self) -> csr_matrix:
        """(E, N) 取单元三个顶点的平均（质心值）。"""
        E = self.n_elements
        return coo_matrix(
            (np.full(3 * E, 1.0 / 3.0), (np.repeat(np.arange(E), 3), self.elements.ravel())),
            shape=(E, self.n_nodes),
        ).tocsr()

    @cached_property
    def recovery(self) -> csr_matrix:
        """(N, E) 面积加权的节点恢复算子，每行权重之和为 1。"""
        E = self.n_elements
        raw = coo_matrix(
            (
                np.repeat(self.element_areas, 3),
                (self.elements.ravel(), np.repeat(np.arange(E), 3)),
            ),
            shape=(self.n_nodes, E),
        ).tocsr()
        row_sum = np.asarray(raw.sum(axis=1)).ravel()
        return csr_matrix(raw.multiply(1.0 / row_sum[:, None]))

    # ── 场运算 ───────────────────────────────────────────────────────────

    def _check_nodal(self, u: np.ndarray) -> None:
        if u.shape[0] != self.n_nodes:
            raise DimensionMismatch(
                f"节点场长度 {u.shape[0]} 与节点数 {self.n_nodes} 不符"
            )

    def _check_element(self, e: np.ndarray) -> None:
        if e.shape[0] != self.n_elements:
            raise DimensionMismatch(
                f"单元场长度 {e.shape[0]} 与单元数 {self.n_elements} 不符"
            )

    def element_gradient(self, u: ArrayLike) -> ElementField:
        """节点场 (N, ...) 的逐单元常梯度 (E, ..., 2)。"""
        u = np.asarray(u, dtype=float)
        self._check_nodal(u)
        return np.einsum("ei...,eid->e...d", u[self.elements], self.shape_gradients)

    def element_gradient_adjoint(self, g: ArrayLike) -> NodalField:
        """:meth:`element_gradient` 的伴随：(E, ..., 2) → (N, ...)。"""
        g = np.asarray(g, dtype=float)
        self._check_element(g)
        local = np.einsum("e...d,eid->ei...", g, self.shape_gradients)
        tail = local.shape[2:]
        out = self.scatter @ local.reshape(3 * self.n_elements, -1)
        return np.asarray(out).reshape((self.n_nodes,) + tail)

    def centroid_values(self, u: ArrayLike) -> ElementField:
        """节点场在单元质心的值（三个顶点平均）。"""
        u = np.asarray(u, dtype=float)
        self._check_nodal(u)
        tail = u.shape[1:]
        out = self.averaging @ u.reshape(self.n_nodes, -1)
        return np.asarray(out).reshape((self.n_elements,) + tail)

    def centroid_adjoint(self, g: ArrayLike) -> NodalField:
        g = np.asarray(g, dtype=float)
        self._check_element(g)
        tail = g.shape[1:]
        out = self.averaging.T @ g.reshape(self.n_elements, -1)
        return np.asarray(out).reshape((self.n_nodes,) + tail)

    def recover_nodal(self, e: ArrayLike) -> NodalField:
        """单元场的面积加权节点平均。"""
        e = np.asarray(e, dtype=float)
        self._check_element(e)
        tail = e.shape[1:]
        out = self.recovery @ e.reshape(self.n_elements, -1)
        return np.asarray(out).reshape((self.n_nodes,) + tail)

    def recover_adjoint(self, g: ArrayLike) -> ElementField:
        g = np.asarray(g, dtype=float)
        self._check_nodal(g)
        tail = g.shape[1:]
        out = self.recovery.T @ g.reshape(self.n_nodes, -1)
        return np.asarray(out).reshape((self.n_elements,) + tail)

    def integrate(self, e: ArrayLike) -> float:
        """单点（质心）求积 Σ_e |e|·value_e。"""
        e = np.asarray(e, dtype=float)
        self._check_element(e)
        return float(self.element_areas @ e.reshape(self.n_elements))

    def facet_lengths(self, facets: ArrayLike) -> NDArray[np.float64]:
        f = np.asarray(facets, dtype=np.int64).reshape(-1, 2)
        return np.linalg.norm(self.nodes[f[:, 1]] - self.nodes[f[:, 0]], axis=1)

    def surface_integrate(self, facets: ArrayLike, u: ArrayLike, w: ArrayLike) -> float:
        """边上梯形公式：Σ |edge|·(u·w 在两端点的平均)。"""
        f = np.asarray(facets, dtype=np.int64).reshape(-1, 2)
        if f.shape[0] == 0:
            return 0.0
        u = np.asarray(u, dtype=float)
        self._check_nodal(u)
        u = u.reshape(self.n_nodes, -1)
        w = np.broadcast_to(np.asarray(w, dtype=float).reshape(-1, u.shape[1]), (f.shape[0], u.shape[1]))
        ends = np.einsum("fk,fk->f", u[f[:, 0]], w) + np.einsum("fk,fk->f", u[f[:, 1]], w)
        return float(self.facet_lengths(f) @ (0.5 * ends))

    def surface_load_vector(self, facets: ArrayLike, w: ArrayLike) -> NodalField:
        """``u ↦ surface_integrate(facets, u, w)`` 的梯度（线性泛函的节点表示）。"""
        f = np.asarray(facets, dtype=np.int64).reshape(-1, 2)
        w = np.asarray(w, dtype=float)
        k = w.shape[-1]
        out = np.zeros((self.n_nodes, k))
        if f.shape[0] == 0:
            return out
        w = np.broadcast_to(w.reshape(-1, k), (f.shape[0], k))
        half = 0.5 * self.facet_lengths(f)[:, None] * w
        np.add.at(out, f[:, 0], half)
        np.add.at(out, f[:, 1], half)
        return out

    def dump(self) -> tuple[str, str]:
        """调试用纯文本导出：(节点表, 单元表)。"""
        node_lines = ["id x y"] + [
            f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(self.nodes)
        ]
        elem_lines = ["id n0 n1 n2"] + [
            f"{i} {a} {b} {c}" for i, (a, b, c) in enumerate(self.elements)
        ]
        return "\n".join(node_lines) + "\n", "\n".join(elem_lines) + "\n"


# ── 构造 ─────────────────────────────────────────────────────────────────


def _side_facets(side: str, nx: int, ny: int) -> np.ndarray:
    def nid(i: int, j: int) -> int:
        return j * (nx + 1) + i

    if side == "left":
        return np.array([(nid(0, j), nid(0, j + 1)) for j in range(ny)])
    if side == "right":
        return np.array([(nid(nx, j), nid(nx, j + 1)) for j in range(ny)])
    if side == "bottom":
        return np.array([(nid(i, 0), nid(i + 1, 0)) for i in range(nx)])
    if side == "top":
        return np.array([(nid(i, ny), nid(i + 1, ny)) for i in range(nx)])
    raise InvalidSelector(f"未知的边界选择器: {side!r}")


def _normalize_sides(sides: Union[str, Sequence[str], None]) -> list[str]:
    if sides is None:
        return []
    if isinstance(sides, str):
        return [] if sides in ("", "none") else [sides]
    return list(sides)


def build_rect_mesh(
    nx: int,
    ny: int,
    Lx: float,
    Ly: float,
    gamma0_sides: Union[str, Iterable[str]] = "left",
    gamma1_sides: Union[str, Iterable[str], None] = "right",
) -> Mesh:
    """
    [0, Lx]×[0, Ly] 上的结构化三角剖分：每个小矩形沿对角线切成两个三角形，
    共 2·nx·ny 个单元、(nx+1)(ny+1) 个节点。
    """
    if nx < 1 or ny < 1:
        raise InvalidMesh("nx, ny 必须 >= 1")
    g0_sides = _normalize_sides(gamma0_sides)
    g1_sides = _normalize_sides(gamma1_sides)
    for side in g0_sides + g1_sides:
        if side not in SIDES:
            raise InvalidSelector(f"未知的边界选择器: {side!r}")
    if set(g0_sides) & set(g1_sides):
        raise InvalidSelector(
            f"Γ₀ 与 Γ₁ 选择了相同的边: {sorted(set(g0_sides) & set(g1_sides))}"
        )

    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (j * (nx + 1) + i).ravel()
    n10 = n00 + 1
    n01 = n00 + nx + 1
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    boundary = np.concatenate([_side_facets(s, nx, ny) for s in SIDES])
    g0 = (
        np.concatenate([_side_facets(s, nx, ny) for s in g0_sides])
        if g0_sides
        else np.empty((0, 2), dtype=np.int64)
    )
    g1 = (
        np.concatenate([_side_facets(s, nx, ny) for s in g1_sides])
        if g1_sides
        else np.empty((0, 2), dtype=np.int64)
    )
    mesh = Mesh(nodes, elements, g0, g1, boundary)
    logger.debug(
        "已生成矩形网格: %d 个节点, %d 个单元 (Γ₀=%s, Γ₁=%s)",
        mesh.n_nodes,
        mesh.n_elements,
        g0_sides,
        g1_sides,
    )
    return mesh


# ── 函数式接口 ───────────────────────────────────────────────────────────


def element_gradient(m: Mesh, u: ArrayLike) -> ElementField:
    return m.element_gradient(u)


def recover_nodal(m: Mesh, e: ArrayLike) -> NodalField:
    return m.recover_nodal(e)


def integrate(m: Mesh, e: ArrayLike) -> float:
    return m.integrate(e)


def surface_integrate(m: Mesh, facets: ArrayLike, u: ArrayLike, w: ArrayLike) -> float:
    return m.surface_integrate(facets, u, w)
