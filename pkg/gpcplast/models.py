"""
用于运行配置、审计报告与 JSON-RPC 请求/响应验证的 Pydantic 模型。
"""

from __future__ import annotations

import math
from enum import IntEnum
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_serializer,
    field_validator,
    model_validator,
)

from config import settings

# ── JSON-RPC 基础结构 ─────────────────────────────────────────────────


class JsonRpcRequest(BaseModel):
    """标准的 JSON-RPC 2.0 请求外壳。"""

    jsonrpc: Literal["2.0"] = "2.0"
    method: str
    params: Optional[dict[str, Any]] = None
    id: Optional[Union[str, int]] = None


class JsonRpcError(BaseModel):
    code: int
    message: str
    data: Optional[Any] = None


class JsonRpcResponse(BaseModel):
    """标准的 JSON-RPC 2.0 响应外壳。"""

    jsonrpc: Literal["2.0"] = "2.0"
    id: Optional[Union[str, int]] = None
    result: Optional[Any] = None
    error: Optional[JsonRpcError] = None


# ── 错误代码 (JSON-RPC 标准 + 自定义) ─────────────────────────────────


class ErrorCode(IntEnum):
    """JSON-RPC 2.0 错误代码 + 求解器领域错误代码。"""

    PARSE_ERROR = -32700
    INVALID_REQUEST = -32600
    METHOD_NOT_FOUND = -32601
    INVALID_PARAMS = -32602
    INTERNAL_ERROR = -32603

    # 自定义领域错误
    SINGULAR_MATRIX = -32001
    NON_FINITE_EVALUATION = -32002
    INVALID_SELECTOR = -32003
    INVALID_MESH = -32004
    DIMENSION_MISMATCH = -32005
    INFEASIBLE_POINT = -32006
    LINE_SEARCH_FAILURE = -32007
    OUT_OF_RANGE = -32008
    DOMAIN_ERROR = -32009
    CONFIG_PARSE = -32010
    CONFIG_VALIDATION = -32011
    SERVICE_UNAVAILABLE = -32012


# ── 滑移系 ────────────────────────────────────────────────────────────

Side = Literal["left", "right", "bottom", "top"]


class SlipSystem(BaseModel):
    """单滑移系：a 为滑移方向，b 为滑移面法向。"""

    model_config = ConfigDict(frozen=True)

    a: tuple[float, ...] = (1.0, 0.0)
    b: tuple[float, ...] = (0.0, 1.0)

    @model_validator(mode="after")
    def _orthonormal(self) -> "SlipSystem":
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.shape != b.shape or a.size not in (2, 3):
            raise ValueError("slip vectors a, b must share dimension 2 or 3")
        if abs(np.linalg.norm(a) - 1.0) > 1e-12 or abs(np.linalg.norm(b) - 1.0) > 1e-12:
            raise ValueError("slip vectors a, b must be unit vectors")
        if abs(float(a @ b)) > 1e-12:
            raise ValueError("slip vectors a, b must be orthogonal")
        return self

    @property
    def dim(self) -> int:
        return len(self.a)

    @property
    def schmid(self) -> np.ndarray:
        """a⊗b（幂零的秩一矩阵）。"""
        return np.outer(self.a, self.b)


# ── 运行配置各分块 ──────────────────────────────────────────────────────


def _as_sides(v: Any) -> Any:
    if v is None:
        return []
    if isinstance(v, str):
        return [] if v in ("", "none") else [v]
    return v


class MeshConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nx: int = Field(default=8, ge=1)
    ny: int = Field(default=8, ge=1)
    Lx: float = 1.0
    Ly: float = 1.0
    gamma0_side: list[Side] = Field(default_factory=lambda: ["left"])
    gamma1_side: list[Side] = Field(default_factory=lambda: ["right"])
    gamma0_data: Literal["natural", "identity"] = "natural"

    @field_validator("gamma0_side", "gamma1_side", mode="before")
    @classmethod
    def _sides(cls, v: Any) -> Any:
        return _as_sides(v)

    @field_validator("Lx", "Ly")
    @classmethod
    def _nonzero(cls, v: float) -> float:
        # 负长度允许通过解析，在建网格时以反向单元报错
        if not math.isfinite(v) or v == 0.0:
            raise ValueError("must be finite and != 0")
        return v

    @model_validator(mode="after")
    def _disjoint(self) -> "MeshConfig":
        if not self.gamma0_side:
            raise ValueError("gamma0_side must select at least one side")
        overlap = set(self.gamma0_side) & set(self.gamma1_side)
        if overlap:
            raise ValueError(
                f"gamma0_side and gamma1_side must be disjoint (shared: {sorted(overlap)})"
            )
        return self


class Material(BaseModel):
    """W₁、W₂ 以及耗散系数的材料参数。默认数值为标定选择，并非实验数据。"""

    model_config = ConfigDict(extra="forbid")

    elastic_law: Literal["svk"] = "svk"
    lam: float = Field(default=1.0, ge=0)
    mu: float = Field(default=1.0, gt=0)
    c_H: float = Field(default=0.01, ge=0)
    c_det: float = Field(default=0.1, gt=0)
    s: float = Field(default=2.0, gt=0)
    eps_p: float = Field(default=1e-3, gt=0)
    beta: float = Field(default=6.0, gt=1)
    omega: float = Field(default=6.0, gt=1)
    alpha: float = Field(default=4.0, gt=0, description="W₁ 的增长指数（SVK 为 4）")
    hardening_enabled: bool = False
    hardening_dim: int = Field(default=1, ge=1)
    kappa: float = Field(default=0.05, gt=0)
    kappa_p: float = Field(default=0.0, ge=0)
    dissipation_quadrature: Literal["centroid", "vertex"] = "centroid"
    slip_direction: tuple[float, ...] = (1.0, 0.0)
    slip_normal: tuple[float, ...] = (0.0, 1.0)

    @field_validator("slip_direction", "slip_normal")
    @classmethod
    def _planar(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        # 装配只支持二维
        if len(v) != 2:
            raise ValueError(f"must have 2 components, got {len(v)}")
        return v

    @model_validator(mode="after")
    def _slip(self) -> "Material":
        SlipSystem(a=self.slip_direction, b=self.slip_normal)
        return self

    @property
    def dim(self) -> int:
        return 2

    @property
    def slip(self) -> SlipSystem:
        return SlipSystem(a=self.slip_direction, b=self.slip_normal)

    @property
    def m(self) -> int:
        """硬化变量个数（未启用时为 0）。"""
        return self.hardening_dim if self.hardening_enabled else 0

    @property
    def sobolev_d(self) -> float:
        """由 α⁻¹ + β⁻¹ = d⁻¹ 推出的可积指数 d。"""
        return self.alpha * self.beta / (self.alpha + self.beta)

    def natural_stretch(self) -> float:
        """SVK 应力与行列式障碍应力互相抵消的各向同性伸长 λ*。"""
        from scipy.optimize import brentq

        n = self.dim

        def residual(lmb: float) -> float:
            e = 0.5 * (lmb * lmb - 1.0)
            return lmb * (n * self.lam + 2.0 * self.mu) * e - self.s * self.c_det * lmb ** (
                -n * self.s - 1.0
            )

        hi = 2.0
        while residual(hi) < 0.0:
            hi *= 2.0
        return float(
            brentq(residual, 1.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        )


class DissipationSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kappa: float = Field(gt=0)
    kappa_p: float = Field(default=0.0, ge=0)
    quadrature: Literal["centroid", "vertex"] = "centroid"

    @classmethod
    def from_material(cls, material: Material) -> "DissipationSpec":
        return cls(
            kappa=material.kappa,
            kappa_p=material.kappa_p if material.hardening_enabled else 0.0,
            quadrature=material.dissipation_quadrature,
        )


class LoadingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    f_max: tuple[float, float] = (0.0, 0.0)
    g_max: tuple[float, float] = (0.0, 0.04)
    T: float = Field(default=1.0, gt=0)
    ramp: Literal["linear", "sinusoidal"] = "linear"
    steps: int = Field(default=20, ge=1)


class SolverOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tau: Optional[float] = Field(default=None, gt=0)
    max_outer: int = Field(default=50, ge=1)
    max_inner: int = Field(default=500, ge=1)
    g_tol: float = Field(default=1e-8, gt=0)
    e_tol: float = Field(default=1e-12, gt=0)
    eta: float = Field(default=1e-8, gt=0)
    armijo_c: float = Field(default=1e-4, gt=0, lt=1)
    shrink: float = Field(default=0.5, gt=0, lt=1)
    direction: Literal["newton_cg", "steepest"] = "newton_cg"
    max_cg: int = Field(default=200, ge=1)
    block_forcing: float = Field(default=0.1, gt=0, lt=1)
    polish: bool = True
    n_starts: int = Field(default=1, ge=1)
    start_radius: float = Field(default=1e-3, gt=0)
    seed: int = 0


class AuditConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    energy_inequality: bool = True
    stability: bool = True
    apriori: bool = True
    step_checks: bool = True
    rate_independence: bool = False
    n_samples: int = Field(default=100, ge=0)
    radius: float = Field(default=0.01, gt=0)
    seed: int = 0
    stability_stride: int = Field(default=1, ge=1)
    tol_stab_rel: float = Field(default=1e-8, gt=0)


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str = Field(default_factory=lambda: settings.DEFAULT_OUTPUT_DIR)
    field_stride: int = Field(default=10, ge=1)
    mesh_dump: bool = False


class RunConfig(BaseModel):
    """完整的运行配置（TOML 文档的各个分块）。"""

    model_config = ConfigDict(extra="forbid")

    mesh: MeshConfig = Field(default_factory=MeshConfig)
    material: Material = Field(default_factory=Material)
    loading: LoadingConfig = Field(default_factory=LoadingConfig)
    solver: SolverOptions = Field(default_factory=SolverOptions)
    audit: AuditConfig = Field(default_factory=AuditConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _tau_consistent(self) -> "RunConfig":
        tau = self.solver.tau
        if tau is not None:
            ratio = self.loading.T / tau
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ValueError("solver.tau must divide loading.T into an integral number of steps")
            if round(ratio) != self.loading.steps:
                raise ValueError("solver.tau must equal loading.T / loading.steps")
        return self

    @property
    def tau(self) -> float:
        return self.loading.T / self.loading.steps


# ── 审计报告 ─────────────────────────────────────────────────────────


class AuditCheck(BaseModel):
    """单项审计：名称、是否通过、实测裕量/违背量、所用容差、说明。"""

    name: str
    passed: bool
    value: float
    tolerance: float
    details: str = ""
    data: dict[str, float] = Field(default_factory=dict)

    # 严格 JSON 不允许 Infinity / NaN，序列化时写成 null
    @field_serializer("value", "tolerance", when_used="json")
    def _finite_or_null(self, v: float) -> Optional[float]:
        return v if math.isfinite(v) else None

    @field_serializer("data", when_used="json")
    def _finite_data(self, d: dict[str, float]) -> dict[str, Optional[float]]:
        return {k: (v if math.isfinite(v) else None) for k, v in d.items()}


class AuditReport(BaseModel):
    checks: list[AuditCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def extend(self, other: "AuditReport") -> "AuditReport":
        self.checks.extend(other.checks)
        return self

    def get(self, name: str) -> AuditCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(
                f"[{flag}] {c.name}: value={c.value:.6e} tol={c.tolerance:.3e}"
                + (f" – {c.details}" if c.details else "")
            )
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"overall: {verdict} ({len(self.checks)} checks)")
        return "\n".join(lines) + "\n"


# ── RPC 方法参数 ─────────────────────────────────────────────────────


class RunParams(BaseModel):
    """``run`` / ``check`` 方法接受的参数：配置文档（TOML 文本或已解析对象）。"""

    config: Union[str, dict[str, Any]] = Field(default_factory=dict)


class ReverseYoungParams(BaseModel):
    a: float
    b: float
    delta: float
    r: float
