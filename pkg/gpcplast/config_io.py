"""
运行配置（TOML）的解析、校验与回显。

- 语法错误 → :class:`ConfigParseError`（带行、列）
- 约束违背 → :class:`ConfigValidationError`，形如 ``material.kappa must be > 0 (line 12)``
- 理论假设（指数条件）不满足时只发出 :class:`HypothesisWarning`，解析照常成功
"""

from __future__ import annotations

import logging
import re
import sys
import warnings
from pathlib import Path
from typing import Any, Optional, Union

import tomli_w
from pydantic import ValidationError

from gpcplast.errors import ConfigParseError, ConfigValidationError
from gpcplast.models import RunConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)


class HypothesisWarning(UserWarning):
    """参数不满足存在性定理的指数假设（求解仍可进行）。"""


# ── 演示配置 ─────────────────────────────────────────────────────────────

DEMO_TOML = """\
# gpcplast 演示配置：8×8 单位正方形，左边固定，右边施加剪切面力，
# 单滑移系 a = (1, 0)、b = (0, 1)，线性加载 N = 20 步。

[mesh]
nx = 8
ny = 8
Lx = 1.0
Ly = 1.0
gamma0_side = ["left"]
gamma1_side = ["right"]
gamma0_data = "natural"

[material]
elastic_law = "svk"
lam = 1.0
mu = 1.0
c_H = 0.01
c_det = 0.1
s = 2.0
eps_p = 0.001
beta = 6.0
omega = 6.0
alpha = 4.0
hardening_enabled = false
hardening_dim = 1
kappa = 0.05
kappa_p = 0.0
dissipation_quadrature = "centroid"
slip_direction = [1.0, 0.0]
slip_normal = [0.0, 1.0]

[loading]
f_max = [0.0, 0.0]
g_max = [0.0, 0.04]
T = 1.0
ramp = "linear"
steps = 20

[solver]
max_outer = 50
max_inner = 500
g_tol = 1e-8
e_tol = 1e-12
eta = 1e-8
armijo_c = 1e-4
shrink = 0.5
direction = "newton_cg"
max_cg = 200
block_forcing = 0.1
polish = true
n_starts = 1
start_radius = 0.001
seed = 0

[audit]
energy_inequality = true
stability = true
apriori = true
step_checks = true
rate_independence = false
n_samples = 100
radius = 0.01
seed = 0
stability_stride = 1
tol_stab_rel = 1e-8

[output]
directory = "runs/demo"
field_stride = 10
mesh_dump = false
"""


def demo_config() -> str:
    return DEMO_TOML


# ── 错误定位 ─────────────────────────────────────────────────────────────

_TABLE_RE = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]\s*(#.*)?$")

_CONSTRAINTS = {
    "greater_than": ("gt", ">"),
    "greater_than_equal": ("ge", ">="),
    "less_than": ("lt", "<"),
    "less_than_equal": ("le", "<="),
}


def locate_key(text: str, loc: tuple[Any, ...]) -> Optional[int]:
    """在 TOML 文本中查找 ``loc``（如 ``("material", "kappa")``）所在的 1 起始行号。"""
    names = [str(p) for p in loc if isinstance(p, str)]
    if not names:
        return None
    table, key = (".".join(names[:-1]), names[-1]) if len(names) > 1 else ("", names[0])
    key_re = re.compile(rf"^\s*{re.escape(key)}\s*=")
    current = ""
    header_line = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _TABLE_RE.match(line)
        if m:
            current = m.group(1)
            if current == ".".join(names):
                header_line = lineno
            continue
        if current == table and key_re.match(line):
            return lineno
    return header_line


def _bound(v: Any) -> str:
    """按用户书写的形式打印约束界（``0.0`` → ``0``）。"""
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def _describe(err: dict[str, Any]) -> str:
    field = ".".join(str(p) for p in err["loc"]) or "config"
    kind = err["type"]
    if kind in _CONSTRAINTS:
        key, op = _CONSTRAINTS[kind]
        return f"{field} must be {op} {_bound(err['ctx'][key])}"
    if kind == "extra_forbidden":
        return f"{field} is not a recognised key"
    msg = err["msg"].removeprefix("Value error, ")
    return f"{field}: {msg}"


def _validation_error(exc: ValidationError, text: Optional[str]) -> ConfigValidationError:
    messages = []
    first_line = None
    for err in exc.errors():
        line = locate_key(text, err["loc"]) if text is not None else None
        first_line = first_line or line
        messages.append(_describe(err) + (f" (line {line})" if line else ""))
    return ConfigValidationError(
        "; ".join(messages), data={"errors": messages, "line": first_line}
    )


# ── 假设检查 ─────────────────────────────────────────────────────────────


def hypothesis_warnings(cfg: RunConfig) -> list[str]:
    """不满足时返回说明文字的列表（n = 2）。"""
    m = cfg.material
    n = m.dim
    d = m.sobolev_d
    out = []
    if m.beta <= n:
        out.append(f"β>n required by growth (beta={m.beta:g}, n={n})")
    if m.hardening_enabled and m.omega <= n:
        out.append(f"ω>n required by growth (omega={m.omega:g}, n={n})")
    if m.alpha <= n - 1:
        out.append(f"α>n−1 required by growth (alpha={m.alpha:g})")
    if d <= n - 1:
        out.append(f"d⁻¹ < (n−1)⁻¹ required (d={d:g})")
    if m.beta > 1 and d <= m.beta * (n - 1) / (m.beta - 1):
        out.append(f"d > β(n−1)/(β−1) required (d={d:g})")
    return out


def _warn_hypotheses(cfg: RunConfig) -> None:
    for msg in hypothesis_warnings(cfg):
        logger.warning("理论假设不满足: %s", msg)
        warnings.warn(msg, HypothesisWarning, stacklevel=3)


# ── 解析 / 回显 ──────────────────────────────────────────────────────────


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        if line is None:
            m = re.search(r"line (\d+), column (\d+)", str(exc))
            if m:
                line, col = int(m.group(1)), int(m.group(2))
        raise ConfigParseError(
            f"{source}: TOML 语法错误: {exc}", data={"line": line, "column": col}
        ) from exc
    return config_from_dict(doc, text)


def config_from_dict(doc: dict[str, Any], text: Optional[str] = None) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise _validation_error(exc, text) from exc
    _warn_hypotheses(cfg)
    return cfg


def parse_config(path: Union[str, Path]) -> RunConfig:
    """读取并校验 TOML 运行配置；省略的键取默认值。"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"无法读取配置文件 {path}: {exc}") from exc
    cfg = parse_config_text(text, source=str(path))
    logger.info("已加载配置: %s", path)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """展开全部默认值后的有效配置；再次解析得到相同的 RunConfig。"""
    return tomli_w.dumps(cfg.model_dump(mode="json", exclude_none=True))
