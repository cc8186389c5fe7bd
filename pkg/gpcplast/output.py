"""
运行结果落盘：ledger.csv、fields_{k}.csv、audit.txt / audit.csv、config.echo、
trajectory.npz，以及供 ``gpcplast audit`` 重新审计的加载函数。

CSV 使用 ``.`` 小数点和 ``%.17g`` 格式，与区域设置无关；相同配置重跑得到逐字节相同的文件。
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from gpcplast.config_io import dump_config, parse_config
from gpcplast.energy import State
from gpcplast.models import AuditReport, RunConfig
from gpcplast.solver import Problem, StepRecord, Trajectory

logger = logging.getLogger(__name__)

LEDGER_COLUMNS = (
    "k",
    "t",
    "energy",
    "diss_increment",
    "var_cumulative",
    "work_increment",
    "balance_residual",
    "outer_iters",
    "grad_norm",
)
AUDIT_COLUMNS = ("name", "passed", "value", "tolerance", "details")

# trajectory.npz 中额外保存、ledger.csv 中不出现的逐步字段
_EXTRA_RECORD_FIELDS = ("inner_iters", "converged", "warm_start_slack")


def ledger_array(traj: Trajectory) -> np.ndarray:
    return np.array(
        [[float(getattr(r, c)) for c in LEDGER_COLUMNS] for r in traj.records], dtype=float
    )


def field_table(traj: Trajectory, k: int) -> np.ndarray:
    mesh = traj.mesh
    q = traj.states[k]
    x = np.asarray(mesh.nodes)
    u = q.y - x
    return np.column_stack([np.arange(mesh.n_nodes), x, u, q.gamma, q.p])


def field_steps(n_steps: int, stride: int) -> list[int]:
    ks = list(range(0, n_steps + 1, stride))
    if ks[-1] != n_steps:
        ks.append(n_steps)
    return ks


def _field_header(m: int) -> str:
    return ",".join(["node_id", "x", "y", "u_x", "u_y", "gamma"] + [f"p_{i}" for i in range(m)])


def write_audit(out: Path, report: AuditReport) -> None:
    (out / "audit.txt").write_text(report.to_text(), encoding="utf-8")
    with open(out / "audit.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=AUDIT_COLUMNS)
        writer.writeheader()
        for c in report.checks:
            writer.writerow(
                {
                    "name": c.name,
                    "passed": int(c.passed),
                    "value": f"{c.value:.17g}",
                    "tolerance": f"{c.tolerance:.17g}",
                    "details": c.details,
                }
            )


def emit_outputs(
    traj: Trajectory,
    report: Optional[AuditReport],
    cfg: RunConfig,
    out_dir: Optional[Union[str, Path]] = None,
) -> Path:
    """写出全部结果文件，返回输出目录。"""
    out = Path(out_dir if out_dir is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)

    np.savetxt(
        out / "ledger.csv",
        ledger_array(traj),
        fmt="%.17g",
        delimiter=",",
        header=",".join(LEDGER_COLUMNS),
        comments="",
    )

    m = traj.problem.material.m
    for k in field_steps(len(traj.states) - 1, cfg.output.field_stride):
        np.savetxt(
            out / f"fields_{k}.csv",
            field_table(traj, k),
            fmt="%.17g",
            delimiter=",",
            header=_field_header(m),
            comments="",
        )

    if report is not None:
        write_audit(out, report)

    (out / "config.echo").write_text(dump_config(cfg), encoding="utf-8")

    extra = {
        f: np.array([float(getattr(r, f)) for r in traj.records]) for f in _EXTRA_RECORD_FIELDS
    }
    np.savez(
        out / "trajectory.npz",
        times=np.asarray(traj.times),
        y=np.stack([q.y for q in traj.states]),
        gamma=np.stack([q.gamma for q in traj.states]),
        p=np.stack([q.p for q in traj.states]),
        ledger=ledger_array(traj),
        load_values=np.asarray(traj.load_values),
        linear_work=np.asarray(traj.linear_work),
        **extra,
    )

    if cfg.output.mesh_dump:
        nodes, elements = traj.mesh.dump()
        (out / "nodes.txt").write_text(nodes, encoding="utf-8")
        (out / "elements.txt").write_text(elements, encoding="utf-8")

    logger.info("结果已写入 %s", out)
    return out


def load_saved(out_dir: Union[str, Path]) -> tuple[RunConfig, Trajectory]:
    """由 config.echo 与 trajectory.npz 重建轨迹（不重新求解）。"""
    out = Path(out_dir)
    cfg = parse_config(out / "config.echo")
    problem = Problem.from_config(cfg)
    with np.load(out / "trajectory.npz") as data:
        arrays = {key: data[key] for key in data.files}

    slip = problem.material.slip
    states = [
        State(y=y, gamma=g, p=p, slip=slip)
        for y, g, p in zip(arrays["y"], arrays["gamma"], arrays["p"])
    ]
    records = []
    for i, row in enumerate(arrays["ledger"]):
        values = dict(zip(LEDGER_COLUMNS, row))
        records.append(
            StepRecord(
                k=int(values["k"]),
                t=float(values["t"]),
                energy=float(values["energy"]),
                diss_increment=float(values["diss_increment"]),
                var_cumulative=float(values["var_cumulative"]),
                work_increment=float(values["work_increment"]),
                balance_residual=float(values["balance_residual"]),
                outer_iters=int(values["outer_iters"]),
                inner_iters=int(arrays["inner_iters"][i]),
                grad_norm=float(values["grad_norm"]),
                converged=bool(arrays["converged"][i]),
                warm_start_slack=float(arrays["warm_start_slack"][i]),
            )
        )
    traj = Trajectory(
        mesh=problem.mesh,
        problem=problem,
        times=[float(t) for t in arrays["times"]],
        states=states,
        records=records,
        load_values=[float(v) for v in arrays["load_values"]],
        linear_work=[float(v) for v in arrays["linear_work"]],
    )
    logger.info("已加载保存的轨迹: %s (%d 个状态)", out, len(states))
    return cfg, traj
