"""
命令行入口 ``gpcplast``。

子命令：
  run <config> [--strict] [--out DIR]  – 求解演化、执行审计并写出结果
  audit <outdir> [--strict]            – 对已保存的轨迹重新审计
  check <config>                       – 仅校验配置，打印有效配置
  demo                                 – 向标准输出打印演示配置
  serve                                – 启动 JSON-RPC 服务

退出码：0 成功；1 配置或求解失败；2 ``--strict`` 下审计未通过。
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence, Union

from config import settings
from gpcplast import __version__
from gpcplast.config_io import demo_config, dump_config, parse_config
from gpcplast.diagnostics import run_audits
from gpcplast.errors import GpcPlastError
from gpcplast.output import emit_outputs, load_saved, write_audit
from gpcplast.solver import run_evolution

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_AUDIT = 2


def _setup_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
        format="%(asctime)s %(levelname)-8s %(name)s – %(message)s",
        datefmt="%Y-%m-%dT%H:%M:%S",
        stream=sys.stderr,
    )


def _fail(exc: Exception) -> int:
    prefix = f"error [{int(exc.code)}]" if isinstance(exc, GpcPlastError) else "error"
    print(f"{prefix}: {exc}", file=sys.stderr)
    return EXIT_FAILURE


# ── 子命令 ───────────────────────────────────────────────────────────────


def run_command(
    config_path: Union[str, Path], strict: bool = False, out: Optional[Union[str, Path]] = None
) -> int:
    try:
        cfg = parse_config(config_path)
        traj = run_evolution(cfg)
        report = run_audits(traj, cfg)
        out_dir = emit_outputs(traj, report, cfg, out)
    except (GpcPlastError, OSError) as exc:
        logger.error("运行失败: %s", exc)
        return _fail(exc)
    except Exception as exc:
        logger.exception("运行时出现未预期的异常")
        return _fail(exc)

    sys.stdout.write(report.to_text())
    print(f"outputs: {out_dir}")
    if strict and not report.passed:
        logger.warning("--strict: 审计未通过")
        return EXIT_AUDIT
    return EXIT_OK


def audit_command(outdir: Union[str, Path], strict: bool = False) -> int:
    try:
        cfg, traj = load_saved(outdir)
        report = run_audits(traj, cfg)
        write_audit(Path(outdir), report)
    except (GpcPlastError, OSError, KeyError) as exc:
        return _fail(exc)
    except Exception as exc:
        logger.exception("重新审计时出现未预期的异常")
        return _fail(exc)
    sys.stdout.write(report.to_text())
    if strict and not report.passed:
        return EXIT_AUDIT
    return EXIT_OK


def check_command(config_path: Union[str, Path]) -> int:
    try:
        cfg = parse_config(config_path)
    except (GpcPlastError, OSError) as exc:
        return _fail(exc)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def demo_command() -> int:
    sys.stdout.write(demo_config())
    return EXIT_OK


def serve_command() -> int:
    from gpcplast.main import main as serve

    serve()
    return EXIT_OK


# ── 参数解析 ─────────────────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpcplast",
        description="梯度多凸有限应变单滑移弹塑性的时间增量求解与审计",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="求解演化并写出结果")
    p_run.add_argument("config", help="TOML 运行配置")
    p_run.add_argument("--strict", action="store_true", help="审计未通过时以 2 退出")
    p_run.add_argument("--out", default=None, help="输出目录（覆盖 [output].directory）")

    p_audit = sub.add_parser("audit", help="对已保存的运行重新审计")
    p_audit.add_argument("outdir")
    p_audit.add_argument("--strict", action="store_true")

    p_check = sub.add_parser("check", help="仅校验配置")
    p_check.add_argument("config")

    sub.add_parser("demo", help="打印演示配置")
    sub.add_parser("serve", help="启动 JSON-RPC 服务")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return serve_command()
    _setup_logging()
    if args.command == "run":
        return run_command(args.config, strict=args.strict, out=args.out)
    if args.command == "audit":
        return audit_command(args.outdir, strict=args.strict)
    if args.command == "check":
        return check_command(args.config)
    return demo_command()


if __name__ == "__main__":
    sys.exit(main())
