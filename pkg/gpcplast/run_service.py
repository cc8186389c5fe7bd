"""
运行服务：在工作线程中执行演化与审计，并以信号量限制并发运行数。

用法::

    service = RunService()
    await service.start()
    ...
    summary = await service.run(cfg)
    ...
    await service.stop()

或者使用异步上下文管理器::

    async with RunService() as service:
        summary = await service.run(cfg)
"""

from __future__ import annotations

import asyncio
import logging
import time
import warnings
from dataclasses import asdict
from typing import Any, Union

from config import settings
from gpcplast.config_io import HypothesisWarning, config_from_dict, dump_config, parse_config_text
from gpcplast.diagnostics import reverse_young_check, run_audits
from gpcplast.errors import ServiceUnavailable
from gpcplast.models import AuditReport, RunConfig
from gpcplast.solver import run_evolution

logger = logging.getLogger(__name__)


class RunService:
    """持有并发闸门与运行计数的服务对象；单次运行本身在线程中同步执行。"""

    def __init__(self) -> None:
        self._semaphore = asyncio.Semaphore(settings.MAX_CONCURRENT_RUNS)
        self._lifecycle_lock = asyncio.Lock()
        self._active_runs = 0
        self._completed_runs = 0
        self._closed = False

    # ── 生命周期 ─────────────────────────────────────────────────────────

    async def start(self) -> None:
        """（重新）开始接受运行请求。"""
        async with self._lifecycle_lock:
            self._closed = False
        logger.info("运行服务已启动 (最大并发=%d)", settings.MAX_CONCURRENT_RUNS)

    async def stop(self) -> None:
        """停止接受新的运行；已在执行的运行照常完成。"""
        async with self._lifecycle_lock:
            self._closed = True
        logger.info(
            "运行服务已停止 (共完成 %d 次运行，仍在执行 %d 次)",
            self._completed_runs,
            self._active_runs,
        )

    async def __aenter__(self) -> "RunService":
        await self.start()
        return self

    async def __aexit__(self, *_: object) -> None:
        await self.stop()

    @property
    def active_runs(self) -> int:
        return self._active_runs

    @property
    def closed(self) -> bool:
        return self._closed

    # ── 公共 API ─────────────────────────────────────────────────────────

    @staticmethod
    def load_config(doc: Union[str, dict[str, Any]]) -> tuple[RunConfig, list[str]]:
        """解析 TOML 文本或已解析的字典，同时收集理论假设警告。"""
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", HypothesisWarning)
            cfg = parse_config_text(doc, "<rpc>") if isinstance(doc, str) else config_from_dict(doc)
        notes = [str(w.message) for w in caught if issubclass(w.category, HypothesisWarning)]
        return cfg, notes

    async def check(self, doc: Union[str, dict[str, Any]]) -> dict[str, Any]:
        cfg, notes = self.load_config(doc)
        return {"config": dump_config(cfg), "warnings": notes}

    async def run(self, cfg: RunConfig) -> dict[str, Any]:
        """执行一次完整运行；返回台账与审计摘要。服务停止后抛出 ServiceUnavailable。"""
        async with self._semaphore:
            await self._enter()
            try:
                return await asyncio.to_thread(self._run_sync, cfg)
            finally:
                await self._leave()

    async def reverse_young(self, a: float, b: float, delta: float, r: float) -> AuditReport:
        return reverse_young_check(a, b, delta, r)

    # ── 内部辅助函数 ─────────────────────────────────────────────────────

    async def _enter(self) -> None:
        async with self._lifecycle_lock:
            if self._closed:
                raise ServiceUnavailable("运行服务已停止，不再接受新的运行")
            self._active_runs += 1

    async def _leave(self) -> None:
        async with self._lifecycle_lock:
            self._active_runs = max(0, self._active_runs - 1)
            self._completed_runs += 1

    @staticmethod
    def _run_sync(cfg: RunConfig) -> dict[str, Any]:
        started = time.perf_counter()
        traj = run_evolution(cfg)
        report = run_audits(traj, cfg)
        logger.info(
            "RPC 运行完成: N=%d, 审计=%s, 用时 %.2fs",
            cfg.loading.steps,
            "PASS" if report.passed else "FAIL",
            time.perf_counter() - started,
        )
        return {
            "ledger": [asdict(r) for r in traj.records],
            "var_total": traj.var_total,
            "audit": report.model_dump(mode="json"),
            "passed": report.passed,
        }
