"""
``gpcplast serve``：把 :class:`RpcHandler` 挂到 aiohttp 上。

  POST /rpc  JSON-RPC 2.0（解析错误也由 RpcHandler 按协议回复）
  GET  /     存活检查
"""

from __future__ import annotations

import logging
import sys

from aiohttp import web

from config import settings
from gpcplast.models import ErrorCode
from gpcplast.rpc_handler import RpcHandler
from gpcplast.run_service import RunService

logger = logging.getLogger(__name__)
RUN_SERVICE_APP_KEY = web.AppKey("run_service", RunService)
RPC_HANDLER_APP_KEY = web.AppKey("rpc_handler", RpcHandler)

_CORS = {
    "Access-Control-Allow-Origin": "*",
    "Access-Control-Allow-Methods": "POST, OPTIONS",
    "Access-Control-Allow-Headers": "Content-Type",
}


def _setup_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
        format="%(asctime)s %(levelname)-8s %(name)s – %(message)s",
        datefmt="%Y-%m-%dT%H:%M:%S",
        stream=sys.stdout,
    )


# ── 路由 ────────────────────────────────────────────────────────────────────


async def handle_rpc(request: web.Request) -> web.Response:
    if request.method == "OPTIONS":
        return web.Response(status=204, headers=_CORS)
    if request.method != "POST":
        body = {
            "jsonrpc": "2.0",
            "id": None,
            "error": {"code": int(ErrorCode.INVALID_REQUEST), "message": f"/rpc 只接受 POST，收到 {request.method}"},
        }
        return web.json_response(body, status=405)

    reply = await request.app[RPC_HANDLER_APP_KEY].handle(await request.read())
    if reply is None:
        return web.Response(status=204)
    # 求解或协议错误同样以 200 返回，错误在 JSON-RPC 体里
    return web.json_response(reply)


async def handle_health(_request: web.Request) -> web.Response:
    return web.json_response({"status": "ok"})


# ── 应用 ────────────────────────────────────────────────────────────────────


def build_app(service: RunService) -> web.Application:
    app = web.Application()
    app[RUN_SERVICE_APP_KEY] = service
    app[RPC_HANDLER_APP_KEY] = RpcHandler(service)
    app.router.add_get("/", handle_health)
    app.router.add_route("*", "/rpc", handle_rpc)
    app.on_startup.append(_on_startup)
    app.on_cleanup.append(_on_cleanup)
    return app


async def _on_startup(app: web.Application) -> None:
    await app[RUN_SERVICE_APP_KEY].start()
    logger.info("gpcplast JSON-RPC 已就绪: http://%s:%d/rpc", settings.HOST, settings.PORT)


async def _on_cleanup(app: web.Application) -> None:
    # 之后到达的 run 请求得到 ServiceUnavailable
    await app[RUN_SERVICE_APP_KEY].stop()


def main() -> None:
    _setup_logging()
    web.run_app(
        build_app(RunService()),
        host=settings.HOST,
        port=settings.PORT,
        print=None,
        access_log=None,
    )


if __name__ == "__main__":
    main()
