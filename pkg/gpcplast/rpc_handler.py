"""
gpcplast 的 JSON-RPC 2.0 入口：check / run / reverse_young / ping / get_methods。

GpcPlastError 按其 ``code`` 原样返回给调用方，其余异常一律记为 -32603。
"""

from __future__ import annotations

import json
import logging
from typing import Any, Awaitable, Callable, Optional

from pydantic import BaseModel, ValidationError

from gpcplast.errors import GpcPlastError
from gpcplast.models import (
    ErrorCode,
    JsonRpcError,
    JsonRpcRequest,
    JsonRpcResponse,
    ReverseYoungParams,
    RunParams,
)
from gpcplast.run_service import RunService

logger = logging.getLogger(__name__)

Handler = Callable[[RunService, dict[str, Any]], Awaitable[dict[str, Any]]]

_METHODS: dict[str, Handler] = {}


def rpc_method(name: str) -> Callable[[Handler], Handler]:
    """把 ``async def f(service, params)`` 登记到 RPC 方法表。"""

    def register(fn: Handler) -> Handler:
        _METHODS[name] = fn
        return fn

    return register


class ProtocolError(Exception):
    """请求在到达 RunService 之前就被拒绝（解析、外壳、方法名、参数）。"""

    def __init__(self, code: ErrorCode, message: str, data: Any = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.data = data


class RpcHandler:
    """把单个请求交给 :class:`RunService`；自身不持有求解状态。"""

    def __init__(self, service: RunService) -> None:
        self._service = service

    async def handle(self, raw: bytes | str | dict[str, Any]) -> Optional[dict[str, Any]]:
        """处理一个请求（HTTP 体、JSON 文本或已解析的字典）；无 id 的请求返回 None。"""
        rpc_id: Any = None
        try:
            payload = _load_payload(raw)
            if isinstance(payload, dict):
                rpc_id = payload.get("id")
            request = _envelope(payload)
            rpc_id = request.id
            method = _METHODS.get(request.method)
            if method is None:
                raise ProtocolError(ErrorCode.METHOD_NOT_FOUND, f"未知方法: {request.method!r}")
            logger.debug("RPC %s (ID: %r)", request.method, rpc_id)
            result = await method(self._service, request.params or {})
        except ProtocolError as exc:
            return _failure(rpc_id, exc.code, exc.message, exc.data)
        except GpcPlastError as exc:
            logger.warning("RPC 调用失败 (ID: %r): [%d] %s", rpc_id, int(exc.code), exc.message)
            return _failure(rpc_id, exc.code, exc.message, exc.data)
        except Exception:
            logger.exception("RPC 调用出现未预期的异常 (ID: %r)", rpc_id)
            return _failure(rpc_id, ErrorCode.INTERNAL_ERROR, "服务器内部错误")

        if rpc_id is None:
            return None
        # 结果里的 null（非有限审计量）必须保留
        return JsonRpcResponse(id=rpc_id, result=result).model_dump(exclude={"error"})


# ── 请求与响应外壳 ──────────────────────────────────────────────────────────


def _load_payload(raw: bytes | str | dict[str, Any]) -> Any:
    if isinstance(raw, dict):
        return raw
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(ErrorCode.PARSE_ERROR, f"请求体不是合法的 JSON: {exc}") from exc


def _envelope(payload: Any) -> JsonRpcRequest:
    if not isinstance(payload, dict):
        raise ProtocolError(ErrorCode.INVALID_REQUEST, "请求必须是 JSON 对象")
    try:
        return JsonRpcRequest.model_validate(payload)
    except ValidationError as exc:
        raise ProtocolError(
            ErrorCode.INVALID_REQUEST,
            "不是 JSON-RPC 2.0 请求",
            data=exc.errors(include_url=False, include_context=False),
        ) from exc


def _failure(rpc_id: Any, code: int, message: str, data: Any = None) -> dict[str, Any]:
    error = JsonRpcError(code=int(code), message=message, data=data)
    body = JsonRpcResponse(id=rpc_id, error=error).model_dump(exclude={"result"})
    if data is None:
        body["error"].pop("data")
    return body


def _params(model: type[BaseModel], params: dict[str, Any]) -> Any:
    try:
        return model.model_validate(params)
    except ValidationError as exc:
        details = [f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()]
        raise ProtocolError(ErrorCode.INVALID_PARAMS, "参数校验失败", data={"details": details}) from exc


# ── 方法 ────────────────────────────────────────────────────────────────────


@rpc_method("check")
async def _check(service: RunService, params: dict[str, Any]) -> dict[str, Any]:
    """校验配置文档，返回展开默认值后的有效配置与假设警告。"""
    p = _params(RunParams, params)
    return await service.check(p.config)


@rpc_method("run")
async def _run(service: RunService, params: dict[str, Any]) -> dict[str, Any]:
    """执行演化与启用的审计，同步返回台账与审计摘要。"""
    p = _params(RunParams, params)
    cfg, notes = service.load_config(p.config)
    result = await service.run(cfg)
    result["warnings"] = notes
    return result


@rpc_method("reverse_young")
async def _reverse_young(service: RunService, params: dict[str, Any]) -> dict[str, Any]:
    p = _params(ReverseYoungParams, params)
    report = await service.reverse_young(p.a, p.b, p.delta, p.r)
    return report.model_dump(mode="json")


@rpc_method("ping")
async def _ping(service: RunService, params: dict[str, Any]) -> dict[str, Any]:  # noqa: ARG001
    """连通性检查，附带当前正在执行的运行数。"""
    return {"pong": True, "active_runs": service.active_runs}


@rpc_method("get_methods")
async def _get_methods(service: RunService, params: dict[str, Any]) -> dict[str, Any]:  # noqa: ARG001
    return {"methods": sorted(_METHODS)}
