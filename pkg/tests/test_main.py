import asyncio

import pytest
from aiohttp.test_utils import TestClient, TestServer

from gpcplast.main import (
    RPC_HANDLER_APP_KEY,
    RUN_SERVICE_APP_KEY,
    _on_cleanup,
    _on_startup,
    build_app,
)
from gpcplast.models import ErrorCode
from gpcplast.rpc_handler import RpcHandler
from gpcplast.run_service import RunService


class FakeRunService(RunService):
    def __init__(self) -> None:
        super().__init__()
        self.started = False
        self.stopped = False

    async def start(self) -> None:
        await super().start()
        self.started = True

    async def stop(self) -> None:
        await super().stop()
        self.stopped = True


@pytest.fixture
async def client():
    service = FakeRunService()
    async with TestClient(TestServer(build_app(service))) as c:
        yield c


async def test_build_app_wires_service_and_handler():
    service = FakeRunService()
    app = build_app(service)
    assert app[RUN_SERVICE_APP_KEY] is service
    assert isinstance(app[RPC_HANDLER_APP_KEY], RpcHandler)


async def test_startup_and_cleanup_manage_service():
    service = FakeRunService()
    app = build_app(service)

    await _on_startup(app)
    assert service.started is True

    await _on_cleanup(app)
    assert service.stopped is True


async def test_health(client):
    resp = await client.get("/")
    assert resp.status == 200
    assert await resp.json() == {"status": "ok"}


async def test_rpc_over_http(client):
    resp = await client.post("/rpc", json={"jsonrpc": "2.0", "method": "ping", "id": 1})
    assert resp.status == 200
    body = await resp.json()
    assert body["result"] == {"pong": True, "active_runs": 0}


async def test_rpc_rejects_get(client):
    resp = await client.get("/rpc")
    assert resp.status == 405
    assert (await resp.json())["error"]["code"] == ErrorCode.INVALID_REQUEST


async def test_rpc_bad_json(client):
    resp = await client.post(
        "/rpc", data=b"{nope", headers={"Content-Type": "application/json"}
    )
    assert (await resp.json())["error"]["code"] == ErrorCode.PARSE_ERROR


async def test_rpc_notification_returns_204(client):
    resp = await client.post("/rpc", json={"jsonrpc": "2.0", "method": "ping"})
    assert resp.status == 204


async def test_concurrent_runs_are_gated(monkeypatch):
    monkeypatch.setattr("gpcplast.run_service.settings.MAX_CONCURRENT_RUNS", 1)
    service = RunService()
    peak = 0

    def fake_run(cfg):
        nonlocal peak
        peak = max(peak, service.active_runs)
        return {"steps": cfg}

    monkeypatch.setattr(service, "_run_sync", fake_run)
    async with service:
        results = await asyncio.gather(service.run(1), service.run(2))
    assert [r["steps"] for r in results] == [1, 2]
    assert peak == 1
    assert service.active_runs == 0
