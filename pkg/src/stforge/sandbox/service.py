"""JSON-RPC 2.0 wire service for the sandbox, served over HTTP.

Methods on POST /rpc: tools/list, tools/call, and sandbox/stats. Request ids
are echoed verbatim. Normalization failures map to error -32602 with the
error class name in data; tool execution failures map to -32000.
"""

from __future__ import annotations

import json
import socket
from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ValidationError

from ..errors import StforgeError
from .normalize import EnumViolation, MissingRequiredParam, TypeMismatch
from .schemas import UnknownTool
from .tools import SandboxExecutor, ToolExecutionError
from .world import BBox, generate_world

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
TOOL_ERROR = -32000

_PARAM_ERRORS = (MissingRequiredParam, TypeMismatch, EnumViolation, UnknownTool)


class ToolCallParams(BaseModel):
    name: str
    arguments: dict = {}


class RpcEnvelope(BaseModel):
    jsonrpc: str = "2.0"
    id: int | str | None = None
    method: str
    params: dict = {}


def _result(req_id, payload) -> JSONResponse:
    return JSONResponse({"jsonrpc": "2.0", "id": req_id, "result": payload})


def _error(req_id, code: int, message: str, data=None) -> JSONResponse:
    err: dict = {"code": code, "message": message}
    if data is not None:
        err["data"] = data
    return JSONResponse({"jsonrpc": "2.0", "id": req_id, "error": err})


def create_app(executor: SandboxExecutor) -> FastAPI:
    app = FastAPI(title="stforge sandbox", docs_url=None, redoc_url=None)
    app.state.executor = executor

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/rpc")
    async def rpc(request: Request) -> JSONResponse:
        raw = await request.body()
        try:
            body = json.loads(raw)
        except json.JSONDecodeError:
            return _error(None, PARSE_ERROR, "request body is not valid JSON")
        try:
            envelope = RpcEnvelope.model_validate(body)
        except ValidationError:
            req_id = body.get("id") if isinstance(body, dict) else None
            return _error(req_id, INVALID_REQUEST, "not a valid JSON-RPC request")

        if envelope.method == "tools/list":
            return _result(envelope.id, {"tools": [s.to_wire() for s in executor.registry]})

        if envelope.method == "sandbox/stats":
            return _result(envelope.id, executor.stats())

        if envelope.method == "tools/call":
            try:
                call = ToolCallParams.model_validate(envelope.params)
            except ValidationError:
                return _error(envelope.id, INVALID_PARAMS,
                              "params must carry a tool name and an arguments object")
            try:
                response = executor.dispatch(call.name, call.arguments)
            except _PARAM_ERRORS as exc:
                return _error(envelope.id, INVALID_PARAMS, str(exc),
                              data={"error": type(exc).__name__})
            except ToolExecutionError as exc:
                return _error(envelope.id, TOOL_ERROR, str(exc),
                              data={"error": type(exc).__name__})
            return _result(envelope.id, {
                "tool": response.tool,
                "text": response.text,
                "data": response.data,
                "cache_hit": response.cache_hit,
                "latency_ms": response.latency_ms,
            })

        return _error(envelope.id, METHOD_NOT_FOUND, f"unknown method {envelope.method!r}")

    return app


@dataclass
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    seed: int = 0
    n_pois: int = 500
    cache_capacity: int = 65_536
    bbox: BBox | None = None
    snapshot_path: str | None = None


def build_executor(config: ServeConfig) -> SandboxExecutor:
    world = generate_world(
        config.seed, config.n_pois, config.bbox or BBox(19.90, 20.15, 110.10, 110.55)
    )
    return SandboxExecutor(world, cache_capacity=config.cache_capacity)


def serve(config: ServeConfig) -> None:
    """Run the service until a termination signal; drains in-flight calls."""
    import uvicorn

    executor = build_executor(config)
    if config.snapshot_path:
        with open(config.snapshot_path, "wb") as fh:
            fh.write(executor.world.snapshot_bytes())
    app = create_app(executor)

    sock = socket.create_server((config.host, config.port))
    bound_port = sock.getsockname()[1]
    print(f"sandbox listening on {config.host}:{bound_port}", flush=True)

    server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
    server.run(sockets=[sock])
