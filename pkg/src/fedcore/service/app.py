"""HTTP service wrapping the simulator jobs and the server-side selection step."""

from __future__ import annotations

import logging
from pathlib import Path

import pydantic
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from fedcore import __version__
from fedcore.config import parse_config
from fedcore.errors import FedcoreError
from fedcore.selection import server_select
from fedcore.service import jobs
from fedcore.service.schemas import (
    ErrorBody,
    InterSelectRequest,
    InterSelectResponse,
    JobRequest,
    JobResponse,
)

log = logging.getLogger(__name__)

app = FastAPI(title="fedcore", version=__version__)


def _error(status: int, code: str, message: str, details=None) -> JSONResponse:
    body = ErrorBody(error=code, message=message, details=details)
    return JSONResponse(status_code=status, content=body.model_dump(exclude_none=True))


def _clean(errors) -> list:
    # pydantic puts exception objects into ctx; keep the JSON-safe fields
    return [{"loc": list(e.get("loc", ())), "msg": e.get("msg", ""), "type": e.get("type", "")} for e in errors]


@app.exception_handler(FedcoreError)
async def _fedcore_error(_: Request, exc: FedcoreError):
    return _error(422, exc.code, str(exc))


@app.exception_handler(pydantic.ValidationError)
async def _config_error(_: Request, exc: pydantic.ValidationError):
    return _error(422, "validation_error", "invalid configuration", _clean(exc.errors()))


@app.exception_handler(RequestValidationError)
async def _request_error(_: Request, exc: RequestValidationError):
    return _error(422, "validation_error", "invalid request body", _clean(exc.errors()))


@app.exception_handler(OSError)
async def _io_error(_: Request, exc: OSError):
    return _error(500, "io_error", str(exc))


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


def _config(req: JobRequest):
    base = Path(req.base_dir) if req.base_dir else None
    return parse_config(req.config, base).with_overrides(seed=req.seed, output_dir=req.out)


def _job(name: str, result: dict) -> JobResponse:
    return JobResponse(command=name, **result)


@app.post("/synth", response_model=JobResponse)
def synth(req: JobRequest) -> JobResponse:
    return _job("synth", jobs.cmd_synth(_config(req)))


@app.post("/partition", response_model=JobResponse)
def partition(req: JobRequest) -> JobResponse:
    return _job("partition", jobs.cmd_partition(_config(req)))


@app.post("/select", response_model=JobResponse)
def select(req: JobRequest) -> JobResponse:
    return _job("select", jobs.cmd_select(_config(req)))


@app.post("/run", response_model=JobResponse)
def run(req: JobRequest) -> JobResponse:
    return _job("run", jobs.cmd_run(_config(req)))


@app.post("/report", response_model=JobResponse)
def report(req: JobRequest) -> JobResponse:
    return _job("report", jobs.cmd_report(_config(req)))


@app.post("/rounds/inter-select", response_model=InterSelectResponse)
def inter_select(req: InterSelectRequest) -> InterSelectResponse:
    res = server_select(req.uploads, req.inter)
    return InterSelectResponse(notices=res.notices, selected=res.selected,
                               second_level_clusters=res.n_clusters, second_level_noise=res.n_noise)
