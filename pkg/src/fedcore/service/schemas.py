"""Request and response bodies of the HTTP service."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field

from fedcore.cluster import HdbscanConfig
from fedcore.selection import CentroidUpload, SelectionNotice


class JobRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict[str, Any]
    base_dir: Optional[str] = Field(None, description="directory that relative config paths resolve against")
    seed: Optional[int] = None
    out: Optional[str] = None


class JobResponse(BaseModel):
    command: str
    output_dir: str
    files: list[str]
    summary: dict[str, Any]


class InterSelectRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    uploads: list[CentroidUpload]
    inter: HdbscanConfig = HdbscanConfig(min_cluster_size=2)


class InterSelectResponse(BaseModel):
    notices: list[SelectionNotice]
    selected: list[tuple[int, int]]
    second_level_clusters: int
    second_level_noise: int


class ErrorBody(BaseModel):
    error: str
    message: str
    details: Optional[list[dict[str, Any]]] = None
