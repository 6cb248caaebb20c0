"""Pydantic request/response models for the HTTP service."""

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field

Task = Literal["mg", "narma", "mso"]
Architecture = Literal["ernn", "lstm", "gru", "narx", "esn"]


class HealthResponse(BaseModel):
    status: Literal["ok"]
    version: str


class PresetsResponse(BaseModel):
    architectures: list[str]
    tasks: list[str]
    fixed_configs: dict[str, dict]
    search_spaces: dict[str, dict[str, list]]


class GenerateRequest(BaseModel):
    task: Task
    n: int = Field(default=15000, ge=1, le=200_000)
    seed: int = Field(default=0, ge=0)


class GenerateResponse(BaseModel):
    task: Task
    n: int
    seed: int
    values: list[float]
    input: Optional[list[float]] = None  # NARMA driving noise


class NrmseRequest(BaseModel):
    predictions: list[list[float]]
    targets: list[list[float]]


class NrmseResponse(BaseModel):
    nrmse: float
    psi: float


class SearchRequest(BaseModel):
    task: Task
    architecture: Architecture
    n: int = Field(default=2000, ge=100, le=200_000)
    horizon: Optional[int] = Field(default=None, ge=1)
    budget: int = Field(default=10, ge=1, le=5000)
    workers: int = Field(default=1, ge=1, le=64)
    master_seed: int = Field(default=0, ge=0)
    epochs: Optional[int] = Field(default=None, ge=0)
    space: Optional[dict[str, list]] = None  # defaults to the named space


class TrialModel(BaseModel):
    index: int
    config: dict
    valid_nrmse: float
    status: str
    seconds: float


class SearchResponse(BaseModel):
    architecture: Architecture
    master_seed: int
    budget: int
    epochs: int
    trials: list[TrialModel]
    best_config: Optional[dict]
    best_valid_nrmse: Optional[float]


class EvalRequest(BaseModel):
    task: Task
    architecture: Architecture
    fixed: Optional[Union[str, dict]] = None  # preset name or inline config
    n: int = Field(default=2000, ge=100, le=200_000)
    horizon: Optional[int] = Field(default=None, ge=1)
    restarts: int = Field(default=3, ge=1, le=100)
    master_seed: int = Field(default=0, ge=0)
    epochs: Optional[int] = Field(default=None, ge=0)
    include_predictions: bool = False


class RestartEntry(BaseModel):
    restart: int
    test_nrmse: float
    status: str
    seconds: float


class EvalResponse(BaseModel):
    config: dict
    restarts: int
    master_seed: int
    epochs: int
    test_nrmse_best: float
    psi_best: float
    test_nrmse_mean: float
    test_nrmse_std: float
    diverged: int
    per_restart: list[RestartEntry]
    predictions: Optional[list[float]] = None
    truth: Optional[list[float]] = None


class JobCreated(BaseModel):
    job_id: str
    status: Literal["queued", "running"]


class JobStatus(BaseModel):
    job_id: str
    status: Literal["queued", "running", "done", "failed"]
    result: Optional[SearchResponse] = None
    error: Optional[str] = None
