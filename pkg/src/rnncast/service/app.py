"""FastAPI application exposing generators, metrics, search, and eval."""

import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..evalsearch import (
    best_test_predictions,
    final_eval,
    nrmse,
    run_search,
    search_report,
)
from ..experiment import ConfigError, _parse_fixed, _parse_space
from ..numerics import RngStream
from ..presets import (
    FIXED_CONFIGS,
    SEARCH_EPOCHS,
    FINAL_EPOCHS,
    SEARCH_SPACES,
    TASK_HORIZONS,
    make_dataset,
)
from ..timeseries import gen_mackey_glass, gen_mso, gen_narma
from . import schemas as sc


def _space_for(req: "sc.SearchRequest"):
    if req.space is None:
        return SEARCH_SPACES[req.architecture]
    try:
        return _parse_space(req.architecture, req.space)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def _fixed_for(req: "sc.EvalRequest") -> dict:
    raw = req.fixed
    if raw is None:
        raw = f"{req.architecture}-{req.task}"
    try:
        return _parse_fixed(req.architecture, raw)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


class _Jobs:
    """Tiny in-process registry for background search jobs."""

    def __init__(self):
        self._lock = threading.Lock()
        self._jobs: dict[str, dict] = {}

    def create(self) -> str:
        job_id = uuid.uuid4().hex
        with self._lock:
            self._jobs[job_id] = {"status": "queued", "result": None,
                                  "error": None}
        return job_id

    def update(self, job_id: str, **fields):
        with self._lock:
            self._jobs[job_id].update(fields)

    def get(self, job_id: str) -> dict:
        with self._lock:
            job = self._jobs.get(job_id)
            return None if job is None else dict(job)


def create_app() -> FastAPI:
    app = FastAPI(
        title="rnncast",
        version=__version__,
        description="Recurrent forecasting workbench: benchmark series "
                    "generators, NRMSE metrics, random hyperparameter "
                    "search, and restart-protocol evaluation.")
    jobs = _Jobs()

    @app.get("/health", response_model=sc.HealthResponse)
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/presets", response_model=sc.PresetsResponse)
    def presets():
        return {
            "architectures": sorted(SEARCH_SPACES),
            "tasks": sorted(TASK_HORIZONS),
            "fixed_configs": FIXED_CONFIGS,
            "search_spaces": {
                arch: {k: list(v) for k, v in space.params.items()}
                for arch, space in SEARCH_SPACES.items()},
        }

    @app.post("/series/generate", response_model=sc.GenerateResponse,
              response_model_exclude_none=True)
    def generate(req: sc.GenerateRequest):
        drive = None
        if req.task == "mg":
            values = gen_mackey_glass(req.n)
        elif req.task == "mso":
            values = gen_mso(req.n)
        else:
            x, values = gen_narma(req.n, 10, RngStream(req.seed).child(0))
            drive = x.tolist()
        return {"task": req.task, "n": req.n, "seed": req.seed,
                "values": values.tolist(), "input": drive}

    @app.post("/metrics/nrmse", response_model=sc.NrmseResponse)
    def metrics(req: sc.NrmseRequest):
        y = np.asarray(req.predictions, dtype=float)
        ystar = np.asarray(req.targets, dtype=float)
        try:
            score = nrmse(y, ystar)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"nrmse": score, "psi": 1.0 - score}

    def _run_search(req: sc.SearchRequest) -> dict:
        space = _space_for(req)
        epochs = SEARCH_EPOCHS[req.architecture] if req.epochs is None \
            else req.epochs
        dataset = make_dataset(req.task, n=req.n, seed=req.master_seed,
                               tf=req.horizon)
        trials = run_search(space, dataset, req.budget, req.workers,
                            req.master_seed, epochs)
        return search_report(trials, space, req.master_seed, req.budget,
                             epochs)

    @app.post("/search", response_model=sc.SearchResponse)
    def search(req: sc.SearchRequest):
        return _run_search(req)

    @app.post("/jobs/search", response_model=sc.JobCreated, status_code=202)
    def submit_search(req: sc.SearchRequest):
        _space_for(req)  # validate before queueing
        job_id = jobs.create()

        def work():
            jobs.update(job_id, status="running")
            try:
                jobs.update(job_id, status="done", result=_run_search(req))
            except Exception as exc:  # noqa: BLE001 - reported via the job
                jobs.update(job_id, status="failed", error=str(exc))

        threading.Thread(target=work, daemon=True).start()
        return {"job_id": job_id, "status": "queued"}

    @app.get("/jobs/{job_id}", response_model=sc.JobStatus,
             response_model_exclude_none=True)
    def job_status(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail="unknown job")
        return {"job_id": job_id, **job}

    @app.post("/eval", response_model=sc.EvalResponse,
              response_model_exclude_none=True)
    def evaluate(req: sc.EvalRequest):
        fixed = _fixed_for(req)
        epochs = FINAL_EPOCHS[req.architecture] if req.epochs is None \
            else req.epochs
        dataset = make_dataset(req.task, n=req.n, seed=req.master_seed,
                               tf=req.horizon)
        try:
            if req.include_predictions:
                report, preds, truth = best_test_predictions(
                    fixed, dataset, req.restarts, req.master_seed, epochs)
                report = dict(report, predictions=preds.ravel().tolist(),
                              truth=truth.ravel().tolist())
            else:
                report = final_eval(fixed, dataset, req.restarts,
                                    req.master_seed, epochs)
        except RuntimeError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return report

    return app
