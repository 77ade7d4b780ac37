"""HTTP JSON API for the simulation lab.

Scenarios are stored immutably; runs execute asynchronously on a bounded
single-flight worker so CPU-bound experiments cannot pile up (full queue
answers 409). Results are immutable once a run reaches ``done``. With a
``ui_dir`` the built web client is served from the root path.
"""
from __future__ import annotations

import json
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from .core import SchemaError
from .estimators import ESTIMANDS, METHODS, EstimandSpec
from .simulation import (
    Scenario,
    default_method_specs,
    parse_scenario,
    result_to_json,
    run_experiment,
)

DEFAULT_QUEUE_CAPACITY = 16

__all__ = ["create_app"]


@dataclass
class _Run:
    run_id: str
    scenario_id: str
    state: str = "queued"  # queued | running | done | failed
    done: int = 0
    total: int = 0
    error: str | None = None
    created_at: float = 0.0
    result: dict | None = None

    def handle(self) -> dict:
        return {
            "run_id": self.run_id,
            "scenario_id": self.scenario_id,
            "state": self.state,
            "progress": {"completed": self.done, "total": self.total},
            "created_at": self.created_at,
            "error": self.error,
        }


class _Registry:
    """Scenario and run store with atomic state transitions."""

    def __init__(self, capacity: int):
        self.lock = threading.Lock()
        self.scenarios: dict[str, tuple[Scenario, dict]] = {}
        self.runs: dict[str, _Run] = {}
        self.capacity = capacity

    def active_count(self) -> int:
        return sum(1 for r in self.runs.values() if r.state in ("queued", "running"))


def _parse_selection(doc: dict, scenario: Scenario):
    method_names = doc.get("methods") or list(METHODS)
    bad = [m for m in method_names if m not in METHODS]
    if bad:
        raise SchemaError(f"unknown methods {bad}")
    estimand_names = doc.get("estimands") or list(ESTIMANDS)
    bad = [e for e in estimand_names if e not in ESTIMANDS]
    if bad:
        raise SchemaError(f"unknown estimands {bad}")
    overrides = doc.get("overrides") or {}
    allowed = {"n_replicates", "cohort_size", "master_seed", "noise_sd", "superpop_size"}
    unknown = set(overrides) - allowed
    if unknown:
        raise SchemaError(f"unknown overrides {sorted(unknown)}")
    if overrides:
        from dataclasses import replace

        scenario = replace(scenario, **overrides)
    methods = default_method_specs(methods=method_names)
    estimands = [EstimandSpec(kind=e) for e in estimand_names]
    return scenario, methods, estimands


def create_app(
    persist_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
    run_workers: int = 1,
) -> FastAPI:
    app = FastAPI(title="pmcausal", version=__version__)
    registry = _Registry(queue_capacity)
    executor = ThreadPoolExecutor(max_workers=1)
    persist = Path(persist_dir) if persist_dir else None
    if persist:
        persist.mkdir(parents=True, exist_ok=True)

    def persist_json(name: str, payload: dict):
        if persist is None:
            return
        with open(persist / name, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/scenarios", status_code=201)
    async def post_scenario(request: Request):
        try:
            doc = await request.json()
        except Exception:
            return JSONResponse({"detail": "body is not valid JSON"}, status_code=400)
        try:
            parse_scenario(doc)
        except SchemaError as err:
            return JSONResponse({"detail": str(err)}, status_code=400)
        scenario_id = uuid.uuid4().hex
        with registry.lock:
            registry.scenarios[scenario_id] = (parse_scenario(doc, name=scenario_id), doc)
        persist_json(f"scenario-{scenario_id}.json", doc)
        return {"scenario_id": scenario_id}

    @app.get("/scenarios/{scenario_id}")
    def get_scenario(scenario_id: str):
        with registry.lock:
            entry = registry.scenarios.get(scenario_id)
        if entry is None:
            return JSONResponse({"detail": "unknown scenario"}, status_code=404)
        return entry[1]

    def execute(run: _Run, scenario, methods, estimands):
        with registry.lock:
            run.state = "running"
        try:
            result = run_experiment(
                scenario,
                methods=methods,
                estimands=estimands,
                workers=run_workers,
                progress=lambda done, total: _update_progress(run, done, total),
            )
            payload = result_to_json(result)
            with registry.lock:
                run.result = payload
                run.done = run.total
                run.state = "done"
            persist_json(f"result-{run.run_id}.json", payload)
        except Exception as err:  # failed runs expose the reason, not a traceback
            with registry.lock:
                run.state = "failed"
                run.error = f"{type(err).__name__}: {err}"

    def _update_progress(run: _Run, done: int, total: int):
        with registry.lock:
            run.done = max(run.done, done)
            run.total = total

    @app.post("/runs", status_code=202)
    async def post_run(request: Request):
        try:
            doc = await request.json()
        except Exception:
            return JSONResponse({"detail": "body is not valid JSON"}, status_code=400)
        scenario_id = doc.get("scenario_id")
        with registry.lock:
            entry = registry.scenarios.get(scenario_id)
        if entry is None:
            return JSONResponse({"detail": "unknown scenario"}, status_code=404)
        try:
            scenario, methods, estimands = _parse_selection(doc, entry[0])
        except SchemaError as err:
            return JSONResponse({"detail": str(err)}, status_code=400)
        with registry.lock:
            if registry.active_count() >= registry.capacity:
                return JSONResponse({"detail": "run queue full"}, status_code=409)
            run = _Run(
                run_id=uuid.uuid4().hex,
                scenario_id=scenario_id,
                total=scenario.n_replicates,
                created_at=time.time(),
            )
            registry.runs[run.run_id] = run
        executor.submit(execute, run, scenario, methods, estimands)
        return run.handle()

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        with registry.lock:
            run = registry.runs.get(run_id)
            return (
                JSONResponse({"detail": "unknown run"}, status_code=404)
                if run is None
                else run.handle()
            )

    @app.get("/runs/{run_id}/result")
    def get_result(run_id: str):
        with registry.lock:
            run = registry.runs.get(run_id)
            if run is None:
                return JSONResponse({"detail": "unknown run"}, status_code=404)
            if run.state != "done":
                return JSONResponse(
                    {"detail": f"run is {run.state}", "state": run.state, "error": run.error},
                    status_code=409,
                )
            return run.result

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
