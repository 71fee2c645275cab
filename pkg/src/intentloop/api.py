"""HTTP surface over TaskService.

Thin by design: every handler validates its body, delegates to the service,
and serializes the result. Domain errors map to status codes by their stable
``code`` string and come back as ``{"error": {"code", "message"}}``, which is
the contract the clinician console programs against.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .errors import IntentLoopError
from .service import TaskService, TuneParams
from .stats import BootstrapConfig

_HTTP_404 = {"unknown_task", "unknown_version"}
_HTTP_409 = {"gate_error", "already_tuning", "test_already_consumed",
             "no_completed_run", "spec_not_confirmed", "patch_conflict"}


def _status_for(exc: IntentLoopError) -> int:
    if exc.code in _HTTP_404:
        return 404
    if exc.code in _HTTP_409:
        return 409
    return 422


class CreateTaskBody(BaseModel):
    request: str = Field(min_length=1)


class ConfirmBody(BaseModel):
    spec: dict | None = None


class InitBody(BaseModel):
    seed: int = 0
    mode: str = "mock"
    n_train: int = 600
    n_val: int = 400
    n_test: int = 400
    sim_overrides: dict | None = None


class TuneBody(BaseModel):
    total_runs: int = Field(ge=1)
    run_budget_seconds: float = 60.0
    grace_seconds: float = 10.0
    mode: str = "batch"
    wait: bool = False


class DecisionBody(BaseModel):
    entry_id: str
    choice: str
    by: str = "clinician"


class TestBody(BaseModel):
    budget_seconds: float = 120.0
    bootstrap_replicates: int | None = None
    bootstrap_seed: int = 0


def make_app(service: TaskService, static_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="intentloop", docs_url="/docs")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(IntentLoopError)
    async def _domain_error(_req: Request, exc: IntentLoopError):
        return JSONResponse(status_code=_status_for(exc),
                            content={"error": {"code": exc.code,
                                               "message": str(exc)}})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/tasks", status_code=201)
    def create_task(body: CreateTaskBody):
        return service.create_task(body.request)

    @app.get("/tasks")
    def list_tasks():
        return {"tasks": service.list_tasks()}

    @app.get("/tasks/{task_id}")
    def get_task(task_id: str):
        return service.describe(task_id)

    @app.post("/tasks/{task_id}/confirm")
    def confirm(task_id: str, body: ConfirmBody):
        return service.confirm_spec(task_id, body.spec)

    @app.post("/tasks/{task_id}/init")
    def init(task_id: str, body: InitBody | None = None):
        body = body or InitBody()
        return service.initialize(task_id, seed=body.seed, mode=body.mode,
                                  sim_overrides=body.sim_overrides,
                                  n_train=body.n_train, n_val=body.n_val,
                                  n_test=body.n_test)

    @app.post("/tasks/{task_id}/tune")
    def tune(task_id: str, body: TuneBody):
        params = TuneParams(total_runs=body.total_runs,
                            run_budget_seconds=body.run_budget_seconds,
                            grace_seconds=body.grace_seconds, mode=body.mode)
        return service.start_tuning(task_id, params, wait=body.wait)

    @app.get("/tasks/{task_id}/ledger")
    def ledger(task_id: str, after: int = Query(0, ge=0),
               wait: float = Query(0.0, ge=0.0, le=30.0)):
        return service.ledger_entries(task_id, after=after, wait_seconds=wait)

    @app.get("/tasks/{task_id}/pending")
    def pending(task_id: str):
        return {"pending": service.pending_entry(task_id)}

    @app.post("/tasks/{task_id}/decisions")
    def decide(task_id: str, body: DecisionBody):
        return service.submit_decision(task_id, body.entry_id, body.choice,
                                       by=body.by)

    @app.post("/tasks/{task_id}/test")
    def run_test(task_id: str, body: TestBody | None = None):
        body = body or TestBody()
        bootstrap = None
        if body.bootstrap_replicates is not None:
            bootstrap = BootstrapConfig(replicates=body.bootstrap_replicates,
                                        seed=body.bootstrap_seed)
        return service.run_test(task_id, budget_seconds=body.budget_seconds,
                                bootstrap=bootstrap)

    @app.get("/tasks/{task_id}/report")
    def report(task_id: str):
        return service.report(task_id)

    @app.get("/tasks/{task_id}/confound-report")
    def confound_report_route(task_id: str):
        # Convenience view: the shortcut-reliance section of the test report.
        full = service.report(task_id)
        return {"confound": full.get("confound")}

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/console", StaticFiles(directory=str(static_dir),
                                          html=True), name="console")

    return app
