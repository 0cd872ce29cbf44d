"""HTTP service over the run store and pipeline.

JSON API consumed by automation and the review client: create runs,
inspect them, edit the checkpoint artifact of a paused run, and approve to
resume. Generation happens in background threads; clients poll run status.
Errors share one shape: {"status": ..., "code": ..., "message": ...}.

Auth is a single static bearer token read from LIFEGEN_API_TOKEN; when the
variable is unset the API is open (desk-scale default).
"""

from __future__ import annotations

import os
import threading
from pathlib import Path
from typing import Mapping

from fastapi import Depends, FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from lifegen.gateway import Backend
from lifegen.pipeline import (
    Clock,
    NotAwaitingReviewError,
    Pipeline,
    RunNotFoundError,
    RunState,
    RunStore,
    extract_fenced,
    utc_now,
    validate_scxml_text,
)
from lifegen.records import Stage

TOKEN_ENV = "LIFEGEN_API_TOKEN"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class CreateRunRequest(BaseModel):
    intent: str
    backend: str
    mode: str = "multi_step"
    gates: list[str] = Field(default_factory=list)
    target_stage: str | None = None
    reference_id: str | None = None


class PatchArtifactRequest(BaseModel):
    stage: str
    text: str


def run_to_json(state: RunState) -> dict:
    return {
        **state.to_json(),
        "artifacts": {stage.key: text for stage, text in sorted(state.artifacts.items())},
    }


def run_summary(state: RunState) -> dict:
    return {
        "run_id": state.run_id,
        "status": state.status,
        "mode": state.mode,
        "backend": state.backend,
        "checkpoint_stage": state.checkpoint_stage.key if state.checkpoint_stage is not None else None,
        "intent_excerpt": state.input_intent[:120],
        "updated_at": state.updated_at,
    }


def create_app(
    store: RunStore,
    backends: Mapping[str, Backend],
    clock: Clock = utc_now,
    token: str | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    """Build the service; backends are looked up by name per request."""
    app = FastAPI(title="lifegen service", openapi_url="/spec")
    pipeline = Pipeline(store, clock=clock)
    expected_token = token if token is not None else os.environ.get(TOKEN_ENV)

    def check_auth(request: Request) -> None:
        if not expected_token:
            return
        header = request.headers.get("Authorization", "")
        if header != f"Bearer {expected_token}":
            raise ApiError(401, "unauthorized", "missing or invalid bearer token")

    guarded = [Depends(check_auth)]

    @app.exception_handler(ApiError)
    async def handle_api_error(_request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={"status": exc.status, "code": exc.code, "message": exc.message},
        )

    def backend_or_400(name: str) -> Backend:
        backend = backends.get(name)
        if backend is None:
            raise ApiError(400, "unknown_backend", f"no backend named {name!r}")
        return backend

    def load_or_404(run_id: str) -> RunState:
        try:
            return store.load(run_id)
        except RunNotFoundError:
            raise ApiError(404, "run_not_found", f"no run {run_id!r}") from None

    def parse_stage(value: str, code: str) -> Stage:
        try:
            return Stage.from_key(value)
        except ValueError:
            raise ApiError(400, code, f"unknown stage {value!r}") from None

    @app.post("/runs", status_code=201, dependencies=guarded)
    def create_run(body: CreateRunRequest) -> dict:
        backend = backend_or_400(body.backend)
        if body.mode not in ("multi_step", "one_step", "gated"):
            raise ApiError(400, "invalid_mode", f"unknown mode {body.mode!r}")
        gates = {parse_stage(g, "invalid_gate") for g in body.gates}
        target = parse_stage(body.target_stage, "invalid_stage") if body.target_stage else None
        try:
            state = pipeline.create_run(
                body.intent,
                body.mode,
                backend.name,
                gates=frozenset(gates),
                target_stage=target,
                reference_id=body.reference_id,
            )
        except ValueError as exc:
            raise ApiError(400, "invalid_request", str(exc)) from None
        threading.Thread(target=pipeline.execute, args=(state, backend), daemon=True).start()
        return {"run_id": state.run_id, "status": state.status}

    @app.get("/runs", dependencies=guarded)
    def list_runs(status: str | None = None) -> list[dict]:
        return [run_summary(s) for s in store.list_runs(status=status)]

    @app.get("/runs/{run_id}", dependencies=guarded)
    def get_run(run_id: str) -> dict:
        return run_to_json(load_or_404(run_id))

    @app.patch("/runs/{run_id}/artifact", dependencies=guarded)
    def patch_artifact(run_id: str, body: PatchArtifactRequest) -> dict:
        state = load_or_404(run_id)
        if state.status != "awaiting_review":
            raise ApiError(409, "not_awaiting_review", f"run is {state.status}")
        stage = parse_stage(body.stage, "invalid_stage")
        if stage is not state.checkpoint_stage:
            raise ApiError(
                400,
                "stage_mismatch",
                f"checkpoint is {state.checkpoint_stage.key}, not {stage.key}",
            )
        pipeline.edit_checkpoint(state, body.text)
        return run_to_json(state)

    @app.post("/runs/{run_id}/approve", dependencies=guarded)
    def approve_run(run_id: str) -> dict:
        state = load_or_404(run_id)
        backend = backend_or_400(state.backend)
        try:
            claimed = pipeline.begin_resume(run_id)
        except NotAwaitingReviewError as exc:
            raise ApiError(409, "not_awaiting_review", str(exc)) from None
        threading.Thread(target=pipeline.finish_resume, args=(claimed, backend), daemon=True).start()
        return run_to_json(claimed)

    @app.get("/runs/{run_id}/validation", dependencies=guarded)
    def validate_artifact(run_id: str, stage: str = "scxml") -> dict:
        state = load_or_404(run_id)
        stage_enum = parse_stage(stage, "invalid_stage")
        if stage_enum is Stage.INTENT:
            text = state.input_intent
        elif stage_enum in state.artifacts:
            text = state.artifacts[stage_enum]
        else:
            raise ApiError(404, "artifact_not_found", f"run has no {stage_enum.key} artifact")
        if stage_enum is not Stage.SCXML:
            return {"stage": stage_enum.key, "findings": []}
        return {"stage": stage_enum.key, "findings": validate_scxml_text(extract_fenced(text))}

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
