"""HTTP host for interactive warp-matching sessions.

Wire protocol (versioned, JSON over the /api/v1 prefix):

- POST /api/v1/sessions            create a session, returns the first batch
- GET  /api/v1/sessions/{id}/batch current pending batch
- POST /api/v1/sessions/{id}/choices
                                   submit winners for a batch id; returns the
                                   next batch, or the final result on the
                                   last round
- GET  /api/v1/sessions/{id}/status
                                   progress: completed rounds, remaining
                                   budget, incumbent preview, trajectory
- GET  /api/v1/sessions/{id}/final final result of a finished session
- GET  /previews/{name}            content-addressed 8-bit grayscale images
- GET  /api/v1/healthz

Every response is built from explicit response models, so the hidden
warp parameters and true objective values cannot leak: they are simply
not part of any schema.  Previews are rendered server-side, stored by
content hash, and referenced by path.

Each session is guarded by its own lock; submissions carry the pending
batch id as an idempotency token, so a duplicated click (or a lost
response followed by a retry) is answered with a conflict instead of
consuming a second round.  After every transition the session is
written to disk (write-ahead, atomic rename); on startup all persisted
sessions are restored, which makes the server crash-tolerant.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .errors import ContractError, NumericalError, ProtocolError
from .likelihoods import LikelihoodModel, MAX_SUBSET_CHOICES
from .objectives import (
    HiddenObjective,
    make_custom_warp_task,
    make_objective,
    render_candidate,
)
from .session import (
    SessionConfig,
    SessionState,
    session_best,
    session_from_dict,
    session_init,
    session_next_batch,
    session_record_choice,
    session_to_dict,
)
from .warp import Field2D

PROTOCOL_VERSION = 1
MAX_BUDGET = 200
MAX_CHOICES = MAX_SUBSET_CHOICES

_SERVICE_TASKS = ("warp-affine6", "warp-affine8", "warp-full24")
_PREVIEW_NAME = re.compile(r"^[0-9a-f]{32}\.pgm$")


class CreateSessionRequest(BaseModel):
    task: str = "warp-affine8"
    task_seed: int = 0
    field_size: int = Field(default=48, ge=16, le=256)
    budget: int = Field(default=50, ge=0, le=MAX_BUDGET)
    choices_per_round: int = Field(default=4, ge=2, le=MAX_CHOICES)
    init_batches: int = Field(default=10, ge=1, le=50)
    seed: int = 0
    likelihood: str = "multinomial-logit"
    source_pgm_base64: str | None = None
    hidden_theta: list[float] | None = None
    components: list[int] | None = None


class SubmitChoiceRequest(BaseModel):
    batch_id: str
    winners: list[int]


class BatchPayload(BaseModel):
    batch_id: str
    round: int
    previews: list[str]


class TrajectoryEntry(BaseModel):
    round: int
    incumbent_value: float
    incumbent_preview: str | None = None


class FinalPayload(BaseModel):
    theta: list[float]
    predicted_value: float
    render: str
    target_preview: str
    rounds_completed: int


class SessionResponse(BaseModel):
    protocol_version: int
    session_id: str
    kind: str
    state: str
    round: int
    total_rounds: int
    remaining_rounds: int
    remaining_budget: int
    choices_per_round: int
    target_preview: str
    batch: BatchPayload | None = None
    final: FinalPayload | None = None


class StatusResponse(BaseModel):
    protocol_version: int
    session_id: str
    state: str
    round: int
    total_rounds: int
    remaining_rounds: int
    remaining_budget: int
    choices_per_round: int
    target_preview: str
    batch: BatchPayload | None = None
    incumbent_preview: str | None = None
    incumbent_value: float | None = None
    trajectory: list[TrajectoryEntry] = []
    final: FinalPayload | None = None


class ServerSession:
    def __init__(self, session_id: str, state: SessionState, created_at: str,
                 trajectory_previews: list | None = None):
        self.session_id = session_id
        self.state = state
        self.created_at = created_at
        self.trajectory_previews: list = trajectory_previews or []
        self.lock = threading.Lock()

    @property
    def finished(self) -> bool:
        return self.state.completed_rounds >= self.state.config.total_rounds()

    @property
    def status_name(self) -> str:
        if self.finished:
            return "finished"
        return "awaiting-choice" if self.state.pending is not None else "proposing"

    def remaining_budget(self) -> int:
        cfg = self.state.config
        if cfg.init_counts_against_budget:
            return cfg.budget - self.state.completed_rounds
        consumed = max(0, self.state.completed_rounds - cfg.init_batches)
        return cfg.budget - consumed


class ServiceStore:
    """Session registry plus the on-disk layout under data_dir."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.sessions_dir = self.data_dir / "sessions"
        self.previews_dir = self.data_dir / "previews"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.previews_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict = {}
        self.registry_lock = threading.Lock()

    def restore_all(self) -> None:
        for path in sorted(self.sessions_dir.glob("*.json")):
            payload = json.loads(path.read_text(encoding="utf-8"))
            state = session_from_dict(payload["session"])
            record = ServerSession(
                session_id=payload["session_id"],
                state=state,
                created_at=payload["created_at"],
                trajectory_previews=payload.get("trajectory_previews", []),
            )
            self.sessions[record.session_id] = record

    def persist(self, record: ServerSession) -> None:
        payload = {
            "session_id": record.session_id,
            "created_at": record.created_at,
            "trajectory_previews": record.trajectory_previews,
            "session": session_to_dict(record.state),
        }
        path = self.sessions_dir / f"{record.session_id}.json"
        temp = path.with_suffix(".json.tmp")
        with open(temp, "w", encoding="utf-8") as handle:
            json.dump(payload, handle)
            handle.write("\n")
        os.replace(temp, path)

    def store_preview(self, field: Field2D) -> str:
        data = field.to_pgm()
        name = hashlib.sha256(data).hexdigest()[:32] + ".pgm"
        path = self.previews_dir / name
        if not path.exists():
            temp = path.with_suffix(".pgm.tmp")
            temp.write_bytes(data)
            os.replace(temp, path)
        return f"/previews/{name}"

    def get(self, session_id: str) -> ServerSession | None:
        return self.sessions.get(session_id)


def _build_task(request: CreateSessionRequest) -> HiddenObjective:
    if request.source_pgm_base64 is not None:
        if request.hidden_theta is None:
            raise ContractError("custom tasks need hidden_theta alongside the source image")
        source = Field2D.from_pgm(base64.b64decode(request.source_pgm_base64))
        return make_custom_warp_task(source, request.hidden_theta, components=request.components)
    if request.task not in _SERVICE_TASKS:
        raise ContractError(
            f"unknown task {request.task!r}; expected one of {_SERVICE_TASKS} "
            "or an uploaded source image"
        )
    return make_objective(request.task, task_seed=request.task_seed, size=request.field_size)


def _batch_payload(store: ServiceStore, record: ServerSession) -> BatchPayload | None:
    pending = record.state.pending
    if pending is None:
        return None
    previews = [
        store.store_preview(render_candidate(record.state.task, theta))
        for theta in record.state.archive[pending.indices]
    ]
    return BatchPayload(batch_id=pending.batch_id, round=pending.round_index, previews=previews)


def _target_preview(store: ServiceStore, record: ServerSession) -> str:
    return store.store_preview(record.state.task.payload["target"])


def _final_payload(store: ServiceStore, record: ServerSession) -> FinalPayload:
    best = session_best(record.state)
    return FinalPayload(
        theta=[float(v) for v in best.theta],
        predicted_value=best.value,
        render=store.store_preview(best.render),
        target_preview=_target_preview(store, record),
        rounds_completed=record.state.completed_rounds,
    )


def _session_response(store: ServiceStore, record: ServerSession, kind: str) -> SessionResponse:
    state = record.state
    pending_round = state.pending.round_index if state.pending is not None else state.completed_rounds
    return SessionResponse(
        protocol_version=PROTOCOL_VERSION,
        session_id=record.session_id,
        kind=kind,
        state=record.status_name,
        round=pending_round,
        total_rounds=state.config.total_rounds(),
        remaining_rounds=state.remaining_rounds(),
        remaining_budget=record.remaining_budget(),
        choices_per_round=state.config.choices_per_round,
        target_preview=_target_preview(store, record),
        batch=_batch_payload(store, record),
        final=_final_payload(store, record) if record.finished else None,
    )


def create_app(data_dir, frontend_dir=None) -> FastAPI:
    store = ServiceStore(Path(data_dir))
    store.restore_all()
    app = FastAPI(title="prefbo session service", version="1.0")
    app.state.store = store

    @app.exception_handler(ContractError)
    async def contract_error_handler(request: Request, error: ContractError):
        return JSONResponse(status_code=400, content={"detail": str(error)})

    @app.exception_handler(ProtocolError)
    async def protocol_error_handler(request: Request, error: ProtocolError):
        return JSONResponse(status_code=409, content={"detail": str(error)})

    @app.exception_handler(NumericalError)
    async def numerical_error_handler(request: Request, error: NumericalError):
        return JSONResponse(status_code=500, content={"detail": str(error)})

    @app.get("/api/v1/healthz")
    def healthz():
        return {"status": "ok", "protocol_version": PROTOCOL_VERSION}

    @app.post("/api/v1/sessions", response_model=SessionResponse, status_code=201)
    def create_session(request: CreateSessionRequest):
        task = _build_task(request)
        likelihood = LikelihoodModel(kind=request.likelihood)
        config = SessionConfig(
            bounds=task.bounds,
            budget=request.budget,
            choices_per_round=request.choices_per_round,
            init_batches=request.init_batches,
            likelihood=likelihood,
            seed=request.seed,
        )
        state = session_init(config)
        state.task = task
        record = ServerSession(
            session_id=uuid.uuid4().hex,
            state=state,
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        with store.registry_lock:
            store.sessions[record.session_id] = record
        store.persist(record)
        return _session_response(store, record, kind="round")

    def _lookup(session_id: str) -> ServerSession:
        record = store.get(session_id)
        if record is None:
            raise _NotFound(session_id)
        return record

    class _NotFound(Exception):
        def __init__(self, session_id: str):
            self.session_id = session_id

    @app.exception_handler(_NotFound)
    async def not_found_handler(request: Request, error: _NotFound):
        return JSONResponse(
            status_code=404, content={"detail": f"unknown session {error.session_id}"}
        )

    @app.get("/api/v1/sessions/{session_id}/batch", response_model=SessionResponse)
    def get_batch(session_id: str):
        record = _lookup(session_id)
        with record.lock:
            kind = "final" if record.finished else "round"
            return _session_response(store, record, kind=kind)

    @app.post("/api/v1/sessions/{session_id}/choices", response_model=SessionResponse)
    def submit_choice(session_id: str, request: SubmitChoiceRequest):
        record = _lookup(session_id)
        with record.lock:
            state = record.state
            if record.finished or state.pending is None:
                raise ProtocolError(
                    "the session is not awaiting a choice; fetch status for the current state"
                )
            if request.batch_id != state.pending.batch_id:
                raise ProtocolError(
                    f"batch {request.batch_id} is not pending "
                    f"(current batch is {state.pending.batch_id})"
                )
            session_record_choice(state, request.winners)
            best = session_best(state)
            record.trajectory_previews.append(store.store_preview(best.render))
            if state.completed_rounds < state.config.total_rounds():
                session_next_batch(state)
                store.persist(record)
                return _session_response(store, record, kind="round")
            store.persist(record)
            return _session_response(store, record, kind="final")

    @app.get("/api/v1/sessions/{session_id}/status", response_model=StatusResponse)
    def get_status(session_id: str):
        record = _lookup(session_id)
        with record.lock:
            state = record.state
            incumbent_preview = None
            incumbent_value = None
            if state.posterior is not None:
                best = session_best(state)
                incumbent_preview = store.store_preview(best.render)
                incumbent_value = best.value
            trajectory = [
                TrajectoryEntry(
                    round=row.round_index,
                    incumbent_value=row.incumbent_value,
                    incumbent_preview=(
                        record.trajectory_previews[i]
                        if i < len(record.trajectory_previews)
                        else None
                    ),
                )
                for i, row in enumerate(state.trajectory)
            ]
            return StatusResponse(
                protocol_version=PROTOCOL_VERSION,
                session_id=record.session_id,
                state=record.status_name,
                round=state.completed_rounds,
                total_rounds=state.config.total_rounds(),
                remaining_rounds=state.remaining_rounds(),
                remaining_budget=record.remaining_budget(),
                choices_per_round=state.config.choices_per_round,
                target_preview=_target_preview(store, record),
                batch=_batch_payload(store, record),
                incumbent_preview=incumbent_preview,
                incumbent_value=incumbent_value,
                trajectory=trajectory,
                final=_final_payload(store, record) if record.finished else None,
            )

    @app.get("/api/v1/sessions/{session_id}/final", response_model=SessionResponse)
    def get_final(session_id: str):
        record = _lookup(session_id)
        with record.lock:
            if not record.finished:
                raise ProtocolError("the session has not finished yet")
            return _session_response(store, record, kind="final")

    @app.get("/previews/{name}")
    def get_preview(name: str):
        if not _PREVIEW_NAME.match(name):
            return JSONResponse(status_code=404, content={"detail": "unknown preview"})
        path = store.previews_dir / name
        if not path.exists():
            return JSONResponse(status_code=404, content={"detail": "unknown preview"})
        return Response(content=path.read_bytes(), media_type="image/x-portable-graymap")

    if frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
