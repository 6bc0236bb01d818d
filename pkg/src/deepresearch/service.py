"""HTTP service: run lifecycle, human review, step feed, report access.

The review UI consumes only this API. Decisions are idempotent by
(run id, checklist version); posting one while the run is not awaiting
review is rejected with the current phase in the payload. The step feed
is resumable by index and always reflects the on-disk trace, never an
in-memory copy.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from pathlib import Path
from typing import Any

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .checklist import (
    Checklist,
    InvalidDecision,
    PlanIntent,
    ReviewDecision,
    apply_decision,
    review_document,
)
from .config import ConfigError, RunConfig
from .engine import PhaseError, ResearchRun, next_phase
from .evidence import EvidenceStore
from .mocks import FixtureEnvironment, Scenario, ScriptedPolicy
from .ports import CriticTimeout
from .providers import HttpEnvironment, HttpPolicy
from .records import assemble_steps, read_trace_prefix

STEP_BATCH_SCHEMA = "step-batch@1"
RUN_CREATED_SCHEMA = "run-created@1"
REVIEW_ACK_SCHEMA = "review-ack@1"
REPORT_VIEW_SCHEMA = "report-view@1"
ERROR_SCHEMA = "error@1"


class HumanCritic:
    """Blocks the engine until a reviewer posts a decision (or times out)."""

    def __init__(self, handle: "RunHandle", timeout_s: float) -> None:
        self.handle = handle
        self.timeout_s = timeout_s

    def review(self, checklist: Checklist, intents: list[PlanIntent], round_index: int):
        engine = self.handle.engine
        assert engine is not None
        with self.handle.lock:
            self.handle.pending_checklist = checklist
            self.handle.pending_intents = intents
            self.handle.pending_round = round_index
            self.handle.decision = None
            self.handle.decision_event.clear()
        engine._write_status("awaiting-review")
        deadline = time.monotonic() + self.timeout_s
        while time.monotonic() < deadline:
            if engine.abort_event.is_set():
                from .engine import RunAborted

                raise RunAborted("aborted while awaiting review")
            if self.handle.decision_event.wait(timeout=0.05):
                with self.handle.lock:
                    decision = self.handle.decision
                    self.handle.pending_checklist = None
                    self.handle.pending_intents = []
                    self.handle.decision = None
                    self.handle.decision_event.clear()
                if decision is not None:
                    return decision
        raise CriticTimeout(
            f"no review decision within {self.timeout_s}s for round {round_index}"
        )


class RunHandle:
    def __init__(self, run_id: str, run_dir: Path) -> None:
        self.run_id = run_id
        self.run_dir = run_dir
        self.engine: ResearchRun | None = None
        self.thread: threading.Thread | None = None
        self.status: dict[str, Any] = {}
        self.lock = threading.Lock()
        self.pending_checklist: Checklist | None = None
        self.pending_intents: list[PlanIntent] = []
        self.pending_round: int = 0
        self.decision: ReviewDecision | None = None
        self.decision_event = threading.Event()
        self.decided_versions: set[str] = set()

    def update_status(self, payload: dict[str, Any]) -> None:
        with self.lock:
            self.status = payload

    def phase(self) -> str:
        with self.lock:
            return self.status.get("phase", "checklisting")


class RunRegistry:
    def __init__(self, runs_dir: Path, default_config: RunConfig) -> None:
        self.runs_dir = runs_dir
        self.default_config = default_config
        self.handles: dict[str, RunHandle] = {}
        self.lock = threading.Lock()

    def _build_providers(self, config: RunConfig):
        if config.mock:
            scenario = Scenario.load(config.fixtures_path)
            return ScriptedPolicy(scenario), FixtureEnvironment(scenario), scenario
        return HttpPolicy(config.policy_endpoint), HttpEnvironment(config.search_endpoint), None

    def create(self, query: str, overrides: dict[str, Any], run_id: str | None) -> RunHandle:
        merged = {**self.default_config.to_dict(), **overrides}
        config = RunConfig.from_dict(merged)
        config.validate()
        policy, environment, scenario = self._build_providers(config)
        if not query:
            query = scenario.default_query if scenario else ""
        if not query:
            raise ConfigError("query required (fixtures carry no default_query)")
        run_id = run_id or f"run-{uuid.uuid4().hex[:12]}"
        handle = RunHandle(run_id, self.runs_dir / run_id)
        handle.status = {
            "schema": "run-status@1",
            "run_id": run_id,
            "query": query,
            "phase": "checklisting" if config.vcm_enabled else "researching",
            "step_index": -1,
            "stop_reason": None,
            "error": None,
        }
        critic = None
        if config.critic_mode == "human":
            critic = HumanCritic(handle, config.review_timeout_s)
        engine = ResearchRun(
            query,
            config,
            policy,
            environment,
            critic,
            self.runs_dir,
            run_id=run_id,
            fixtures_hash=scenario.manifest_hash() if scenario else "",
            status_callback=handle.update_status,
        )
        handle.engine = engine
        thread = threading.Thread(target=engine.execute, name=f"run-{run_id}", daemon=True)
        handle.thread = thread
        with self.lock:
            self.handles[run_id] = handle
        thread.start()
        return handle

    def get(self, run_id: str) -> RunHandle | None:
        with self.lock:
            return self.handles.get(run_id)

    def statuses(self) -> list[dict[str, Any]]:
        seen: dict[str, dict[str, Any]] = {}
        with self.lock:
            for run_id, handle in self.handles.items():
                if handle.status:
                    seen[run_id] = handle.status
        if self.runs_dir.exists():
            for status_path in sorted(self.runs_dir.glob("*/status.json")):
                run_id = status_path.parent.name
                if run_id not in seen:
                    try:
                        seen[run_id] = json.loads(status_path.read_text(encoding="utf-8"))
                    except json.JSONDecodeError:
                        continue
        return [seen[run_id] for run_id in sorted(seen)]

    def status_of(self, run_id: str) -> dict[str, Any] | None:
        handle = self.get(run_id)
        if handle and handle.status:
            return handle.status
        status_path = self.runs_dir / run_id / "status.json"
        if status_path.exists():
            return json.loads(status_path.read_text(encoding="utf-8"))
        return None


class CreateRunRequest(BaseModel):
    query: str = ""
    config: dict[str, Any] = Field(default_factory=dict)
    run_id: str | None = None


class VerdictModel(BaseModel):
    item_id: str
    verdict: str
    payload: dict[str, Any] = Field(default_factory=dict)


class ReviewRequest(BaseModel):
    schema_: str = Field(default="review-decision@1", alias="schema")
    checklist_version: str
    verdicts: list[VerdictModel]

    model_config = {"populate_by_name": True}


def _error(status_code: int, message: str, **extra: Any) -> HTTPException:
    return HTTPException(
        status_code=status_code,
        detail={"schema": ERROR_SCHEMA, "error": message, **extra},
    )


def create_app(
    runs_dir: str | Path = "runs",
    default_config: RunConfig | None = None,
    frontend_dist: str | Path | None = None,
) -> FastAPI:
    runs_dir = Path(runs_dir)
    runs_dir.mkdir(parents=True, exist_ok=True)
    registry = RunRegistry(runs_dir, default_config or RunConfig())
    app = FastAPI(title="deepresearch", version="0.1.0")
    app.state.registry = registry

    token = os.environ.get("DEEPRESEARCH_TOKEN", "")

    async def check_token(request: Request) -> None:
        if not token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise _error(401, "invalid or missing bearer token")

    dep = [Depends(check_token)]

    @app.post("/api/runs", status_code=201, dependencies=dep)
    def create_run(body: CreateRunRequest):
        try:
            handle = registry.create(body.query, body.config, body.run_id)
        except Exception as exc:
            raise _error(400, f"cannot create run: {exc}")
        return {"schema": RUN_CREATED_SCHEMA, "run_id": handle.run_id}

    @app.get("/api/runs", dependencies=dep)
    def list_runs():
        return {"schema": "run-list@1", "runs": registry.statuses()}

    def _status_or_404(run_id: str) -> dict[str, Any]:
        status = registry.status_of(run_id)
        if status is None:
            raise _error(404, f"unknown run id {run_id}")
        return status

    @app.get("/api/runs/{run_id}/status", dependencies=dep)
    def run_status(run_id: str):
        return _status_or_404(run_id)

    @app.get("/api/runs/{run_id}/checklist", dependencies=dep)
    def pending_checklist(run_id: str):
        status = _status_or_404(run_id)
        handle = registry.get(run_id)
        if handle is None or status.get("phase") != "awaiting-review":
            raise _error(
                409,
                "no checklist awaiting review",
                phase=status.get("phase"),
            )
        with handle.lock:
            checklist = handle.pending_checklist
            intents = handle.pending_intents
        if checklist is None:
            raise _error(409, "review not yet published", phase=status.get("phase"))
        return review_document(checklist, intents, run_id, "awaiting-review")

    @app.get("/api/runs/{run_id}/checklist/final", dependencies=dep)
    def final_checklist(run_id: str):
        _status_or_404(run_id)
        path = runs_dir / run_id / "checklist" / "version-final.json"
        if not path.exists():
            raise _error(404, "final checklist not available yet")
        return json.loads(path.read_text(encoding="utf-8"))

    @app.post("/api/runs/{run_id}/review", dependencies=dep)
    def post_review(run_id: str, body: ReviewRequest):
        status = _status_or_404(run_id)
        handle = registry.get(run_id)
        if handle is None:
            raise _error(409, "run is not active in this service", phase=status.get("phase"))
        decision = ReviewDecision.from_dict(body.model_dump(by_alias=True))
        with handle.lock:
            if decision.checklist_version in handle.decided_versions:
                return {
                    "schema": REVIEW_ACK_SCHEMA,
                    "accepted": True,
                    "idempotent": True,
                }
            phase = handle.status.get("phase", "")
            try:
                next_phase(phase, "review")
            except PhaseError as exc:
                raise _error(409, str(exc), phase=phase)
            pending = handle.pending_checklist
            if pending is None:
                raise _error(409, "no review pending", phase=phase)
            if decision.checklist_version != pending.version_id:
                raise _error(
                    409,
                    "decision targets a stale checklist version",
                    phase=phase,
                    expected_version=pending.version_id,
                )
            try:
                apply_decision(pending, decision, handle.pending_round)
            except InvalidDecision as exc:
                raise _error(422, f"invalid decision: {exc}")
            handle.decision = decision
            handle.decided_versions.add(decision.checklist_version)
            handle.decision_event.set()
        return {"schema": REVIEW_ACK_SCHEMA, "accepted": True, "idempotent": False}

    @app.get("/api/runs/{run_id}/steps", dependencies=dep)
    def step_feed(run_id: str, start: int = 0):
        _status_or_404(run_id)
        trace_path = runs_dir / run_id / "trace.jsonl"
        lines = read_trace_prefix(trace_path)
        records = assemble_steps(lines)
        batch = [record.to_dict() for record in records[max(start, 0):]]
        return {
            "schema": STEP_BATCH_SCHEMA,
            "start": max(start, 0),
            "next": len(records),
            "records": batch,
        }

    @app.get("/api/runs/{run_id}/report", dependencies=dep)
    def report_view(run_id: str):
        status = _status_or_404(run_id)
        if status.get("phase") != "done":
            raise _error(409, "report not available", phase=status.get("phase"))
        report_dir = runs_dir / run_id / "report"
        markdown = (report_dir / "report.md").read_text(encoding="utf-8")
        structured = json.loads((report_dir / "report.json").read_text(encoding="utf-8"))
        store = EvidenceStore(runs_dir / run_id / "store")
        cited_ids = {
            entry["evidence_id"] for entry in structured["citations"]["entries"]
        }
        for spec in structured.get("visuals", []):
            cited_ids.update(spec.get("evidence_ids", []))
        evidence = {}
        for ev_id in sorted(cited_ids):
            if ev_id in store.units:
                unit = store.units[ev_id]
                evidence[ev_id] = {
                    "source": unit.source,
                    "summary": unit.summary,
                    "excerpt": unit.excerpt,
                    "timestamp": unit.timestamp,
                    "confidence": unit.confidence,
                }
        return {
            "schema": REPORT_VIEW_SCHEMA,
            "run_id": run_id,
            "markdown": markdown,
            "report": structured,
            "evidence": evidence,
        }

    @app.post("/api/runs/{run_id}/abort", dependencies=dep)
    def abort_run(run_id: str):
        status = _status_or_404(run_id)
        handle = registry.get(run_id)
        if handle is None or handle.engine is None:
            raise _error(409, "run is not active in this service", phase=status.get("phase"))
        if status.get("phase") in ("done", "failed", "aborted"):
            raise _error(409, "run already finished", phase=status.get("phase"))
        handle.engine.abort()
        return {"schema": "abort-ack@1", "aborted": True}

    @app.exception_handler(HTTPException)
    async def http_exc_handler(_request: Request, exc: HTTPException):
        detail = exc.detail if isinstance(exc.detail, dict) else {"error": str(exc.detail)}
        return JSONResponse(status_code=exc.status_code, content=detail)

    dist = Path(frontend_dist) if frontend_dist else Path("frontend/dist")
    if dist.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(dist), html=True), name="ui")

    return app
