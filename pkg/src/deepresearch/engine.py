"""Run orchestration: the five-component loop, stop signal, and lifecycle.

One engine instance owns one run directory. Step commits are
single-writer and ordered so that the trace's state line is the commit
point: evidence log, outline, and state snapshot are flushed first,
then the five trace lines are appended. A killed process can therefore
resume from the last complete step and re-derive exactly the same store
contents (every artifact is content-addressed and the providers are
deterministic).
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .checklist import (
    Checklist,
    ChecklistError,
    auto_resolve,
    bind_items,
    critic_refine,
    derive_plan_intents,
    generate_checklist,
    review_document,
)
from .clock import Clock, StepClock, SystemClock, sleep_ms
from .config import RunConfig
from .evidence import EvidenceStore, EvidenceUnit, ingest, refine_outline
from .ids import canonical_json, content_hash, sha256_hex
from .mocks import LLMCritic
from .outline import UNASSIGNED_TITLE, Outline, compile_outline, make_root
from .ports import CriticPort, CriticTimeout, EnvironmentPort, PolicyPort, ProviderError
from .providers import (
    TEMPLATES,
    ActionCode,
    ToolOutputError,
    _extract_json,
    llm_complete,
    plan_tool,
    search_tool,
)
from .records import (
    History,
    StepRecord,
    TraceWriter,
    assemble_steps,
    genesis_hash,
    parse_trace_line,
    read_trace,
    verify_chain,
)
from .report import Report, draft, extract_evidence, parse_report, render_report, write
from .state import AgentState, StateStore, initial_state, update_state
from .workspace import Subgoal, Workspace, reconstruct_workspace

logger = logging.getLogger(__name__)

RUN_SCHEMA = "run@1"
STATUS_SCHEMA = "run-status@1"

PHASES = (
    "checklisting",
    "awaiting-review",
    "researching",
    "drafting",
    "writing",
    "done",
    "failed",
    "aborted",
)

STOP_REASONS = (
    "all-goals-satisfied",
    "horizon-reached",
    "budget-exhausted",
    "operator-abort",
)

# Phase machine: every (phase, event) either transitions or is rejected.
PHASE_TRANSITIONS: dict[tuple[str, str], str] = {
    ("checklisting", "await_review"): "awaiting-review",
    ("checklisting", "research"): "researching",
    ("checklisting", "fail"): "failed",
    ("checklisting", "abort"): "aborted",
    ("awaiting-review", "review"): "checklisting",
    ("awaiting-review", "fail"): "failed",
    ("awaiting-review", "abort"): "aborted",
    ("researching", "step"): "researching",
    ("researching", "stop"): "drafting",
    ("researching", "fail"): "failed",
    ("researching", "abort"): "aborted",
    ("drafting", "drafted"): "writing",
    ("drafting", "fail"): "failed",
    ("drafting", "abort"): "aborted",
    ("writing", "written"): "done",
    ("writing", "fail"): "failed",
    ("writing", "abort"): "aborted",
}


class EngineError(Exception):
    pass


class PhaseError(EngineError):
    """Event not allowed in the current phase."""

    def __init__(self, phase: str, event: str) -> None:
        super().__init__(f"event {event!r} not allowed in phase {phase!r}")
        self.phase = phase
        self.event = event


class RunAborted(EngineError):
    pass


def next_phase(phase: str, event: str) -> str:
    key = (phase, event)
    if key not in PHASE_TRANSITIONS:
        raise PhaseError(phase, event)
    return PHASE_TRANSITIONS[key]


@dataclass
class StopSignal:
    stop: bool
    reason: str = ""
    step: int = -1

    def to_dict(self) -> dict[str, Any]:
        return {"stop": self.stop, "reason": self.reason, "step": self.step}


def should_stop(
    outline: Outline,
    store: EvidenceStore,
    checklist: Checklist | None,
    step: int,
    config: RunConfig,
    *,
    completed: frozenset[str] | set[str] = frozenset(),
    policy_calls: int = 0,
) -> StopSignal:
    """The concrete stop predicate.

    Stops when every checklist item is satisfied or waived AND every
    outline leaf carries at least the configured minimum of bound
    evidence; or on horizon / call-budget exhaustion.
    """
    all_goals = True
    if checklist is not None:
        for item in checklist.items:
            if item.status == "waived":
                continue
            if item.id not in completed:
                all_goals = False
                break
    if all_goals:
        leaves = outline.leaves()
        if len(leaves) == 1 and leaves[0].depth == 0:
            all_goals = False  # bare root: nothing has been planned yet
        else:
            for leaf in leaves:
                if len(store.index.get(leaf.id, [])) < config.min_evidence_per_leaf:
                    all_goals = False
                    break
    if all_goals:
        return StopSignal(True, "all-goals-satisfied", step)
    if step >= config.max_steps:
        return StopSignal(True, "horizon-reached", step)
    if config.max_policy_calls > 0 and policy_calls >= config.max_policy_calls:
        return StopSignal(True, "budget-exhausted", step)
    return StopSignal(False, "", step)


class CountingPolicy:
    """Wraps a policy to count completion calls (for the call budget)."""

    def __init__(self, inner: PolicyPort) -> None:
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, template, bindings):
        with self._lock:
            self.calls += 1
        return self.inner.complete(template, bindings)


class FallbackCritic:
    """Applies the configured fallback when the critic times out."""

    def __init__(self, inner: CriticPort, policy: PolicyPort, fallback: str) -> None:
        self.inner = inner
        self.policy = policy
        self.fallback = fallback

    def review(self, checklist, intents, round_index):
        try:
            return self.inner.review(checklist, intents, round_index)
        except CriticTimeout:
            if self.fallback == "llm-fallback":
                logger.warning("critic timed out; falling back to policy critic")
                return LLMCritic(self.policy).review(checklist, intents, round_index)
            raise RunAborted("critic timed out and fallback is abort")


class RecordingCritic:
    """Persists each round's review document and decision to the run dir."""

    def __init__(self, inner: CriticPort, engine: "ResearchRun") -> None:
        self.inner = inner
        self.engine = engine

    def review(self, checklist, intents, round_index):
        doc = review_document(checklist, intents, self.engine.run_id, self.engine.phase)
        request = self.engine.paths.checklist_dir / f"round-{round_index}-request.json"
        request.write_text(canonical_json(doc), encoding="utf-8")
        decision = self.inner.review(checklist, intents, round_index)
        decision_path = (
            self.engine.paths.checklist_dir / f"round-{round_index}-decision.json"
        )
        decision_path.write_text(canonical_json(decision.to_dict()), encoding="utf-8")
        return decision


@dataclass
class RunResult:
    run_id: str
    run_dir: Path
    status: str
    steps: int
    stop: StopSignal | None = None
    report: Report | None = None
    error: str | None = None


@dataclass
class RunPaths:
    root: Path

    @property
    def header(self) -> Path:
        return self.root / "run.json"

    @property
    def status(self) -> Path:
        return self.root / "status.json"

    @property
    def trace(self) -> Path:
        return self.root / "trace.jsonl"

    @property
    def store_dir(self) -> Path:
        return self.root / "store"

    @property
    def state_dir(self) -> Path:
        return self.root / "state"

    @property
    def checklist_dir(self) -> Path:
        return self.root / "checklist"

    @property
    def workspace_dir(self) -> Path:
        return self.root / "workspace"

    @property
    def audit_dir(self) -> Path:
        return self.root / "audit"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    @property
    def outline_file(self) -> Path:
        return self.root / "outline.json"

    @property
    def outline_dir(self) -> Path:
        return self.root / "outlines"

    def outline_version_file(self, version: int) -> Path:
        return self.outline_dir / f"outline-{version:05d}.json"

    @property
    def ingestion_log(self) -> Path:
        return self.root / "ingestion-log.jsonl"


def compute_run_id(query: str, config: RunConfig, fixtures_hash: str) -> str:
    return "run-" + content_hash([query, config.to_dict(), fixtures_hash])[:12]


class ResearchRun:
    """One controlled research run bound to a run directory."""

    def __init__(
        self,
        query: str,
        config: RunConfig,
        policy: PolicyPort,
        environment: EnvironmentPort,
        critic: CriticPort | None,
        out_dir: str | Path,
        *,
        run_id: str | None = None,
        fixtures_hash: str = "",
        clock: Clock | None = None,
        status_callback: Callable[[dict[str, Any]], None] | None = None,
    ) -> None:
        config.validate()
        self.query = query
        self.config = config
        self.policy = CountingPolicy(policy)
        self.environment = environment
        self.critic = critic
        self.run_id = run_id or compute_run_id(query, config, fixtures_hash)
        self.fixtures_hash = fixtures_hash
        self.paths = RunPaths(Path(out_dir) / self.run_id)
        self.clock: Clock = clock or (StepClock() if config.mock else SystemClock())
        self.status_callback = status_callback
        self.abort_event = threading.Event()
        self.phase = "checklisting" if config.vcm_enabled else "researching"
        self.stop_signal: StopSignal | None = None
        self.step_index = -1
        self.history: History | None = None

    # ------------------------------------------------------------------
    # lifecycle plumbing
    def _header(self) -> dict[str, Any]:
        return {
            "schema": RUN_SCHEMA,
            "run_id": self.run_id,
            "query": self.query,
            "config": self.config.to_dict(),
            "fixtures_hash": self.fixtures_hash,
        }

    def _write_status(self, phase: str, *, error: str | None = None) -> None:
        self.phase = phase
        payload = {
            "schema": STATUS_SCHEMA,
            "run_id": self.run_id,
            "query": self.query,
            "phase": phase,
            "step_index": self.step_index,
            "stop_reason": self.stop_signal.reason if self.stop_signal else None,
            "error": error,
        }
        tmp = self.paths.status.with_suffix(".tmp")
        tmp.write_text(canonical_json(payload), encoding="utf-8")
        tmp.replace(self.paths.status)
        if self.status_callback:
            self.status_callback(payload)

    def abort(self) -> None:
        self.abort_event.set()

    def _check_abort(self) -> None:
        if self.abort_event.is_set():
            raise RunAborted("operator abort requested")

    def _prepare_dirs(self) -> None:
        self.paths.root.mkdir(parents=True, exist_ok=True)
        self.paths.state_dir.mkdir(exist_ok=True)
        self.paths.store_dir.mkdir(exist_ok=True)
        self.paths.workspace_dir.mkdir(exist_ok=True)
        self.paths.report_dir.mkdir(exist_ok=True)
        if self.config.vcm_enabled:
            self.paths.checklist_dir.mkdir(exist_ok=True)
        if self.config.eam_enabled:
            self.paths.audit_dir.mkdir(exist_ok=True)
        self.paths.header.write_text(canonical_json(self._header()), encoding="utf-8")

    def _save_outline(self, outline: Outline) -> None:
        data = canonical_json(outline.to_dict())
        self.paths.outline_file.write_text(data, encoding="utf-8")
        # Versioned copy: resume must reload the outline as of the resumed
        # state, not whatever a partially-committed later step left behind.
        self.paths.outline_dir.mkdir(exist_ok=True)
        self.paths.outline_version_file(outline.version).write_text(
            data, encoding="utf-8"
        )

    # ------------------------------------------------------------------
    # checklist phase
    def _checklist_phase(self) -> tuple[Checklist | None, Outline]:
        if not self.config.vcm_enabled:
            return None, Outline(nodes=[make_root(self.query)], version=0)

        self._write_status("checklisting")
        base, outline0 = generate_checklist(self.query, self.policy)
        (self.paths.checklist_dir / "version-0.json").write_text(
            canonical_json(base.to_dict()), encoding="utf-8"
        )
        (self.paths.checklist_dir / "outline-0.json").write_text(
            canonical_json(outline0.to_dict()), encoding="utf-8"
        )
        intents = derive_plan_intents(self.query, base)
        (self.paths.checklist_dir / "intents-0.json").write_text(
            canonical_json([intent.to_dict() for intent in intents]), encoding="utf-8"
        )

        if self.config.critic_mode == "none":
            refined = auto_resolve(base)
        else:
            if self.config.critic_mode == "llm":
                critic: CriticPort = self.critic or LLMCritic(self.policy)
            else:
                if self.critic is None:
                    raise EngineError("critic_mode=human requires a critic port")
                critic = self.critic
                self._write_status("awaiting-review")
            wrapped = RecordingCritic(
                FallbackCritic(critic, self.policy, self.config.review_fallback), self
            )
            refined = critic_refine(
                base, intents, wrapped, max_rounds=self.config.max_critic_rounds
            )

        outline = compile_outline(refined, max_depth=self.config.max_outline_depth)
        refined = bind_items(refined, outline)
        (self.paths.checklist_dir / "version-final.json").write_text(
            canonical_json(refined.to_dict()), encoding="utf-8"
        )
        return refined, outline

    # ------------------------------------------------------------------
    # workspace
    def _subgoals(
        self,
        checklist: Checklist | None,
        outline: Outline,
        store: EvidenceStore,
        state: AgentState,
    ) -> tuple[list[Subgoal], dict[str, list[tuple[str, str]]]]:
        # Counts come from the state's committed memory snapshot, not the
        # live store: a step interrupted after persisting must reconstruct
        # the same workspace when re-executed.
        completed = state.completed_ids()
        if store.has_snapshot(state.memory_ref):
            members = set(store.snapshot_ids(state.memory_ref))
        else:
            members = store.ids()

        def bound(node_id: str) -> list[str]:
            return [uid for uid in store.index.get(node_id, []) if uid in members]

        need = self.config.min_evidence_per_leaf
        subgoals: list[Subgoal] = []
        evidence_for: dict[str, list[tuple[str, str]]] = {}
        if checklist is not None:
            for item in checklist.open_items():
                if item.id in completed:
                    continue
                counts = [len(bound(n)) for n in item.bound_nodes]
                have = min(counts) if counts else 0
                subgoals.append(Subgoal("item", item.id, item.goal, have, need))
                ids = sorted({uid for n in item.bound_nodes for uid in bound(n)})
                evidence_for[item.id] = [(uid, store.units[uid].summary) for uid in ids]
        else:
            for leaf in outline.leaves():
                if leaf.depth == 0 or leaf.title == UNASSIGNED_TITLE:
                    continue
                have = len(bound(leaf.id))
                if have >= need:
                    continue
                subgoals.append(Subgoal("node", leaf.id, leaf.title, have, need))
                evidence_for[leaf.id] = [
                    (uid, store.units[uid].summary) for uid in bound(leaf.id)
                ]
        return subgoals, evidence_for

    def _reconstruct(
        self,
        step: int,
        prev_state: AgentState,
        prev_action: dict[str, Any] | None,
        prev_observation: dict[str, Any] | None,
        checklist: Checklist | None,
        outline: Outline,
        store: EvidenceStore,
    ) -> Workspace:
        subgoals, evidence_for = self._subgoals(checklist, outline, store, prev_state)
        workspace = reconstruct_workspace(
            self.query,
            prev_state,
            prev_action,
            prev_observation,
            self.config.workspace_budget,
            subgoals=subgoals,
            evidence_for=evidence_for,
            max_active=self.config.max_active_subgoals,
            digest_max_chars=self.config.digest_max_chars,
        )
        rendered = workspace.render()
        if len(rendered) > self.config.workspace_budget:
            raise EngineError(
                f"workspace exceeded budget at step {step}: {len(rendered)}"
            )
        (self.paths.workspace_dir / f"step-{step:05d}.txt").write_text(
            rendered, encoding="utf-8"
        )
        return workspace

    # ------------------------------------------------------------------
    # per-step policy calls and tool execution
    def _decide_action(
        self, workspace: Workspace, step: int
    ) -> tuple[str, str, ActionCode]:
        ws_text = workspace.render()
        thought = llm_complete(
            TEMPLATES["step_thought"],
            {"workspace": ws_text, "step": str(step)},
            self.policy,
        )
        action_thought = llm_complete(
            TEMPLATES["step_action_thought"],
            {"workspace": ws_text, "thought": thought},
            self.policy,
        )
        bindings = {
            "workspace": ws_text,
            "thought": thought,
            "action_thought": action_thought,
            "max_tasks": str(self.config.tasks_per_step),
        }
        action: ActionCode | None = None
        last_error = ""
        for _ in range(2):
            text = llm_complete(TEMPLATES["step_action"], bindings, self.policy)
            try:
                action = ActionCode.from_dict(_extract_json(text))
                break
            except (json.JSONDecodeError, KeyError, ProviderError) as exc:
                last_error = str(exc)
                logger.warning("action output unparseable, retrying once: %s", exc)
        if action is None:
            action = ActionCode(
                tool="noop",
                parameters={"diagnostic": f"action output unparseable: {last_error}"},
                task_descriptor="noop (unparseable action)",
            )
        return thought, action_thought, action

    def _passthrough_units(self, raw, checklist, task_origin) -> list[EvidenceUnit]:
        """Audit module disabled: raw snippets become directly-bound memory."""
        units: dict[str, EvidenceUnit] = {}
        for result in raw:
            if not result.ok:
                continue
            unit_id = f"ev-{sha256_hex(result.body)[:16]}"
            if unit_id in units:
                continue
            origin_item, origin_node = task_origin.get(
                result.search_task_id, (None, None)
            )
            nodes: list[str] = []
            if origin_item and checklist is not None:
                nodes = list(checklist.get(origin_item).bound_nodes)
            elif origin_node:
                nodes = [origin_node]
            units[unit_id] = EvidenceUnit(
                id=unit_id,
                source=result.source,
                timestamp=result.fetched_at,
                confidence=self.config.default_source_prior,
                summary=f"{result.body[:300]} [{result.source}]",
                excerpt=result.body[:500],
                bound_nodes=nodes,
                provenance=(result.search_task_id, result.step_index),
            )
        return list(units.values())

    def _execute_action(
        self,
        action: ActionCode,
        step: int,
        state: AgentState,
        checklist: Checklist | None,
        outline: Outline,
        store: EvidenceStore,
        workspace: Workspace,
    ) -> tuple[dict[str, Any], Outline]:
        observed_at = self.clock.component_time(step, "observation")
        effects: dict[str, Any] = {"observed_at": observed_at}
        results: list[dict[str, Any]] = []
        digest = action.tool

        if action.tool == "plan":
            try:
                outline, tasks = plan_tool(
                    self.query,
                    workspace,
                    self.policy,
                    outline,
                    max_tasks=self.config.max_active_subgoals,
                )
                pending_ids = {task.id for task in state.search_tasks}
                new_tasks = [task for task in tasks if task.id not in pending_ids]
                effects["tasks_added"] = [task.to_dict() for task in new_tasks]
                effects["outline_version"] = outline.version
                effects["facts"] = [f"planned {len(new_tasks)} search task(s)"]
                effects["items_satisfied"] = self._satisfied_items(
                    checklist,
                    store,
                    state.completed_ids(),
                    state.todo_keys()
                    | {
                        task.origin_item or task.origin_node or task.id
                        for task in new_tasks
                    },
                )
                digest = f"plan: {len(new_tasks)} new task(s)"
            except ToolOutputError as exc:
                effects["notes"] = [f"plan failed: {exc}"]
                digest = "plan failed"
        elif action.tool == "search":
            requested = [str(t) for t in action.parameters.get("task_ids", [])]
            by_id = {task.id: task for task in state.search_tasks}
            tasks = [by_id[tid] for tid in requested if tid in by_id]
            notes = [f"unknown task id {tid}" for tid in requested if tid not in by_id]
            if not tasks:
                effects["notes"] = notes + ["search requested with no resolvable tasks"]
                digest = "search: no tasks"
            else:
                raw = search_tool(tasks, self.environment, self.config.fanout, step)
                results = [result.to_dict() for result in raw]
                task_origin = {
                    task.id: (task.origin_item, task.origin_node) for task in tasks
                }
                if self.config.eam_enabled:
                    log: list[dict[str, Any]] = []
                    units, snapshot_id = ingest(
                        raw,
                        store,
                        self.policy,
                        source_priors=self.config.source_priors,
                        default_prior=self.config.default_source_prior,
                        summary_sentences=self.config.summary_sentences,
                        log=log,
                    )
                    if log:
                        with open(self.paths.ingestion_log, "a", encoding="utf-8") as fh:
                            for entry in log:
                                fh.write(canonical_json(entry) + "\n")
                    outline = refine_outline(
                        outline,
                        units,
                        self.policy,
                        store=store,
                        bind_threshold=self.config.bind_threshold,
                    )
                else:
                    units = self._passthrough_units(raw, checklist, task_origin)
                    store.add(units)
                    snapshot_id = store.snapshot()
                effects["snapshot_id"] = snapshot_id
                effects["outline_version"] = outline.version
                effects["tasks_completed"] = [task.id for task in tasks]
                failures = [r for r in raw if not r.ok]
                ok_count = sum(1 for r in raw if r.ok)
                for failure in failures:
                    notes.append(
                        f"search [{failure.search_task_id}] failed: {failure.status}"
                    )
                if failures and ok_count == 0:
                    notes.append("all search tasks failed this step")
                if notes:
                    effects["notes"] = notes
                effects["facts"] = [
                    f"ingested {len(units)} unit(s); store holds {len(store)}"
                ]
                effects["items_satisfied"] = self._satisfied_items(
                    checklist, store, state.completed_ids(), state.todo_keys()
                )
                digest = (
                    f"search: {len(tasks)} task(s), {ok_count} ok result(s), "
                    f"{len(failures)} failure(s)"
                )
        else:  # noop and not-yet-wired tools
            if action.parameters.get("diagnostic"):
                effects["notes"] = [str(action.parameters["diagnostic"])]
            digest = f"{action.tool}: no effect"

        observation = {
            "tool": action.tool,
            "results": results,
            "effects": effects,
            "digest": digest,
        }
        return observation, outline

    def _satisfied_items(
        self,
        checklist: Checklist | None,
        store: EvidenceStore,
        completed: set[str],
        todo_keys: set[str],
    ) -> list[str]:
        if checklist is None:
            return []
        need = self.config.min_evidence_per_leaf
        satisfied = []
        for item in checklist.items:
            if item.status != "verified" or item.id in completed:
                continue
            if item.id not in todo_keys:
                continue
            if item.bound_nodes and all(
                len(store.index.get(n, [])) >= need for n in item.bound_nodes
            ):
                satisfied.append(item.id)
        return satisfied

    # ------------------------------------------------------------------
    # the loop
    def _run_step(
        self,
        step: int,
        state: AgentState,
        prev_action: dict[str, Any] | None,
        prev_observation: dict[str, Any] | None,
        checklist: Checklist | None,
        outline: Outline,
        store: EvidenceStore,
        state_store: StateStore,
        writer: TraceWriter,
    ) -> tuple[AgentState, dict[str, Any], dict[str, Any], Outline]:
        workspace = self._reconstruct(
            step, state, prev_action, prev_observation, checklist, outline, store
        )
        thought, action_thought, action = self._decide_action(workspace, step)
        observation, outline = self._execute_action(
            action, step, state, checklist, outline, store, workspace
        )
        new_state = update_state(
            state, thought, action_thought, action, observation, self.config.retention
        )
        self._save_outline(outline)
        state_store.commit(new_state, state)

        times = {slot: self.clock.component_time(step, slot) for slot in (
            "thought", "action_thought", "action_code", "observation", "state"
        )}
        writer.append(step, "thought", {"text": thought}, times["thought"])
        writer.append(
            step, "action_thought", {"text": action_thought}, times["action_thought"]
        )
        writer.append(step, "action_code", action.to_dict(), times["action_code"])
        writer.append(step, "observation", observation, times["observation"])
        writer.append(
            step,
            "state",
            {
                "snapshot_id": new_state.snapshot_id,
                "step_index": new_state.step_index,
                "completed_count": len(new_state.completed_list),
                "todo_count": len(new_state.todo_list),
                "pending_tasks": len(new_state.search_tasks),
            },
            times["state"],
        )
        assert self.history is not None
        self.history.append(
            StepRecord(
                step_index=step,
                thought=thought,
                action_thought=action_thought,
                action_code=action.to_dict(),
                observation=observation,
                state_snapshot_id=new_state.snapshot_id,
                wall_time=times["state"],
                prev_hash="",
            )
        )
        return new_state, action.to_dict(), observation, outline

    def _loop(
        self,
        start_step: int,
        state: AgentState,
        prev_action: dict[str, Any] | None,
        prev_observation: dict[str, Any] | None,
        checklist: Checklist | None,
        outline: Outline,
        store: EvidenceStore,
        state_store: StateStore,
        writer: TraceWriter,
    ) -> tuple[StopSignal, AgentState, Outline]:
        step = start_step
        # A resumed run may already satisfy the stop predicate.
        if start_step > 0:
            prior = should_stop(
                outline,
                store,
                checklist,
                start_step - 1,
                self.config,
                completed=state.completed_ids(),
                policy_calls=self.policy.calls,
            )
            if prior.stop and prior.reason == "all-goals-satisfied":
                return prior, state, outline
        while True:
            self._check_abort()
            if step >= self.config.max_steps:
                return StopSignal(True, "horizon-reached", step), state, outline
            if (
                self.config.max_policy_calls > 0
                and self.policy.calls >= self.config.max_policy_calls
            ):
                return StopSignal(True, "budget-exhausted", step), state, outline

            state, prev_action, prev_observation, outline = self._run_step(
                step,
                state,
                prev_action,
                prev_observation,
                checklist,
                outline,
                store,
                state_store,
                writer,
            )
            self.step_index = step
            self._write_status("researching")

            signal = should_stop(
                outline,
                store,
                checklist,
                step,
                self.config,
                completed=state.completed_ids(),
                policy_calls=self.policy.calls,
            )
            if signal.stop:
                return signal, state, outline
            sleep_ms(self.config.step_delay_ms)
            step += 1

    # ------------------------------------------------------------------
    # entry points
    def execute(self) -> RunResult:
        try:
            return self._execute_inner()
        except RunAborted as exc:
            self._write_status("aborted", error=str(exc))
            return RunResult(
                run_id=self.run_id,
                run_dir=self.paths.root,
                status="aborted",
                steps=self.step_index + 1,
                stop=self.stop_signal,
                error=str(exc),
            )
        except (ProviderError, ChecklistError, EngineError, OSError) as exc:
            logger.exception("run %s failed", self.run_id)
            self._write_status("failed", error=f"{type(exc).__name__}: {exc}")
            return RunResult(
                run_id=self.run_id,
                run_dir=self.paths.root,
                status="failed",
                steps=self.step_index + 1,
                stop=self.stop_signal,
                error=f"{type(exc).__name__}: {exc}",
            )

    def _execute_inner(self) -> RunResult:
        self._prepare_dirs()
        anchor = genesis_hash(self._header())

        checklist, outline = self._checklist_phase()
        self._check_abort()
        self._save_outline(outline)

        store = EvidenceStore(self.paths.store_dir)
        state_store = StateStore(self.paths.state_dir)
        empty_snapshot = store.snapshot()
        state = initial_state(
            self.query,
            checklist.version_id if checklist else "",
            empty_snapshot,
            outline.version,
        )
        state_store.commit(state, None)
        self.history = History(self.query, state.snapshot_id)
        writer = TraceWriter(self.paths.trace, self.run_id, anchor)
        self._write_status("researching")

        stop, state, outline = self._loop(
            0, state, None, None, checklist, outline, store, state_store, writer
        )
        self.stop_signal = stop
        return self._finish(checklist, outline, store, state, stop)

    def resume(self) -> RunResult:
        """Continue a partially executed run directory."""
        try:
            return self._resume_inner()
        except RunAborted as exc:
            self._write_status("aborted", error=str(exc))
            return RunResult(
                run_id=self.run_id,
                run_dir=self.paths.root,
                status="aborted",
                steps=self.step_index + 1,
                error=str(exc),
            )
        except (ProviderError, ChecklistError, EngineError, OSError) as exc:
            logger.exception("resume of %s failed", self.run_id)
            self._write_status("failed", error=f"{type(exc).__name__}: {exc}")
            return RunResult(
                run_id=self.run_id,
                run_dir=self.paths.root,
                status="failed",
                steps=self.step_index + 1,
                error=f"{type(exc).__name__}: {exc}",
            )

    def _resume_inner(self) -> RunResult:
        status_path = self.paths.status
        if status_path.exists():
            status = json.loads(status_path.read_text(encoding="utf-8"))
            if status.get("phase") == "done":
                report = parse_report(
                    (self.paths.report_dir / "report.json").read_bytes()
                )
                self.stop_signal = StopSignal(
                    True, status.get("stop_reason") or "", status.get("step_index", -1)
                )
                return RunResult(
                    run_id=self.run_id,
                    run_dir=self.paths.root,
                    status="done",
                    steps=status.get("step_index", -1) + 1,
                    stop=self.stop_signal,
                    report=report,
                )

        lines, byte_len = _valid_step_prefix(self.paths.trace)
        if self.paths.trace.exists():
            with open(self.paths.trace, "r+b") as handle:
                handle.truncate(byte_len)

        checklist_final = self.paths.checklist_dir / "version-final.json"
        fresh = (self.config.vcm_enabled and not checklist_final.exists()) or not lines
        if fresh:
            if self.paths.trace.exists():
                self.paths.trace.unlink()
            return self._execute_inner()

        checklist = None
        if self.config.vcm_enabled:
            checklist = Checklist.from_dict(
                json.loads(checklist_final.read_text(encoding="utf-8"))
            )
        store = EvidenceStore(self.paths.store_dir)
        state_store = StateStore(self.paths.state_dir)

        records = assemble_steps(lines)
        last_step = records[-1].step_index if records else -1
        latest = state_store.latest_index()
        if latest is not None:
            for idx in range(last_step + 2, latest + 1):
                orphan = state_store._path(idx)
                if orphan.exists():
                    orphan.unlink()

        state = state_store.load(last_step + 1)
        outline_path = self.paths.outline_version_file(state.outline_version)
        if not outline_path.exists():
            outline_path = self.paths.outline_file
        outline = Outline.from_dict(
            json.loads(outline_path.read_text(encoding="utf-8"))
        )
        self.history = History(self.query, state_store.load(0).snapshot_id)
        for record in records:
            self.history.append(record)

        writer = TraceWriter(
            self.paths.trace,
            self.run_id,
            lines[-1].hash() if lines else genesis_hash(self._header()),
        )
        prev_action = records[-1].action_code if records else None
        prev_observation = records[-1].observation if records else None
        self.step_index = last_step
        self._write_status("researching")

        stop, state, outline = self._loop(
            last_step + 1,
            state,
            prev_action,
            prev_observation,
            checklist,
            outline,
            store,
            state_store,
            writer,
        )
        self.stop_signal = stop
        return self._finish(checklist, outline, store, state, stop)

    def _finish(
        self,
        checklist: Checklist | None,
        outline: Outline,
        store: EvidenceStore,
        state: AgentState,
        stop: StopSignal | None,
    ) -> RunResult:
        self._check_abort()
        self._write_status("drafting")
        sections, citations = draft(
            outline,
            checklist,
            store,
            self.policy,
            top_k=self.config.compose_top_k,
            weights=self.config.rank_weights,
            eam_enabled=self.config.eam_enabled,
            half_life_days=self.config.timeliness_half_life_days,
            include_descendants=self.config.include_descendants,
        )
        visuals = [spec for section in sections for spec in section.visualization_specs]
        audit = None
        if self.config.eam_enabled:
            audit = extract_evidence(
                sections,
                visuals,
                citations,
                store,
                audit_threshold=self.config.audit_threshold,
                weights=self.config.rank_weights,
                half_life_days=self.config.timeliness_half_life_days,
            )
            (self.paths.audit_dir / "bundle.json").write_text(
                canonical_json(audit.to_dict()), encoding="utf-8"
            )
        self._write_status("writing")
        report = write(
            sections,
            visuals,
            audit,
            citations,
            self.policy,
            unsupported_policy=self.config.unsupported_policy,
            store=store,
            run_id=self.run_id,
            outline_version=outline.version,
        )
        (self.paths.report_dir / "report.md").write_bytes(
            render_report(report, "markdown")
        )
        (self.paths.report_dir / "report.json").write_bytes(
            render_report(report, "structured")
        )
        self._write_status("done")
        return RunResult(
            run_id=self.run_id,
            run_dir=self.paths.root,
            status="done",
            steps=self.step_index + 1,
            stop=stop,
            report=report,
        )


def run_episode(
    query: str,
    config: RunConfig,
    policy: PolicyPort,
    environment: EnvironmentPort,
    critic: CriticPort | None = None,
    *,
    out_dir: str | Path,
    run_id: str | None = None,
    fixtures_hash: str = "",
    status_callback: Callable[[dict[str, Any]], None] | None = None,
) -> RunResult:
    """Execute one full research episode and return the result."""
    engine = ResearchRun(
        query,
        config,
        policy,
        environment,
        critic,
        out_dir,
        run_id=run_id,
        fixtures_hash=fixtures_hash,
        status_callback=status_callback,
    )
    return engine.execute()


def _valid_step_prefix(path: Path) -> tuple[list, int]:
    """Longest chain of full lines ending at a state line, plus byte size."""
    lines = []
    sizes = []
    if not path.exists():
        return [], 0
    with open(path, "rb") as handle:
        for raw in handle:
            if not raw.endswith(b"\n"):
                break
            text = raw.decode("utf-8", errors="replace").strip()
            if not text:
                break
            try:
                lines.append(parse_trace_line(text))
            except Exception:
                break
            sizes.append(len(raw))
    last_state = -1
    for idx, line in enumerate(lines):
        if line.kind == "state":
            last_state = idx
    return lines[: last_state + 1], sum(sizes[: last_state + 1])


def resume_run(
    run_dir: str | Path,
    policy: PolicyPort,
    environment: EnvironmentPort,
    critic: CriticPort | None = None,
    *,
    status_callback: Callable[[dict[str, Any]], None] | None = None,
) -> RunResult:
    """Resume a killed run from its last committed step."""
    run_dir = Path(run_dir)
    header = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    config = RunConfig.from_dict(header["config"])
    engine = ResearchRun(
        header["query"],
        config,
        policy,
        environment,
        critic,
        run_dir.parent,
        run_id=header["run_id"],
        fixtures_hash=header.get("fixtures_hash", ""),
        status_callback=status_callback,
    )
    return engine.resume()


@dataclass
class ReplayResult:
    ok: bool
    steps: int
    message: str
    first_divergence: int | None = None
    final_state_id: str | None = None


def replay_run(run_dir: str | Path) -> ReplayResult:
    """Verify the hash chain and re-derive every state snapshot."""
    run_dir = Path(run_dir)
    header = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    config = RunConfig.from_dict(header["config"])
    anchor = genesis_hash(header)
    try:
        lines = read_trace(run_dir / "trace.jsonl")
    except Exception as exc:
        return ReplayResult(False, 0, f"trace unreadable: {exc}")
    check = verify_chain(lines, anchor)
    if not check.ok:
        return ReplayResult(
            False, check.steps, check.message, first_divergence=check.first_bad_line
        )
    records = assemble_steps(lines)
    state_store = StateStore(run_dir / "state")
    state = state_store.load(0)
    for record in records:
        derived = update_state(
            state,
            record.thought,
            record.action_thought,
            ActionCode.from_dict(record.action_code),
            record.observation,
            config.retention,
        )
        if derived.snapshot_id != record.state_snapshot_id:
            return ReplayResult(
                False,
                len(records),
                f"state divergence at step {record.step_index}: "
                f"derived {derived.snapshot_id}, traced {record.state_snapshot_id}",
                first_divergence=record.step_index,
            )
        state = derived
    return ReplayResult(
        True,
        len(records),
        f"verified, {len(records)} steps",
        final_state_id=state.snapshot_id,
    )
