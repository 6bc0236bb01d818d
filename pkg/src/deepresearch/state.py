"""Factorized agent state and the state-update fold.

``update_state`` is a pure function of the previous state plus the five
traced step components, so a trace alone is enough to re-derive every
snapshot (replay verification relies on this). Commits are single-writer:
the snapshot store rejects updates whose parent is not the latest
committed state.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .ids import content_hash
from .providers import ActionCode, SearchTask


class StaleStateError(Exception):
    """A writer tried to commit on top of a non-latest state."""


@dataclass
class AgentState:
    step_index: int
    outline_version: int
    memory_ref: str
    checklist_ref: str
    search_tasks: list[SearchTask] = field(default_factory=list)
    completed_list: list[tuple[str, str]] = field(default_factory=list)
    todo_list: list[str] = field(default_factory=list)
    experience: list[str] = field(default_factory=list)
    information: list[str] = field(default_factory=list)
    recent_steps: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "step_index": self.step_index,
            "outline_version": self.outline_version,
            "memory_ref": self.memory_ref,
            "checklist_ref": self.checklist_ref,
            "search_tasks": [task.to_dict() for task in self.search_tasks],
            "completed_list": [list(pair) for pair in self.completed_list],
            "todo_list": list(self.todo_list),
            "experience": list(self.experience),
            "information": list(self.information),
            "recent_steps": [dict(step) for step in self.recent_steps],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AgentState":
        return cls(
            step_index=data["step_index"],
            outline_version=data["outline_version"],
            memory_ref=data["memory_ref"],
            checklist_ref=data["checklist_ref"],
            search_tasks=[SearchTask.from_dict(t) for t in data.get("search_tasks", [])],
            completed_list=[tuple(pair) for pair in data.get("completed_list", [])],
            todo_list=list(data.get("todo_list", [])),
            experience=list(data.get("experience", [])),
            information=list(data.get("information", [])),
            recent_steps=[dict(step) for step in data.get("recent_steps", [])],
        )

    @property
    def snapshot_id(self) -> str:
        return "state-" + content_hash(self.to_dict())[:12]

    def completed_ids(self) -> set[str]:
        return {item_id for item_id, _ in self.completed_list}

    def todo_keys(self) -> set[str]:
        keys = set()
        for entry in self.todo_list:
            if entry.startswith("[") and "]" in entry:
                keys.add(entry[1 : entry.index("]")])
        return keys


def initial_state(
    query: str, checklist_ref: str, memory_ref: str, outline_version: int
) -> AgentState:
    return AgentState(
        step_index=0,
        outline_version=outline_version,
        memory_ref=memory_ref,
        checklist_ref=checklist_ref,
        information=[f"Main research question: {query}"],
    )


def _todo_entry(key: str, text: str) -> str:
    return f"[{key}] {text}"


def update_state(
    prev: AgentState,
    thought: str,
    action_thought: str,
    action_code: ActionCode,
    observation: dict[str, Any],
    retention: int,
) -> AgentState:
    """Fold one committed step into the state.

    Merges task-queue, todo/completed, experience, and information
    effects carried by the observation payload, and keeps the retained
    context window at the last ``retention`` step digests.
    """
    effects = observation.get("effects", {})
    observed_at = effects.get("observed_at", "")

    tasks = [SearchTask.from_dict(t.to_dict() if isinstance(t, SearchTask) else t)
             for t in prev.search_tasks]
    completed_task_ids = set(effects.get("tasks_completed", []))
    tasks = [task for task in tasks if task.id not in completed_task_ids]
    known_ids = {task.id for task in tasks}
    added_tasks = []
    for row in effects.get("tasks_added", []):
        task = SearchTask.from_dict(row) if isinstance(row, dict) else row
        if task.id not in known_ids:
            tasks.append(task)
            added_tasks.append(task)
            known_ids.add(task.id)

    todo = list(prev.todo_list)
    todo_keys = prev.todo_keys()
    for task in added_tasks:
        key = task.origin_item or task.origin_node or task.id
        if key not in todo_keys:
            todo.append(_todo_entry(key, f"research: {task.query_text}"))
            todo_keys.add(key)

    completed = list(prev.completed_list)
    already = prev.completed_ids()
    for item_id in effects.get("items_satisfied", []):
        if item_id in already:
            continue
        completed.append((item_id, observed_at))
        already.add(item_id)
        todo = [entry for entry in todo if not entry.startswith(f"[{item_id}]")]

    experience = list(prev.experience) + [str(n) for n in effects.get("notes", [])]
    information = list(prev.information) + [str(f) for f in effects.get("facts", [])]

    digest = {
        "step": prev.step_index,
        "tool": action_code.tool,
        "observation": str(observation.get("digest", ""))[:200],
    }
    recent = (list(prev.recent_steps) + [digest])[-retention:] if retention > 0 else []

    return AgentState(
        step_index=prev.step_index + 1,
        outline_version=effects.get("outline_version", prev.outline_version),
        memory_ref=effects.get("snapshot_id", prev.memory_ref),
        checklist_ref=prev.checklist_ref,
        search_tasks=tasks,
        completed_list=completed,
        todo_list=todo,
        experience=experience,
        information=information,
        recent_steps=recent,
    )


class StateStore:
    """Single-writer snapshot store under ``<run>/state``."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, step_index: int) -> Path:
        return self.directory / f"step-{step_index:05d}.json"

    def latest_index(self) -> int | None:
        indices = [
            int(path.stem.split("-")[1])
            for path in self.directory.glob("step-*.json")
        ]
        return max(indices) if indices else None

    def commit(self, state: AgentState, prev: AgentState | None) -> str:
        latest = self.latest_index()
        if prev is None:
            if state.step_index != 0:
                raise StaleStateError("initial commit must have step_index 0")
        else:
            if latest is not None and prev.step_index < latest:
                raise StaleStateError(
                    f"prev state {prev.step_index} is not the latest committed ({latest})"
                )
            if state.step_index != prev.step_index + 1:
                raise StaleStateError(
                    f"commit of step {state.step_index} on top of {prev.step_index}"
                )
        path = self._path(state.step_index)
        data = json.dumps(
            {"snapshot_id": state.snapshot_id, "state": state.to_dict()},
            sort_keys=True,
        )
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        return state.snapshot_id

    def load(self, step_index: int) -> AgentState:
        payload = json.loads(self._path(step_index).read_text(encoding="utf-8"))
        return AgentState.from_dict(payload["state"])

    def load_latest(self) -> AgentState | None:
        latest = self.latest_index()
        if latest is None:
            return None
        return self.load(latest)
