"""Step records, trace files, and the hash chain.

A run's trace is a line-delimited file of step components in commit
order (thought, action_thought, action_code, observation, state), five
lines per step. Every line carries the sha256 of the previous line's
exact bytes, so flipping any byte of line k fails verification at line
k+1. Field order inside a line is fixed for byte-exact replay
comparison.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .clock import COMPONENT_SLOTS
from .ids import canonical_json, sha256_hex

TRACE_FIELDS = ("run_id", "step", "kind", "payload", "timestamp", "prev_hash")


class TraceError(Exception):
    """Trace file is malformed or fails chain verification."""


@dataclass(frozen=True)
class TraceLine:
    """One serialized step component."""

    run_id: str
    step: int
    kind: str
    payload: dict[str, Any]
    timestamp: str
    prev_hash: str

    def serialize(self) -> str:
        # Fixed top-level field order; payload keys canonicalized.
        parts = [
            f'"run_id":{json.dumps(self.run_id, ensure_ascii=False)}',
            f'"step":{self.step}',
            f'"kind":{json.dumps(self.kind)}',
            f'"payload":{canonical_json(self.payload)}',
            f'"timestamp":{json.dumps(self.timestamp)}',
            f'"prev_hash":{json.dumps(self.prev_hash)}',
        ]
        return "{" + ",".join(parts) + "}"

    def hash(self) -> str:
        return sha256_hex(self.serialize())


def genesis_hash(run_header: dict[str, Any]) -> str:
    """Chain anchor binding the trace to the run's identity."""
    return sha256_hex(canonical_json(run_header))


class TraceWriter:
    """Append-only hash-chained writer; the state line is the step commit."""

    def __init__(self, path: str | Path, run_id: str, prev_hash: str) -> None:
        self.path = Path(path)
        self.run_id = run_id
        self.prev_hash = prev_hash

    def append(self, step: int, kind: str, payload: dict[str, Any], timestamp: str) -> TraceLine:
        if kind not in COMPONENT_SLOTS:
            raise TraceError(f"unknown component kind {kind!r}")
        line = TraceLine(
            run_id=self.run_id,
            step=step,
            kind=kind,
            payload=payload,
            timestamp=timestamp,
            prev_hash=self.prev_hash,
        )
        data = line.serialize() + "\n"
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        self.prev_hash = line.hash()
        return line


def parse_trace_line(raw: str) -> TraceLine:
    data = json.loads(raw)
    missing = [name for name in TRACE_FIELDS if name not in data]
    if missing:
        raise TraceError(f"trace line missing fields {missing}")
    return TraceLine(
        run_id=data["run_id"],
        step=data["step"],
        kind=data["kind"],
        payload=data["payload"],
        timestamp=data["timestamp"],
        prev_hash=data["prev_hash"],
    )


def read_trace(path: str | Path) -> list[TraceLine]:
    """Strict read: any malformed line raises."""
    lines: list[TraceLine] = []
    with open(path, encoding="utf-8") as handle:
        for idx, raw in enumerate(handle):
            raw = raw.strip()
            if not raw:
                continue
            try:
                lines.append(parse_trace_line(raw))
            except (json.JSONDecodeError, TraceError) as exc:
                raise TraceError(f"malformed trace line {idx}: {exc}") from exc
    return lines


def read_trace_prefix(path: str | Path) -> list[TraceLine]:
    """Tolerant read for resume: longest valid prefix, partial tail dropped."""
    lines: list[TraceLine] = []
    if not Path(path).exists():
        return lines
    with open(path, encoding="utf-8") as handle:
        for raw in handle:
            stripped = raw.strip()
            if not stripped or not raw.endswith("\n"):
                break
            try:
                lines.append(parse_trace_line(stripped))
            except (json.JSONDecodeError, TraceError):
                break
    return lines


@dataclass
class VerifyResult:
    ok: bool
    steps: int
    first_bad_line: int | None = None
    message: str = ""


def verify_chain(lines: list[TraceLine], anchor: str) -> VerifyResult:
    """Check the hash chain; reports the first line whose link is broken."""
    prev = anchor
    for idx, line in enumerate(lines):
        if line.prev_hash != prev:
            return VerifyResult(
                ok=False,
                steps=_step_count(lines[:idx]),
                first_bad_line=idx,
                message=f"chain broken at line {idx} (step {line.step}, kind {line.kind})",
            )
        prev = line.hash()
    return VerifyResult(ok=True, steps=_step_count(lines))


def _step_count(lines: list[TraceLine]) -> int:
    return sum(1 for line in lines if line.kind == "state")


@dataclass
class StepRecord:
    """One committed loop iteration (all five components)."""

    step_index: int
    thought: str
    action_thought: str
    action_code: dict[str, Any]
    observation: dict[str, Any]
    state_snapshot_id: str
    wall_time: str
    prev_hash: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "step_index": self.step_index,
            "thought": self.thought,
            "action_thought": self.action_thought,
            "action_code": self.action_code,
            "observation": self.observation,
            "state_snapshot_id": self.state_snapshot_id,
            "wall_time": self.wall_time,
            "prev_hash": self.prev_hash,
        }


def assemble_steps(lines: list[TraceLine]) -> list[StepRecord]:
    """Group trace lines into StepRecords, enforcing commit order.

    Raises on out-of-order components or non-consecutive step indices;
    an incomplete trailing step is dropped (it never committed).
    """
    records: list[StepRecord] = []
    groups: list[list[TraceLine]] = []
    for line in lines:
        if line.kind == COMPONENT_SLOTS[0]:
            groups.append([line])
        else:
            if not groups:
                raise TraceError(f"component {line.kind!r} before any thought line")
            groups[-1].append(line)
    for group in groups:
        kinds = tuple(line.kind for line in group)
        if kinds != COMPONENT_SLOTS:
            if group is groups[-1]:
                continue  # uncommitted tail
            raise TraceError(f"step {group[0].step} has component order {kinds}")
        if len({line.step for line in group}) != 1:
            raise TraceError("mixed step indices inside one component group")
        by_kind = {line.kind: line for line in group}
        state_line = by_kind["state"]
        records.append(
            StepRecord(
                step_index=state_line.step,
                thought=by_kind["thought"].payload.get("text", ""),
                action_thought=by_kind["action_thought"].payload.get("text", ""),
                action_code=by_kind["action_code"].payload,
                observation=by_kind["observation"].payload,
                state_snapshot_id=state_line.payload.get("snapshot_id", ""),
                wall_time=state_line.timestamp,
                prev_hash=group[0].prev_hash,
            )
        )
    for expect, record in enumerate(records):
        if record.step_index != expect:
            raise TraceError(
                f"step indices not consecutive: expected {expect}, got {record.step_index}"
            )
    return records


@dataclass
class History:
    """Full interleaved history: query, initial state, then per-step components."""

    query: str
    initial_state_id: str
    records: list[StepRecord] = field(default_factory=list)

    def append(self, record: StepRecord) -> None:
        if record.step_index != len(self.records):
            raise TraceError(
                f"history append out of order: {record.step_index} != {len(self.records)}"
            )
        self.records.append(record)

    def interleaved(self) -> list[Any]:
        seq: list[Any] = [self.query, self.initial_state_id]
        for record in self.records:
            seq.extend(
                [
                    record.thought,
                    record.action_thought,
                    record.action_code,
                    record.observation,
                    record.state_snapshot_id,
                ]
            )
        return seq

    def serialized_size(self) -> int:
        return len(canonical_json(self.interleaved()))

    def tail(self, n: int) -> list[StepRecord]:
        return self.records[-n:] if n > 0 else []

    def __iter__(self) -> Iterator[StepRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)
