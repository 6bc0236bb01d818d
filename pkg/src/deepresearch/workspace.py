"""Bounded per-step workspace (Markovian context reconstruction).

Instead of feeding the policy the full interaction history, every step
rebuilds a compact workspace from the question, the open subgoals, an
evidence slice relevant to those subgoals, and short digests of the
previous action and observation. The rendered text is guaranteed to fit
the character budget: sections are shed in a fixed order (memory lines,
pending tasks, digest caps, subgoal lines) until it does.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from .ids import canonical_json
from .state import AgentState

ELLIPSIS = "…"

SUBGOAL_LINE_RE = re.compile(
    r"^- \[(item|node):([\w-]+)\] (.+) \(evidence (\d+)/(\d+)\)$"
)
TASK_LINE_RE = re.compile(r"^- \[task:([\w-]+)\] (.+)$")

MEMORY_SUMMARY_CHARS = 240
MEMORY_PER_SUBGOAL = 2
HARD_DIGEST_FLOOR = 100


class BudgetTooSmall(ValueError):
    """The budget cannot even hold the question plus the skeleton."""


def truncate_tail(text: str, limit: int) -> str:
    if limit <= 0:
        return ""
    if len(text) <= limit:
        return text
    return text[: limit - 1] + ELLIPSIS


@dataclass
class Subgoal:
    kind: str  # item | node
    ref_id: str
    title: str
    have: int
    need: int

    def line(self) -> str:
        return f"- [{self.kind}:{self.ref_id}] {self.title} (evidence {self.have}/{self.need})"


@dataclass
class Workspace:
    query: str
    active_subgoals: list[Subgoal] = field(default_factory=list)
    pending_tasks: list[tuple[str, str]] = field(default_factory=list)
    memory_slice: list[tuple[str, str]] = field(default_factory=list)
    last_action_digest: str = "(none)"
    last_observation_digest: str = "(none)"
    char_budget: int = 32_000

    def render(self) -> str:
        lines = ["# Question", self.query, "", "# Active subgoals"]
        lines.extend(goal.line() for goal in self.active_subgoals)
        lines.append("")
        lines.append("# Pending searches")
        lines.extend(f"- [task:{tid}] {query}" for tid, query in self.pending_tasks)
        lines.append("")
        lines.append("# Memory")
        lines.extend(f"- [{ev_id}] {text}" for ev_id, text in self.memory_slice)
        lines.append("")
        lines.append("# Last action")
        lines.append(self.last_action_digest)
        lines.append("")
        lines.append("# Last observation")
        lines.append(self.last_observation_digest)
        return "\n".join(lines)

    @property
    def size(self) -> int:
        return len(self.render())


def _skeleton_size(query: str) -> int:
    return Workspace(query=query, char_budget=0).size


def reconstruct_workspace(
    query: str,
    prev_state: AgentState | None,
    prev_action: dict[str, Any] | None,
    prev_observation: dict[str, Any] | None,
    budget: int,
    *,
    subgoals: list[Subgoal],
    evidence_for: dict[str, list[tuple[str, str]]],
    max_active: int = 8,
    digest_max_chars: int = 400,
) -> Workspace:
    """Build the bounded workspace for the next step.

    ``subgoals`` are the open goals in priority order (the engine derives
    them from the checklist overlay or, without a checklist, from outline
    leaves). ``evidence_for`` maps a subgoal ref to its top evidence
    summaries; only those slices enter the memory section.
    """
    if budget < _skeleton_size(query):
        raise BudgetTooSmall(
            f"budget {budget} below minimum workspace size {_skeleton_size(query)}"
        )

    active = subgoals[:max_active]
    memory: list[tuple[str, str]] = []
    for goal in active:
        for ev_id, text in evidence_for.get(goal.ref_id, [])[:MEMORY_PER_SUBGOAL]:
            memory.append((ev_id, truncate_tail(" ".join(text.split()), MEMORY_SUMMARY_CHARS)))

    pending = []
    if prev_state is not None:
        pending = [(task.id, task.query_text) for task in prev_state.search_tasks]

    action_digest = "(none)"
    if prev_action is not None:
        action_digest = truncate_tail(canonical_json(prev_action), digest_max_chars)
    observation_digest = "(none)"
    if prev_observation is not None:
        observation_digest = truncate_tail(
            str(prev_observation.get("digest", "")) or canonical_json(prev_observation),
            digest_max_chars,
        )

    workspace = Workspace(
        query=query,
        active_subgoals=list(active),
        pending_tasks=pending,
        memory_slice=memory,
        last_action_digest=action_digest,
        last_observation_digest=observation_digest,
        char_budget=budget,
    )

    # Shedding cascade: drop detail until the render fits the budget.
    while workspace.size > budget and workspace.memory_slice:
        workspace.memory_slice.pop()
    while workspace.size > budget and workspace.pending_tasks:
        workspace.pending_tasks.pop()
    if workspace.size > budget:
        workspace.last_action_digest = truncate_tail(
            workspace.last_action_digest, HARD_DIGEST_FLOOR
        )
        workspace.last_observation_digest = truncate_tail(
            workspace.last_observation_digest, HARD_DIGEST_FLOOR
        )
    while workspace.size > budget and workspace.active_subgoals:
        workspace.active_subgoals.pop()
    if workspace.size > budget:
        raise BudgetTooSmall(
            f"cannot fit workspace into {budget} chars (needs {workspace.size})"
        )
    return workspace
