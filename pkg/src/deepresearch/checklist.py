"""Verifiable checklist: generation, clarification intents, critic refinement.

A checklist version is immutable; every refinement round produces a new
version with a lineage record, so any goal in the final checklist can be
traced back to the one it came from. The critic protocol is one decision
document per round: a verdict per item (approve, edit, split, merge,
waive) with payloads — the same schema serves the review UI and an
LLM-backed critic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any

from .ids import content_hash, short_id
from .outline import Outline, initial_outline
from .ports import PolicyPort

logger = logging.getLogger(__name__)

ITEM_STATUSES = (
    "draft",
    "needs-clarification",
    "verified",
    "in_progress",
    "satisfied",
    "waived",
)

INTENT_KINDS = ("refine-scope", "refine-definition", "refine-acceptance")

VERDICTS = ("approve", "edit", "split", "merge", "waive")

REVIEW_DECISION_SCHEMA = "review-decision@1"
REVIEW_DOCUMENT_SCHEMA = "review-document@1"


class ChecklistError(Exception):
    pass


class PolicyOutputError(ChecklistError):
    """Policy output could not be parsed after the allowed retry."""


class InvalidDecision(ChecklistError):
    """Critic decision violates the checklist contract."""


class MaxRoundsExceeded(ChecklistError):
    """Critic rounds exhausted without a fully verified checklist."""


@dataclass
class ChecklistItem:
    id: str
    goal: str
    inclusions: list[str] = field(default_factory=list)
    exclusions: list[str] = field(default_factory=list)
    acceptance_criteria: list[str] = field(default_factory=list)
    priority: int = 1
    depends_on: list[str] = field(default_factory=list)
    status: str = "draft"
    bound_nodes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "goal": self.goal,
            "inclusions": list(self.inclusions),
            "exclusions": list(self.exclusions),
            "acceptance_criteria": list(self.acceptance_criteria),
            "priority": self.priority,
            "depends_on": list(self.depends_on),
            "status": self.status,
            "bound_nodes": list(self.bound_nodes),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ChecklistItem":
        return cls(
            id=data["id"],
            goal=data["goal"],
            inclusions=list(data.get("inclusions", [])),
            exclusions=list(data.get("exclusions", [])),
            acceptance_criteria=list(data.get("acceptance_criteria", [])),
            priority=data.get("priority", 1),
            depends_on=list(data.get("depends_on", [])),
            status=data.get("status", "draft"),
            bound_nodes=list(data.get("bound_nodes", [])),
        )


@dataclass
class LineageEvent:
    round_index: int
    kind: str  # identity | edit | split | merge
    sources: list[str]
    targets: list[str]
    source_goals: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "round_index": self.round_index,
            "kind": self.kind,
            "sources": list(self.sources),
            "targets": list(self.targets),
            "source_goals": list(self.source_goals),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LineageEvent":
        return cls(
            round_index=data["round_index"],
            kind=data["kind"],
            sources=list(data["sources"]),
            targets=list(data["targets"]),
            source_goals=list(data["source_goals"]),
        )


@dataclass
class Checklist:
    query: str
    items: list[ChecklistItem]
    round_index: int = 0
    lineage: list[LineageEvent] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        ids = [item.id for item in self.items]
        if len(set(ids)) != len(ids):
            raise ChecklistError("duplicate item ids")
        priorities = [item.priority for item in self.items]
        if len(set(priorities)) != len(priorities):
            raise ChecklistError("item priorities must be unique")
        for item in self.items:
            if item.status not in ITEM_STATUSES:
                raise ChecklistError(f"unknown status {item.status!r}")
            if item.status == "verified" and not item.acceptance_criteria:
                raise ChecklistError(
                    f"item {item.id} is verified but has no acceptance criteria"
                )
        self._check_dag()

    def _check_dag(self) -> None:
        known = {item.id for item in self.items}
        graph = {
            item.id: [dep for dep in item.depends_on if dep in known]
            for item in self.items
        }
        state: dict[str, int] = {}

        def visit(node: str) -> None:
            if state.get(node) == 1:
                raise ChecklistError(f"dependency cycle through {node}")
            if state.get(node) == 2:
                return
            state[node] = 1
            for dep in graph[node]:
                visit(dep)
            state[node] = 2

        for node in graph:
            visit(node)

    @property
    def version_id(self) -> str:
        return "clv-" + content_hash(
            {
                "query": self.query,
                "round": self.round_index,
                "items": [item.to_dict() for item in self.items],
            }
        )[:12]

    def get(self, item_id: str) -> ChecklistItem:
        for item in self.items:
            if item.id == item_id:
                return item
        raise ChecklistError(f"unknown item {item_id}")

    def open_items(self) -> list[ChecklistItem]:
        """Items still to be researched, highest priority first."""
        active = [i for i in self.items if i.status in ("verified", "in_progress")]
        return sorted(active, key=lambda item: item.priority)

    def all_resolved(self) -> bool:
        return all(item.status in ("verified", "waived") for item in self.items)

    def all_closed(self) -> bool:
        return all(item.status in ("satisfied", "waived") for item in self.items)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version_id": self.version_id,
            "query": self.query,
            "round_index": self.round_index,
            "items": [item.to_dict() for item in self.items],
            "lineage": [event.to_dict() for event in self.lineage],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Checklist":
        return cls(
            query=data["query"],
            items=[ChecklistItem.from_dict(i) for i in data["items"]],
            round_index=data.get("round_index", 0),
            lineage=[LineageEvent.from_dict(e) for e in data.get("lineage", [])],
        )


@dataclass
class PlanIntent:
    item_id: str
    kind: str
    prompt_text: str
    resolution: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "kind": self.kind,
            "prompt_text": self.prompt_text,
            "resolution": self.resolution,
        }


@dataclass
class Verdict:
    item_id: str
    verdict: str
    payload: dict[str, Any] = field(default_factory=dict)


@dataclass
class ReviewDecision:
    """One critic round: a verdict for every item that needs one."""

    checklist_version: str
    verdicts: list[Verdict]
    schema: str = REVIEW_DECISION_SCHEMA

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": self.schema,
            "checklist_version": self.checklist_version,
            "verdicts": [
                {"item_id": v.item_id, "verdict": v.verdict, "payload": v.payload}
                for v in self.verdicts
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ReviewDecision":
        return cls(
            checklist_version=data["checklist_version"],
            verdicts=[
                Verdict(
                    item_id=v["item_id"],
                    verdict=v["verdict"],
                    payload=v.get("payload", {}),
                )
                for v in data.get("verdicts", [])
            ],
            schema=data.get("schema", REVIEW_DECISION_SCHEMA),
        )


def item_id_for(goal: str, index: int) -> str:
    return short_id("item", goal, index, length=10)


def _parse_items_json(text: str) -> list[dict[str, Any]]:
    data = json.loads(text)
    if isinstance(data, dict) and "items" in data:
        data = data["items"]
    if not isinstance(data, list):
        raise ValueError("expected a JSON list of items")
    for row in data:
        if not isinstance(row, dict) or not str(row.get("goal", "")).strip():
            raise ValueError("every item needs a non-empty goal")
    return data


def generate_checklist(query: str, policy: PolicyPort) -> tuple[Checklist, Outline]:
    """Build the initial checklist and outline from the query alone.

    No evidence is consulted at this stage. Items that arrive without
    acceptance criteria are flagged needs-clarification so a plan intent
    is raised for them downstream. Unparseable policy output is retried
    once, then aborts with a diagnostic.
    """
    from .providers import TEMPLATES, llm_complete

    if not query.strip():
        raise ChecklistError("query must be non-empty")
    template = TEMPLATES["checklist_generate"]
    bindings = {"query": query}
    last_error: Exception | None = None
    rows: list[dict[str, Any]] | None = None
    for attempt in range(2):
        text = llm_complete(template, bindings, policy)
        try:
            rows = _parse_items_json(text)
            break
        except (json.JSONDecodeError, ValueError) as exc:
            last_error = exc
            logger.warning("checklist output unparseable (attempt %d): %s", attempt + 1, exc)
    if rows is None:
        raise PolicyOutputError(f"checklist generation unparseable after retry: {last_error}")

    items: list[ChecklistItem] = []
    for index, row in enumerate(rows):
        criteria = [str(c) for c in row.get("acceptance_criteria", []) if str(c).strip()]
        status = "draft" if criteria else "needs-clarification"
        items.append(
            ChecklistItem(
                id=item_id_for(str(row["goal"]), index),
                goal=str(row["goal"]).strip(),
                inclusions=[str(x) for x in row.get("inclusions", [])],
                exclusions=[str(x) for x in row.get("exclusions", [])],
                acceptance_criteria=criteria,
                priority=int(row.get("priority", index + 1)),
                status=status,
            )
        )
    # Indices in depends_on refer to list positions in the policy output.
    for index, row in enumerate(rows):
        deps = row.get("depends_on", [])
        items[index].depends_on = [
            items[d].id for d in deps if isinstance(d, int) and 0 <= d < len(items)
        ]
    _reassign_priorities(items)
    checklist = Checklist(query=query, items=items, round_index=0)
    outline = initial_outline(query, [(item.id, item.goal) for item in items])
    return checklist, outline


def derive_plan_intents(query: str, checklist: Checklist, state=None) -> list[PlanIntent]:
    """One intent per needs-clarification item; verified items produce none.

    The intent kind follows a fixed missing-field table: no scope at all
    (neither inclusions nor exclusions) asks for scope; missing
    acceptance criteria asks for acceptance; anything else asks for a
    sharper definition.
    """
    intents = []
    for item in checklist.items:
        if item.status != "needs-clarification":
            continue
        if not item.inclusions and not item.exclusions:
            kind = "refine-scope"
        elif not item.acceptance_criteria:
            kind = "refine-acceptance"
        else:
            kind = "refine-definition"
        intents.append(
            PlanIntent(
                item_id=item.id,
                kind=kind,
                prompt_text=(
                    f"For the research question {query!r}, clarify the sub-goal "
                    f"{item.goal!r}: provide {kind.split('-', 1)[1]} details so the "
                    "item becomes independently checkable."
                ),
            )
        )
    return intents


def _reassign_priorities(items: list[ChecklistItem]) -> None:
    """Unique 1..n priorities preserving the given relative order."""
    ordered = sorted(items, key=lambda item: (item.priority, item.id))
    for rank, item in enumerate(ordered, start=1):
        item.priority = rank


def _dependency_consistent_order(items: list[ChecklistItem]) -> list[ChecklistItem]:
    """Topological order, stable by critic-assigned rank (dependency wins)."""
    import heapq

    by_id = {item.id: item for item in items}
    indegree = {item.id: 0 for item in items}
    dependents: dict[str, list[str]] = {item.id: [] for item in items}
    for item in items:
        for dep in item.depends_on:
            if dep in by_id:
                indegree[item.id] += 1
                dependents[dep].append(item.id)
    heap = [(item.priority, item.id) for item in items if indegree[item.id] == 0]
    heapq.heapify(heap)
    ordered = []
    while heap:
        _, item_id = heapq.heappop(heap)
        ordered.append(by_id[item_id])
        for nxt in dependents[item_id]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(heap, (by_id[nxt].priority, nxt))
    if len(ordered) != len(items):
        raise ChecklistError("dependency cycle after refinement")
    return ordered


def apply_decision(
    checklist: Checklist, decision: ReviewDecision, round_index: int
) -> Checklist:
    """Apply one round of verdicts, producing the next immutable version."""
    if decision.checklist_version != checklist.version_id:
        raise InvalidDecision(
            f"decision targets version {decision.checklist_version}, "
            f"current is {checklist.version_id}"
        )
    by_id = {item.id: item for item in checklist.items}
    verdict_map: dict[str, Verdict] = {}
    for verdict in decision.verdicts:
        if verdict.item_id not in by_id:
            raise InvalidDecision(f"verdict for unknown item {verdict.item_id}")
        if verdict.verdict not in VERDICTS:
            raise InvalidDecision(f"unknown verdict {verdict.verdict!r}")
        if verdict.item_id in verdict_map:
            raise InvalidDecision(f"duplicate verdict for {verdict.item_id}")
        verdict_map[verdict.item_id] = verdict

    absorbed: set[str] = set()
    for verdict in verdict_map.values():
        if verdict.verdict == "merge":
            for other in verdict.payload.get("with", []):
                if other not in by_id:
                    raise InvalidDecision(f"merge references unknown item {other}")
                if other in verdict_map:
                    raise InvalidDecision(
                        f"item {other} is absorbed by a merge and cannot carry its own verdict"
                    )
                absorbed.add(other)

    new_items: list[ChecklistItem] = []
    lineage: list[LineageEvent] = list(checklist.lineage)
    id_remap: dict[str, list[str]] = {}

    for item in checklist.items:
        if item.id in absorbed:
            continue
        verdict = verdict_map.get(item.id)
        if verdict is None:
            if item.status not in ("verified", "waived"):
                raise InvalidDecision(f"unresolved item {item.id} has no verdict")
            new_items.append(replace(item))
            id_remap[item.id] = [item.id]
        elif verdict.verdict == "approve":
            if not item.acceptance_criteria:
                raise InvalidDecision(
                    f"cannot approve {item.id}: acceptance criteria are empty"
                )
            new_item = replace(item, status="verified")
            new_items.append(new_item)
            id_remap[item.id] = [item.id]
            lineage.append(
                LineageEvent(round_index, "identity", [item.id], [item.id], [item.goal])
            )
        elif verdict.verdict == "waive":
            new_items.append(replace(item, status="waived"))
            id_remap[item.id] = [item.id]
            lineage.append(
                LineageEvent(round_index, "identity", [item.id], [item.id], [item.goal])
            )
        elif verdict.verdict == "edit":
            payload = verdict.payload
            edited = replace(
                item,
                goal=str(payload.get("goal", item.goal)),
                inclusions=list(payload.get("inclusions", item.inclusions)),
                exclusions=list(payload.get("exclusions", item.exclusions)),
                acceptance_criteria=list(
                    payload.get("acceptance_criteria", item.acceptance_criteria)
                ),
                priority=int(payload.get("priority", item.priority)),
            )
            edited.status = "verified" if edited.acceptance_criteria else "needs-clarification"
            new_items.append(edited)
            id_remap[item.id] = [item.id]
            lineage.append(
                LineageEvent(round_index, "edit", [item.id], [item.id], [item.goal])
            )
        elif verdict.verdict == "split":
            children_rows = verdict.payload.get("children", [])
            if len(children_rows) < 2:
                raise InvalidDecision(f"split of {item.id} needs >= 2 children")
            child_items = []
            for child_index, row in enumerate(children_rows):
                goal = str(row.get("goal", "")).strip()
                if not goal:
                    raise InvalidDecision("split child needs a goal")
                criteria = list(row.get("acceptance_criteria", []))
                child_items.append(
                    ChecklistItem(
                        id=short_id("item", item.id, round_index, goal, child_index, length=10),
                        goal=goal,
                        inclusions=list(row.get("inclusions", item.inclusions)),
                        exclusions=list(row.get("exclusions", item.exclusions)),
                        acceptance_criteria=criteria,
                        priority=int(row.get("priority", item.priority)),
                        depends_on=list(item.depends_on),
                        status="verified" if criteria else "needs-clarification",
                    )
                )
            new_items.extend(child_items)
            id_remap[item.id] = [child.id for child in child_items]
            lineage.append(
                LineageEvent(
                    round_index,
                    "split",
                    [item.id],
                    [child.id for child in child_items],
                    [item.goal],
                )
            )
        elif verdict.verdict == "merge":
            group_ids = [item.id] + list(verdict.payload.get("with", []))
            group = [by_id[i] for i in group_ids]
            merged_row = verdict.payload.get("merged", {})
            goal = str(merged_row.get("goal", " / ".join(g.goal for g in group)))
            criteria = list(
                merged_row.get(
                    "acceptance_criteria",
                    [c for member in group for c in member.acceptance_criteria],
                )
            )
            deps = sorted(
                {dep for member in group for dep in member.depends_on} - set(group_ids)
            )
            merged = ChecklistItem(
                id=short_id("item", *group_ids, round_index, length=10),
                goal=goal,
                inclusions=list(
                    merged_row.get(
                        "inclusions", [x for member in group for x in member.inclusions]
                    )
                ),
                exclusions=list(
                    merged_row.get(
                        "exclusions", [x for member in group for x in member.exclusions]
                    )
                ),
                acceptance_criteria=criteria,
                priority=int(merged_row.get("priority", min(g.priority for g in group))),
                depends_on=deps,
                status="verified" if criteria else "needs-clarification",
            )
            new_items.append(merged)
            for member in group:
                id_remap[member.id] = [merged.id]
            lineage.append(
                LineageEvent(
                    round_index,
                    "merge",
                    group_ids,
                    [merged.id],
                    [member.goal for member in group],
                )
            )

    # Remap dependencies through splits and merges.
    for item in new_items:
        remapped: list[str] = []
        for dep in item.depends_on:
            for target in id_remap.get(dep, [dep]):
                if target != item.id and target not in remapped:
                    remapped.append(target)
        item.depends_on = remapped

    _reassign_priorities(new_items)
    ordered = _dependency_consistent_order(new_items)
    for rank, item in enumerate(ordered, start=1):
        item.priority = rank
    ordered_by_priority = sorted(new_items, key=lambda item: item.priority)
    return Checklist(
        query=checklist.query,
        items=ordered_by_priority,
        round_index=round_index,
        lineage=lineage,
    )


def critic_refine(
    checklist: Checklist,
    intents: list[PlanIntent],
    critic,
    max_rounds: int = 3,
) -> Checklist:
    """Run critic rounds until every item is verified or waived.

    Each round the critic sees the current version plus the open
    clarification intents and answers with one decision document.
    Exceeding ``max_rounds`` aborts the run with a diagnostic.
    """
    current = checklist
    current_intents = intents
    for round_index in range(1, max_rounds + 1):
        decision = critic.review(current, current_intents, round_index)
        current = apply_decision(current, decision, round_index)
        if current.all_resolved():
            return current
        current_intents = derive_plan_intents(current.query, current)
    raise MaxRoundsExceeded(
        f"checklist not fully verified after {max_rounds} critic rounds"
    )


def auto_resolve(checklist: Checklist) -> Checklist:
    """critic_mode=none path: verify items with criteria, waive the rest."""
    items = []
    lineage = list(checklist.lineage)
    for item in checklist.items:
        status = "verified" if item.acceptance_criteria else "waived"
        items.append(replace(item, status=status))
        lineage.append(LineageEvent(1, "identity", [item.id], [item.id], [item.goal]))
    ordered = _dependency_consistent_order(items)
    for rank, item in enumerate(ordered, start=1):
        item.priority = rank
    return Checklist(
        query=checklist.query,
        items=sorted(items, key=lambda item: item.priority),
        round_index=1,
        lineage=lineage,
    )


def bind_items(checklist: Checklist, outline: Outline) -> Checklist:
    """Mirror outline bindings back onto the items (bound_nodes)."""
    node_map: dict[str, list[str]] = {}
    for node in outline.nodes:
        for item_id in node.bound_items:
            node_map.setdefault(item_id, []).append(node.id)
    items = [
        replace(item, bound_nodes=sorted(node_map.get(item.id, [])))
        for item in checklist.items
    ]
    return Checklist(
        query=checklist.query,
        items=items,
        round_index=checklist.round_index,
        lineage=list(checklist.lineage),
    )


def review_document(
    checklist: Checklist, intents: list[PlanIntent], run_id: str, phase: str
) -> dict[str, Any]:
    """The exact payload served to the review UI and accepted back."""
    return {
        "schema": REVIEW_DOCUMENT_SCHEMA,
        "run_id": run_id,
        "phase": phase,
        "checklist_version": checklist.version_id,
        "round_index": checklist.round_index,
        "query": checklist.query,
        "items": [item.to_dict() for item in checklist.items],
        "intents": [intent.to_dict() for intent in intents],
        "verdict_slots": [
            {"item_id": item.id, "verdict": None, "payload": {}}
            for item in checklist.items
        ],
        "lineage": [event.to_dict() for event in checklist.lineage],
    }
