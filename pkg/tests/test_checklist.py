from __future__ import annotations

import json
import random

import pytest

from deepresearch.checklist import (
    Checklist,
    ChecklistError,
    ChecklistItem,
    InvalidDecision,
    MaxRoundsExceeded,
    PolicyOutputError,
    ReviewDecision,
    Verdict,
    apply_decision,
    auto_resolve,
    bind_items,
    critic_refine,
    derive_plan_intents,
    generate_checklist,
)
from deepresearch.mocks import FixtureEnvironment, LLMCritic, Scenario, ScriptedPolicy
from deepresearch.outline import compile_outline


class StubPolicy:
    """Returns queued texts, then repeats the last one."""

    def __init__(self, *texts: str) -> None:
        self.texts = list(texts)
        self.calls = 0

    def complete(self, template, bindings):
        self.calls += 1
        if len(self.texts) > 1:
            return self.texts.pop(0)
        return self.texts[0]


class StubCritic:
    def __init__(self, *decisions: ReviewDecision) -> None:
        self.decisions = list(decisions)

    def review(self, checklist, intents, round_index):
        return self.decisions.pop(0)


def items_json(rows) -> str:
    return json.dumps(rows)


def make_item(idx: int, goal: str = "", **kw) -> ChecklistItem:
    defaults = dict(
        id=f"item-{idx:02d}",
        goal=goal or f"goal {idx}",
        acceptance_criteria=[f"criterion {idx}"],
        priority=idx + 1,
        status="draft",
    )
    defaults.update(kw)
    return ChecklistItem(**defaults)


# ---------------------------------------------------------------------------
# generate_checklist


def test_generate_single_fully_specified_item():
    policy = StubPolicy(items_json([
        {"goal": "Measure latency", "acceptance_criteria": ["p99 under 100ms cited"]},
    ]))
    checklist, outline = generate_checklist("How fast is it?", policy)
    assert len(checklist.items) == 1
    assert checklist.items[0].status == "draft"  # verified-ready, pre-critic
    assert checklist.items[0].acceptance_criteria
    assert len(outline.nodes) == 2  # root + one node


def test_generate_flags_missing_criteria():
    policy = StubPolicy(items_json([
        {"goal": "Vague goal", "acceptance_criteria": []},
        {"goal": "Sharp goal", "acceptance_criteria": ["has a number"]},
    ]))
    checklist, _ = generate_checklist("q", policy)
    statuses = [item.status for item in checklist.items]
    assert statuses == ["needs-clarification", "draft"]


def test_generate_retries_once_then_aborts():
    policy = StubPolicy("not json at all", "also { broken")
    with pytest.raises(PolicyOutputError):
        generate_checklist("q", policy)
    assert policy.calls == 2


def test_generate_recovers_on_retry():
    policy = StubPolicy("garbage", items_json([{"goal": "ok", "acceptance_criteria": ["x"]}]))
    checklist, _ = generate_checklist("q", policy)
    assert len(checklist.items) == 1


def test_generate_rejects_empty_query():
    with pytest.raises(ChecklistError):
        generate_checklist("  ", StubPolicy("[]"))


def test_generate_demo_covers_six_dimensions(demo_fixtures):
    scenario = Scenario.load(demo_fixtures)
    checklist, outline = generate_checklist(
        scenario.default_query, ScriptedPolicy(scenario)
    )
    goals = " ".join(item.goal.lower() for item in checklist.items)
    for dimension in ("economic", "strategic", "legal", "market", "social", "technical"):
        assert dimension in goals
    assert len(checklist.items) == 6
    assert len(outline.nodes) == 7


# ---------------------------------------------------------------------------
# derive_plan_intents


def test_no_intents_when_all_ready():
    checklist = Checklist(query="q", items=[make_item(0), make_item(1)])
    assert derive_plan_intents("q", checklist) == []


def test_intents_bijection_with_flagged_items():
    items = [
        make_item(0),
        make_item(1, acceptance_criteria=[], status="needs-clarification"),
        make_item(2),
        make_item(3, acceptance_criteria=[], status="needs-clarification"),
        make_item(4),
    ]
    checklist = Checklist(query="q", items=items)
    intents = derive_plan_intents("q", checklist)
    assert sorted(i.item_id for i in intents) == ["item-01", "item-03"]


def test_intent_kind_rule_table():
    # Oracle: the missing-field table that defines intent kinds.
    def oracle(item: ChecklistItem) -> str:
        if not item.inclusions and not item.exclusions:
            return "refine-scope"
        if not item.acceptance_criteria:
            return "refine-acceptance"
        return "refine-definition"

    cases = [
        make_item(0, goal="analyze impact", acceptance_criteria=[],
                  status="needs-clarification"),
        make_item(1, acceptance_criteria=[], inclusions=["x"],
                  status="needs-clarification"),
        make_item(2, acceptance_criteria=["c"], inclusions=["x"], exclusions=["y"],
                  status="needs-clarification"),
    ]
    checklist = Checklist(query="q", items=cases)
    intents = {i.item_id: i for i in derive_plan_intents("q", checklist)}
    for item in cases:
        assert intents[item.id].kind == oracle(item)
    # scope intent embeds the item goal
    assert "analyze impact" in intents["item-00"].prompt_text


# ---------------------------------------------------------------------------
# apply_decision / critic_refine


def approve_all(checklist: Checklist) -> ReviewDecision:
    return ReviewDecision(
        checklist_version=checklist.version_id,
        verdicts=[Verdict(item.id, "approve") for item in checklist.items],
    )


def test_approve_all_idempotent_up_to_status():
    checklist = Checklist(query="q", items=[make_item(0), make_item(1), make_item(2)])
    refined = apply_decision(checklist, approve_all(checklist), 1)
    assert all(item.status == "verified" for item in refined.items)
    for before, after in zip(checklist.items, refined.items):
        assert before.id == after.id
        assert before.goal == after.goal
        assert before.priority == after.priority
        assert before.acceptance_criteria == after.acceptance_criteria


def test_split_produces_lineage_and_removes_parent():
    checklist = Checklist(query="q", items=[make_item(0), make_item(1)])
    decision = ReviewDecision(
        checklist_version=checklist.version_id,
        verdicts=[
            Verdict("item-00", "split", {"children": [
                {"goal": "part A", "acceptance_criteria": ["a"]},
                {"goal": "part B", "acceptance_criteria": ["b"]},
            ]}),
            Verdict("item-01", "approve"),
        ],
    )
    refined = apply_decision(checklist, decision, 1)
    goals = {item.goal for item in refined.items}
    assert goals == {"part A", "part B", "goal 1"}
    assert all("item-00" != item.id for item in refined.items)
    split_events = [e for e in refined.lineage if e.kind == "split"]
    assert len(split_events) == 1
    assert split_events[0].sources == ["item-00"]
    assert len(split_events[0].targets) == 2
    assert split_events[0].source_goals == ["goal 0"]


def test_merge_produces_single_item_with_union_criteria():
    checklist = Checklist(query="q", items=[make_item(0), make_item(1), make_item(2)])
    decision = ReviewDecision(
        checklist_version=checklist.version_id,
        verdicts=[
            Verdict("item-00", "merge", {"with": ["item-01"]}),
            Verdict("item-02", "approve"),
        ],
    )
    refined = apply_decision(checklist, decision, 1)
    assert len(refined.items) == 2
    merged = [i for i in refined.items if i.id != "item-02"][0]
    assert set(merged.acceptance_criteria) == {"criterion 0", "criterion 1"}
    merge_events = [e for e in refined.lineage if e.kind == "merge"]
    assert merge_events[0].sources == ["item-00", "item-01"]


def test_dependency_wins_over_critic_rank():
    # B depends on A but the critic ranks B first; dependency must win.
    a = make_item(0, goal="A")
    b = make_item(1, goal="B", depends_on=["item-00"])
    checklist = Checklist(query="q", items=[a, b])
    decision = ReviewDecision(
        checklist_version=checklist.version_id,
        verdicts=[
            Verdict("item-00", "edit", {"priority": 2}),
            Verdict("item-01", "edit", {"priority": 1}),
        ],
    )
    refined = apply_decision(checklist, decision, 1)
    by_id = {item.id: item for item in refined.items}
    assert by_id["item-00"].priority < by_id["item-01"].priority


def test_lineage_conserves_goals_through_rounds():
    rng = random.Random(11)
    items = [make_item(i) for i in range(6)]
    checklist = Checklist(query="q", items=items)
    original_goals = {item.goal for item in checklist.items}
    verdicts = []
    for item in checklist.items:
        roll = rng.random()
        if roll < 0.3:
            verdicts.append(Verdict(item.id, "split", {"children": [
                {"goal": f"{item.goal} / left", "acceptance_criteria": ["l"]},
                {"goal": f"{item.goal} / right", "acceptance_criteria": ["r"]},
            ]}))
        elif roll < 0.4:
            verdicts.append(Verdict(item.id, "waive"))
        else:
            verdicts.append(Verdict(item.id, "approve"))
    refined = apply_decision(
        checklist, ReviewDecision(checklist.version_id, verdicts), 1
    )
    recovered = {goal for event in refined.lineage for goal in event.source_goals}
    assert original_goals <= recovered


def test_approve_without_criteria_rejected():
    item = make_item(0, acceptance_criteria=[], status="needs-clarification")
    checklist = Checklist(query="q", items=[item])
    decision = ReviewDecision(checklist.version_id, [Verdict("item-00", "approve")])
    with pytest.raises(InvalidDecision):
        apply_decision(checklist, decision, 1)


def test_decision_against_stale_version_rejected():
    checklist = Checklist(query="q", items=[make_item(0)])
    decision = ReviewDecision("clv-deadbeef", [Verdict("item-00", "approve")])
    with pytest.raises(InvalidDecision):
        apply_decision(checklist, decision, 1)


def test_critic_refine_iterates_until_verified():
    flagged = make_item(0, acceptance_criteria=[], status="needs-clarification")
    ready = make_item(1)
    checklist = Checklist(query="q", items=[flagged, ready])
    round1 = ReviewDecision(checklist.version_id, [
        Verdict("item-00", "edit", {"acceptance_criteria": ["added"]}),
        Verdict("item-01", "approve"),
    ])
    refined = critic_refine(checklist, derive_plan_intents("q", checklist),
                            StubCritic(round1), max_rounds=3)
    assert refined.all_resolved()
    assert refined.get("item-00").acceptance_criteria == ["added"]


def test_critic_refine_max_rounds_exceeded():
    flagged = make_item(0, acceptance_criteria=[], status="needs-clarification")
    checklist = Checklist(query="q", items=[flagged])

    class UnhelpfulCritic:
        def review(self, checklist, intents, round_index):
            # keeps editing without ever adding criteria
            return ReviewDecision(checklist.version_id, [
                Verdict(checklist.items[0].id, "edit", {"goal": f"retry {round_index}"}),
            ])

    with pytest.raises(MaxRoundsExceeded):
        critic_refine(checklist, [], UnhelpfulCritic(), max_rounds=2)


def test_llm_critic_scripted_round(demo_fixtures):
    scenario = Scenario.load(demo_fixtures)
    policy = ScriptedPolicy(scenario)
    checklist, _ = generate_checklist(scenario.default_query, policy)
    intents = derive_plan_intents(scenario.default_query, checklist)
    refined = critic_refine(checklist, intents, LLMCritic(policy), max_rounds=3)
    assert refined.all_resolved()
    assert all(item.status == "verified" for item in refined.items)


def test_auto_resolve_waives_unclarified():
    items = [make_item(0), make_item(1, acceptance_criteria=[],
                                     status="needs-clarification")]
    resolved = auto_resolve(Checklist(query="q", items=items))
    statuses = {item.id: item.status for item in resolved.items}
    assert statuses == {"item-00": "verified", "item-01": "waived"}


def test_checklist_invariants_enforced():
    with pytest.raises(ChecklistError, match="unique"):
        Checklist(query="q", items=[make_item(0, priority=1), make_item(1, priority=1)])
    a = make_item(0, depends_on=["item-01"])
    b = make_item(1, depends_on=["item-00"])
    with pytest.raises(ChecklistError, match="cycle"):
        Checklist(query="q", items=[a, b])
    with pytest.raises(ChecklistError, match="acceptance"):
        Checklist(query="q", items=[make_item(0, acceptance_criteria=[], status="verified")])


def test_bind_items_mirrors_outline():
    items = [make_item(i, status="verified") for i in range(3)]
    checklist = Checklist(query="q", items=items)
    outline = compile_outline(checklist)
    bound = bind_items(checklist, outline)
    for item in bound.items:
        assert len(item.bound_nodes) == 1
        node = outline.get(item.bound_nodes[0])
        assert item.id in node.bound_items
