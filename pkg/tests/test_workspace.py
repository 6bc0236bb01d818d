from __future__ import annotations

import pytest

from deepresearch.ids import canonical_json
from deepresearch.state import initial_state
from deepresearch.workspace import (
    SUBGOAL_LINE_RE,
    TASK_LINE_RE,
    BudgetTooSmall,
    Subgoal,
    Workspace,
    reconstruct_workspace,
    truncate_tail,
)


def subgoals(n: int) -> list[Subgoal]:
    return [Subgoal("item", f"item-{i:02d}", f"research topic {i}", 0, 1) for i in range(n)]


def evidence(n: int, per: int = 3) -> dict[str, list[tuple[str, str]]]:
    return {
        f"item-{i:02d}": [(f"ev-{i}{j}", f"summary {i}.{j} " + "detail " * 30) for j in range(per)]
        for i in range(n)
    }


def test_t0_workspace_is_query_plus_subgoals_only():
    state = initial_state("the question", "clv", "snap", 1)
    ws = reconstruct_workspace(
        "the question", state, None, None, 4000,
        subgoals=subgoals(3), evidence_for={},
    )
    assert ws.memory_slice == []
    assert ws.pending_tasks == []
    assert ws.last_action_digest == "(none)"
    assert ws.last_observation_digest == "(none)"
    text = ws.render()
    assert text.startswith("# Question\nthe question")
    assert len([l for l in text.splitlines() if SUBGOAL_LINE_RE.match(l)]) == 3


def test_render_is_parseable_by_line_format():
    ws = Workspace(
        query="q",
        active_subgoals=subgoals(2),
        pending_tasks=[("task-ab12", "find topic 0")],
        memory_slice=[("ev-1", "some summary")],
    )
    lines = ws.render().splitlines()
    assert sum(1 for l in lines if SUBGOAL_LINE_RE.match(l)) == 2
    matches = [TASK_LINE_RE.match(l) for l in lines if TASK_LINE_RE.match(l)]
    assert matches[0].group(1) == "task-ab12"
    assert matches[0].group(2) == "find topic 0"


def test_budget_enforced_by_dropping_memory_first():
    state = initial_state("q", "clv", "snap", 1)
    full = reconstruct_workspace(
        "q", state, {"tool": "plan"}, {"digest": "x" * 300}, 50_000,
        subgoals=subgoals(4), evidence_for=evidence(4),
    )
    tight_budget = full.size - 50
    tight = reconstruct_workspace(
        "q", state, {"tool": "plan"}, {"digest": "x" * 300}, tight_budget,
        subgoals=subgoals(4), evidence_for=evidence(4),
    )
    assert tight.size <= tight_budget
    assert len(tight.memory_slice) < len(full.memory_slice)
    assert len(tight.active_subgoals) == len(full.active_subgoals)


def test_budget_too_small_rejected():
    state = initial_state("q" * 600, "clv", "snap", 1)
    with pytest.raises(BudgetTooSmall):
        reconstruct_workspace(
            "q" * 600, state, None, None, 128, subgoals=[], evidence_for={}
        )


def test_max_active_truncation():
    state = initial_state("q", "clv", "snap", 1)
    ws = reconstruct_workspace(
        "q", state, None, None, 8000,
        subgoals=subgoals(12), evidence_for={}, max_active=8,
    )
    assert len(ws.active_subgoals) == 8
    # highest-priority (first) goals kept
    assert ws.active_subgoals[0].ref_id == "item-00"


def test_memory_slice_only_from_active_subgoal_nodes():
    state = initial_state("q", "clv", "snap", 1)
    ev = evidence(2)
    ev["item-99"] = [("ev-x", "should never appear")]
    ws = reconstruct_workspace(
        "q", state, None, None, 8000, subgoals=subgoals(2), evidence_for=ev,
    )
    ids = {ev_id for ev_id, _ in ws.memory_slice}
    assert "ev-x" not in ids
    assert ids <= {"ev-00", "ev-01", "ev-10", "ev-11"}


def test_digests_truncated_tail_first_with_ellipsis():
    state = initial_state("q", "clv", "snap", 1)
    action = {"tool": "search", "parameters": {"blob": "y" * 2000}}
    ws = reconstruct_workspace(
        "q", state, action, {"digest": "z" * 2000}, 8000,
        subgoals=[], evidence_for={}, digest_max_chars=120,
    )
    assert len(ws.last_action_digest) == 120
    assert ws.last_action_digest.endswith("…")
    assert ws.last_action_digest.startswith(canonical_json(action)[:50])
    assert len(ws.last_observation_digest) == 120
    assert ws.last_observation_digest.endswith("…")


def test_truncate_tail_basics():
    assert truncate_tail("abcdef", 10) == "abcdef"
    assert truncate_tail("abcdef", 4) == "abc…"
    assert truncate_tail("abcdef", 0) == ""


def test_size_always_within_budget_across_scales():
    state = initial_state("q", "clv", "snap", 1)
    for budget in (600, 1200, 2400, 9600):
        ws = reconstruct_workspace(
            "q", state, {"tool": "plan"}, {"digest": "d" * 5000}, budget,
            subgoals=subgoals(8), evidence_for=evidence(8, per=4),
        )
        assert ws.size <= budget
