from __future__ import annotations

import random

import pytest

from deepresearch.checklist import Checklist, ChecklistItem, bind_items
from deepresearch.config import RankWeights
from deepresearch.evidence import GAP_MARKER, EvidenceStore, EvidenceUnit
from deepresearch.ids import sha256_hex
from deepresearch.outline import compile_outline
from deepresearch.report import (
    AuditBundle,
    CitationSet,
    HEDGE_MARKER,
    Report,
    VizSpec,
    claim_category,
    draft,
    extract_evidence,
    lint_report_markdown,
    parse_report,
    render_report,
    write,
)


class ProsePolicy:
    def complete(self, template, bindings):
        assert template.name == "section_prose"
        return f"Lead for {bindings['title']}."


def make_store(tmp_path, bindings: dict[str, list[str]]) -> EvidenceStore:
    """bindings: node id -> list of summary bodies."""
    store = EvidenceStore(tmp_path / "store")
    units = []
    for node_id, bodies in bindings.items():
        for i, body in enumerate(bodies):
            units.append(
                EvidenceUnit(
                    id=f"ev-{sha256_hex(body)[:16]}",
                    source=f"https://example.org/{node_id}/{i}",
                    timestamp="2024-05-01T00:00:00+00:00",
                    confidence=0.8,
                    summary=f"{body} [https://example.org/{node_id}/{i}]",
                    excerpt=body,
                    bound_nodes=[node_id],
                )
            )
    store.add(units)
    return store


def checklist_and_outline(goals_and_criteria):
    items = [
        ChecklistItem(
            id=f"item-{i:02d}",
            goal=goal,
            acceptance_criteria=criteria,
            priority=i + 1,
            status="verified",
        )
        for i, (goal, criteria) in enumerate(goals_and_criteria)
    ]
    checklist = Checklist(query="q", items=items)
    outline = compile_outline(checklist)
    return bind_items(checklist, outline), outline


def test_draft_one_evidenced_leaf_yields_claims(tmp_path):
    checklist, outline = checklist_and_outline([
        ("alpha topic findings", ["criterion"]),
    ])
    leaf = outline.leaves()[0]
    store = make_store(tmp_path, {leaf.id: ["Alpha topic findings grew 12% this year."]})
    sections, citations = draft(outline, checklist, store, ProsePolicy())
    assert len(sections) == 1
    claims = sections[0].claims()
    assert len(claims) == 1
    assert claims[0].evidence_ids
    assert citations.entries
    assert not sections[0].gap


def test_draft_cost_criteria_yield_cost_category(tmp_path):
    checklist, outline = checklist_and_outline([
        ("budget area", ["Quantifies costs for two stakeholder groups"]),
    ])
    leaf = outline.leaves()[0]
    store = make_store(tmp_path, {leaf.id: ["Budget area costs rose 4% overall."]})
    sections, _ = draft(outline, checklist, store, ProsePolicy())
    assert sections[0].claims()[0].category == "cost"


def test_claim_category_rule_table():
    # oracle == the rule table itself
    assert claim_category(["mentions costs explicitly"]) == "cost"
    assert claim_category(["regulation and compliance"]) == "legal"
    assert claim_category(["no keywords here whatsoever"]) == "general"
    assert claim_category([]) == "general"
    # first-category-wins ordering
    assert claim_category(["costs and legal exposure"]) == "cost"


def test_draft_empty_store_all_gap_markers(tmp_path):
    checklist, outline = checklist_and_outline([
        ("alpha", ["c1"]), ("beta", ["c2"]),
    ])
    store = EvidenceStore(tmp_path / "store")
    sections, citations = draft(outline, checklist, store, ProsePolicy())
    assert all(section.gap for section in sections)
    assert all(section.passages[0].text == GAP_MARKER for section in sections)
    assert citations.entries == []


def test_viz_spec_requires_three_numeric_rows(tmp_path):
    checklist, outline = checklist_and_outline([("metrics topic", ["c"])])
    leaf = outline.leaves()[0]
    store = make_store(tmp_path, {leaf.id: [
        "Metrics topic grew 10% in March.",
        "Metrics topic added 2 million users.",
        "Metrics topic spend hit 5 billion.",
    ]})
    sections, _ = draft(outline, checklist, store, ProsePolicy())
    specs = sections[0].visualization_specs
    assert len(specs) == 1
    assert specs[0].kind == "table"
    assert len(specs[0].data) == 3
    assert all(row["evidence_ids"] for row in specs[0].data)


def test_viz_spec_rejects_unevidenced_rows():
    with pytest.raises(Exception, match="evidence"):
        VizSpec(kind="table", node_id="n", data=[{"label": "x", "value": 1, "evidence_ids": []}],
                evidence_ids=[], caption="c")


# ---------------------------------------------------------------------------
# extract_evidence


def test_supported_claim_not_flagged(tmp_path):
    checklist, outline = checklist_and_outline([("alpha growth metrics", ["c"])])
    leaf = outline.leaves()[0]
    store = make_store(tmp_path, {leaf.id: ["Alpha growth metrics doubled."]})
    sections, citations = draft(outline, checklist, store, ProsePolicy())
    bundle = extract_evidence(sections, [], citations, store, audit_threshold=0.2)
    assert len(bundle.rows) == 1
    assert not bundle.rows[0].unsupported
    assert bundle.rows[0].selected


def test_claim_with_zero_candidates_flagged(tmp_path):
    store = EvidenceStore(tmp_path / "store")
    from deepresearch.report import Claim, DraftSection, Passage

    section = DraftSection(
        node_id="n1",
        title="t",
        passages=[Passage("orphan claim", Claim("claim-x", "orphan claim", "general", []))],
        candidate_citations=[],
    )
    bundle = extract_evidence([section], [], CitationSet(), store)
    assert bundle.rows[0].unsupported
    assert bundle.rows[0].selected is None


def test_audit_selection_matches_argmax_oracle(tmp_path):
    from deepresearch.evidence import rank_critic

    rng = random.Random(31)
    vocab = "alpha beta growth market cost users data".split()
    checklist, outline = checklist_and_outline([("alpha beta growth", ["c"])])
    leaf = outline.leaves()[0]
    bodies = [
        " ".join(rng.choice(vocab) for _ in range(8)) + f" row{i}."
        for i in range(20)
    ]
    store = make_store(tmp_path, {leaf.id: bodies})
    sections, citations = draft(outline, checklist, store, ProsePolicy(), top_k=20)
    bundle = extract_evidence(sections, [], citations, store, audit_threshold=0.0)
    candidates = [store.get(ev) for ev in sections[0].candidate_citations]
    for row, claim in zip(bundle.rows, sections[0].claims()):
        expected = rank_critic(candidates, claim.text, RankWeights())[0]
        assert row.selected == expected[0].id
        assert row.score == pytest.approx(expected[1])


# ---------------------------------------------------------------------------
# write


def run_write(tmp_path, *, threshold: float, policy: str):
    checklist, outline = checklist_and_outline([
        ("alpha growth", ["cost criterion"]),
    ])
    leaf = outline.leaves()[0]
    store = make_store(tmp_path, {leaf.id: [
        "Alpha growth rose 8% yearly.",
        "Alpha growth attracted 3 million users.",
    ]})
    sections, citations = draft(outline, checklist, store, ProsePolicy())
    bundle = extract_evidence(sections, [], citations, store, audit_threshold=threshold)
    report = write(
        sections, [], bundle, citations, ProsePolicy(),
        unsupported_policy=policy, store=store, run_id="run-x",
        outline_version=outline.version,
    )
    return sections, bundle, report


def test_write_supported_keeps_text_and_numbers_citations(tmp_path):
    sections, bundle, report = run_write(tmp_path, threshold=0.1, policy="hedge")
    draft_texts = [p.text for p in sections[0].passages]
    final_texts = [p.text for p in report.sections[0].passages]
    assert final_texts == draft_texts  # identity modulo citation markers
    numbers = [
        n for p in report.sections[0].passages if p.claim
        for n in p.claim.citation_numbers
    ]
    assert numbers and numbers == sorted(numbers)


def test_write_drop_removes_claim_and_citation(tmp_path):
    sections, bundle, report = run_write(tmp_path, threshold=0.99, policy="drop")
    assert all(row.unsupported for row in bundle.rows)
    final_claims = [p for s in report.sections for p in s.passages if p.claim]
    assert final_claims == []
    assert report.citations.entries == []


def test_write_hedge_keeps_claim_marked(tmp_path):
    sections, bundle, report = run_write(tmp_path, threshold=0.99, policy="hedge")
    final_claims = [p.claim for s in report.sections for p in s.passages if p.claim]
    assert final_claims and all(c.hedged for c in final_claims)
    assert all(c.citation_numbers == [] for c in final_claims)
    markdown = render_report(report, "markdown").decode()
    assert HEDGE_MARKER in markdown
    assert lint_report_markdown(markdown) == []


def test_same_source_three_claims_one_reference(tmp_path):
    checklist, outline = checklist_and_outline([("alpha findings", ["c"])])
    leaf = outline.leaves()[0]
    # one underlying doc, three claims drafted against copies of the unit
    body = "Alpha findings stable at 7%."
    store = EvidenceStore(tmp_path / "store")
    base = EvidenceUnit(
        id=f"ev-{sha256_hex(body)[:16]}",
        source="https://example.org/shared",
        timestamp="2024-05-01T00:00:00+00:00",
        confidence=0.8,
        summary=f"{body} [https://example.org/shared]",
        excerpt=body,
        bound_nodes=[leaf.id],
    )
    store.add([base])
    from deepresearch.report import Claim, DraftSection, Passage

    claims = [Claim(f"claim-{i}", body, "general", [base.id]) for i in range(3)]
    section = DraftSection(
        node_id=leaf.id, title=leaf.title,
        passages=[Passage(body, c) for c in claims],
        candidate_citations=[base.id],
    )
    report = write([section], [], None, CitationSet(), ProsePolicy(),
                   store=store, run_id="r", outline_version=1)
    # dedup oracle over (source, excerpt hash)
    assert len(report.citations.references) == 1
    assert len(report.citations.entries) == 3
    assert {tuple(e.locator) for e in report.citations.entries} == {
        (leaf.id, "claim-0"), (leaf.id, "claim-1"), (leaf.id, "claim-2"),
    }


# ---------------------------------------------------------------------------
# render / parse


def test_markdown_contains_skeleton_headings(tmp_path):
    _, _, report = run_write(tmp_path, threshold=0.1, policy="hedge")
    markdown = render_report(report, "markdown").decode()
    for heading in ("Executive Summary", "Detailed Analysis",
                    "Insights and Recommendations", "Confidence Assessment",
                    "Knowledge Boundaries"):
        assert f"## {heading}" in markdown


def test_empty_report_renders_skeleton_with_gaps():
    report = Report(run_id="r", outline_version=0, sections=[], visuals=[],
                    citations=CitationSet())
    markdown = render_report(report, "markdown").decode()
    assert "## Executive Summary" in markdown
    assert "(no citations)" in markdown


def test_structured_roundtrip_byte_identical(tmp_path):
    _, _, report = run_write(tmp_path, threshold=0.1, policy="hedge")
    blob = render_report(report, "structured")
    parsed = parse_report(blob)
    assert render_report(parsed, "structured") == blob


def test_reference_count_matches_citations(tmp_path):
    sections, bundle, report = run_write(tmp_path, threshold=0.1, policy="hedge")
    markdown = render_report(report, "markdown").decode()
    refs_section = markdown.split("## References")[1]
    numbered = [l for l in refs_section.splitlines() if l[:1].isdigit()]
    assert len(numbered) == len(report.citations.references)


def test_lint_flags_bare_claims():
    bad = "<!-- claim:claim-1 category:general -->Bare assertion without support\n"
    assert lint_report_markdown(bad) == [
        "claim claim-1 has neither citation nor hedge marker"
    ]
    good = "<!-- claim:claim-1 category:general -->Supported claim [3]\n"
    assert lint_report_markdown(good) == []
    hedged = f"<!-- claim:claim-2 category:cost -->Weak claim {HEDGE_MARKER}\n"
    assert lint_report_markdown(hedged) == []
