"""Drafting, claim auditing, final writing, and rendering.

Claims are the structural layer: every checkable assertion in a draft
is its own passage carrying a claim marker with a category and the
evidence that backs it. The writer either hedges or drops claims whose
best evidence scores below the audit threshold, numbers citations by
first appearance, and deduplicates references by (source, excerpt
hash). Rendered markdown embeds machine-checkable claim comments so a
linter can prove that no claim ships without a citation or a hedge.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any

from .checklist import Checklist
from .evidence import (
    GAP_MARKER,
    EvidenceStore,
    compose,
    first_sentences,
    rank_critic,
    tokens,
)
from .ids import canonical_json, sha256_hex, short_id
from .outline import Outline
from .ports import PolicyPort

REPORT_SCHEMA = "report@1"
AUDIT_SCHEMA = "audit-bundle@1"

HEDGE_MARKER = "[unverified]"

CLAIM_COMMENT_RE = re.compile(r"<!-- claim:([\w-]+) category:([\w-]+) -->([^\n]*)")
CITATION_REF_RE = re.compile(r"\[(\d+)\]")

# Rule table for claim categories: first category whose keywords appear
# in the bound items' acceptance criteria wins.
CATEGORY_KEYWORDS: dict[str, tuple[str, ...]] = {
    "cost": ("cost", "costs", "price", "prices", "financial", "revenue"),
    "legal": ("legal", "law", "laws", "regulation", "regulatory", "compliance"),
    "risk": ("risk", "risks", "threat", "threats"),
    "market": ("market", "markets", "competitive", "competition"),
    "technical": ("technical", "data", "algorithm", "algorithms", "infrastructure"),
    "social": ("social", "cultural", "user", "users", "community"),
}

SKELETON_HEADINGS = (
    "Executive Summary",
    "Detailed Analysis",
    "Insights and Recommendations",
    "Confidence Assessment",
    "Knowledge Boundaries",
)

_NUMBER_RE = re.compile(
    r"(\d[\d,]*(?:\.\d+)?)\s*(%|percent|USD|\$|billion|million|bn|users|pp)?"
)


class ReportError(Exception):
    pass


def claim_category(criteria_texts: list[str]) -> str:
    crit_tokens = tokens(" ".join(criteria_texts))
    for category, keywords in CATEGORY_KEYWORDS.items():
        if crit_tokens & set(keywords):
            return category
    return "general"


@dataclass
class Claim:
    id: str
    text: str
    category: str
    evidence_ids: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "category": self.category,
            "evidence_ids": list(self.evidence_ids),
        }


@dataclass
class Passage:
    text: str
    claim: Claim | None = None


@dataclass
class DraftSection:
    node_id: str
    title: str
    passages: list[Passage] = field(default_factory=list)
    visualization_specs: list["VizSpec"] = field(default_factory=list)
    candidate_citations: list[str] = field(default_factory=list)
    gap: bool = False

    def claims(self) -> list[Claim]:
        return [p.claim for p in self.passages if p.claim is not None]


@dataclass
class VizSpec:
    kind: str  # table | bar | line | timeline
    node_id: str
    data: list[dict[str, Any]]  # rows: {label, value, unit, evidence_ids}
    evidence_ids: list[str]
    caption: str

    def __post_init__(self) -> None:
        if self.kind not in ("table", "bar", "line", "timeline"):
            raise ReportError(f"unknown viz kind {self.kind!r}")
        for row in self.data:
            if not row.get("evidence_ids"):
                raise ReportError("every visualization row needs evidence ids")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "node_id": self.node_id,
            "data": [dict(row) for row in self.data],
            "evidence_ids": list(self.evidence_ids),
            "caption": self.caption,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "VizSpec":
        return cls(
            kind=data["kind"],
            node_id=data["node_id"],
            data=[dict(row) for row in data["data"]],
            evidence_ids=list(data["evidence_ids"]),
            caption=data["caption"],
        )


@dataclass
class CitationEntry:
    locator: list[str]  # [node_id, claim_id]
    evidence_id: str
    reference_number: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "locator": list(self.locator),
            "evidence_id": self.evidence_id,
            "reference_number": self.reference_number,
        }


@dataclass
class Reference:
    number: int
    source: str
    excerpt_hash: str
    formatted: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "number": self.number,
            "source": self.source,
            "excerpt_hash": self.excerpt_hash,
            "formatted": self.formatted,
        }


@dataclass
class CitationSet:
    entries: list[CitationEntry] = field(default_factory=list)
    references: list[Reference] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "entries": [entry.to_dict() for entry in self.entries],
            "references": [ref.to_dict() for ref in self.references],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CitationSet":
        return cls(
            entries=[
                CitationEntry(
                    locator=list(e["locator"]),
                    evidence_id=e["evidence_id"],
                    reference_number=e["reference_number"],
                )
                for e in data.get("entries", [])
            ],
            references=[
                Reference(
                    number=r["number"],
                    source=r["source"],
                    excerpt_hash=r["excerpt_hash"],
                    formatted=r["formatted"],
                )
                for r in data.get("references", [])
            ],
        )


def format_reference(source: str, timestamp: str) -> str:
    date = timestamp.split("T")[0] if timestamp else "n.d."
    return f"{source} (fetched {date})"


def _numeric_rows(unit) -> list[dict[str, Any]]:
    match = _NUMBER_RE.search(unit.summary + " " + unit.excerpt)
    if not match or not match.group(2):
        return []
    value = float(match.group(1).replace(",", ""))
    return [
        {
            "label": unit.source,
            "value": value,
            "unit": match.group(2),
            "evidence_ids": [unit.id],
        }
    ]


def draft(
    outline: Outline,
    checklist: Checklist | None,
    store: EvidenceStore,
    policy: PolicyPort,
    *,
    top_k: int = 3,
    weights=None,
    eam_enabled: bool = True,
    half_life_days: float = 180.0,
    include_descendants: bool = False,
) -> tuple[list[DraftSection], CitationSet]:
    """Draft node-aligned sections with claim markers and candidate citations.

    One section per outline leaf, in depth-first order; leaves without
    evidence become explicit gap sections, never silent prose. Claim
    categories come from the bound items' acceptance criteria.
    """
    from .providers import TEMPLATES, llm_complete

    contents = compose(
        outline,
        store,
        top_k,
        weights=weights,
        half_life_days=half_life_days,
        include_descendants=include_descendants,
        use_ranking=eam_enabled,
    )
    item_criteria: dict[str, list[str]] = {}
    if checklist is not None:
        item_criteria = {
            item.id: item.acceptance_criteria for item in checklist.items
        }

    sections: list[DraftSection] = []
    entries: list[tuple[list[str], str, str, str]] = []  # locator, evidence, source, ts
    for leaf in outline.leaves():
        content = contents[leaf.id]
        title = leaf.title
        if content.gap:
            sections.append(
                DraftSection(
                    node_id=leaf.id,
                    title=title,
                    passages=[Passage(text=GAP_MARKER)],
                    gap=True,
                )
            )
            continue
        criteria = [c for item_id in leaf.bound_items for c in item_criteria.get(item_id, [])]
        category = claim_category(criteria)
        selected = [store.get(ev_id) for ev_id in content.evidence_ids]
        claims: list[Claim] = []
        for unit in selected:
            claims.append(
                Claim(
                    id=short_id("claim", leaf.id, unit.id, length=10),
                    text=first_sentences(unit.summary, 1),
                    category=category,
                    evidence_ids=[unit.id],
                )
            )
        lead = llm_complete(
            TEMPLATES["section_prose"],
            {"title": title, "claims": "\n".join(c.text for c in claims)},
            policy,
        )
        passages = [Passage(text=lead)] + [Passage(text=c.text, claim=c) for c in claims]
        viz_rows = [row for unit in selected for row in _numeric_rows(unit)]
        specs: list[VizSpec] = []
        if len(viz_rows) >= 3:
            specs.append(
                VizSpec(
                    kind="table",
                    node_id=leaf.id,
                    data=viz_rows,
                    evidence_ids=sorted({i for row in viz_rows for i in row["evidence_ids"]}),
                    caption=f"Key figures: {title}",
                )
            )
        sections.append(
            DraftSection(
                node_id=leaf.id,
                title=title,
                passages=passages,
                visualization_specs=specs,
                candidate_citations=[unit.id for unit in selected],
            )
        )
        for claim in claims:
            unit = store.get(claim.evidence_ids[0])
            entries.append(
                ([leaf.id, claim.id], unit.id, unit.source, unit.timestamp)
            )

    citations = CitationSet()
    ref_numbers: dict[tuple[str, str], int] = {}
    for locator, evidence_id, source, timestamp in entries:
        unit = store.get(evidence_id)
        key = (source, sha256_hex(unit.excerpt)[:12])
        if key not in ref_numbers:
            ref_numbers[key] = len(ref_numbers) + 1
            citations.references.append(
                Reference(
                    number=ref_numbers[key],
                    source=source,
                    excerpt_hash=key[1],
                    formatted=format_reference(source, timestamp),
                )
            )
        citations.entries.append(
            CitationEntry(
                locator=locator,
                evidence_id=evidence_id,
                reference_number=ref_numbers[key],
            )
        )
    return sections, citations


@dataclass
class AuditRow:
    claim_id: str
    node_id: str
    selected: str | None
    score: float
    unsupported: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "claim_id": self.claim_id,
            "node_id": self.node_id,
            "selected": self.selected,
            "score": self.score,
            "unsupported": self.unsupported,
        }


@dataclass
class AuditBundle:
    threshold: float
    rows: list[AuditRow] = field(default_factory=list)
    schema: str = AUDIT_SCHEMA

    def row_for(self, claim_id: str) -> AuditRow | None:
        for row in self.rows:
            if row.claim_id == claim_id:
                return row
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": self.schema,
            "threshold": self.threshold,
            "rows": [row.to_dict() for row in self.rows],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AuditBundle":
        return cls(
            threshold=data["threshold"],
            rows=[
                AuditRow(
                    claim_id=r["claim_id"],
                    node_id=r["node_id"],
                    selected=r.get("selected"),
                    score=r["score"],
                    unsupported=r["unsupported"],
                )
                for r in data.get("rows", [])
            ],
            schema=data.get("schema", AUDIT_SCHEMA),
        )


def extract_evidence(
    draft_sections: list[DraftSection],
    visuals: list[VizSpec],
    citations: CitationSet,
    store: EvidenceStore,
    ranker=rank_critic,
    *,
    audit_threshold: float = 0.25,
    weights=None,
    half_life_days: float = 180.0,
) -> AuditBundle:
    """Re-rank candidate evidence per claim and flag weak support."""
    from .config import RankWeights

    weights = weights or RankWeights()
    bundle = AuditBundle(threshold=audit_threshold)
    for section in draft_sections:
        candidates = [store.get(ev) for ev in section.candidate_citations if ev in store.units]
        for claim in section.claims():
            if not candidates:
                bundle.rows.append(
                    AuditRow(claim.id, section.node_id, None, 0.0, unsupported=True)
                )
                continue
            ranked = ranker(
                candidates, claim.text, weights, half_life_days=half_life_days
            )
            best_unit, best_score = ranked[0]
            bundle.rows.append(
                AuditRow(
                    claim_id=claim.id,
                    node_id=section.node_id,
                    selected=best_unit.id,
                    score=best_score,
                    unsupported=best_score < audit_threshold,
                )
            )
    return bundle


@dataclass
class FinalClaim:
    id: str
    category: str
    hedged: bool
    evidence_ids: list[str]
    citation_numbers: list[int]
    audit_score: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "category": self.category,
            "hedged": self.hedged,
            "evidence_ids": list(self.evidence_ids),
            "citation_numbers": list(self.citation_numbers),
            "audit_score": self.audit_score,
        }


@dataclass
class FinalPassage:
    text: str
    claim: FinalClaim | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "claim": self.claim.to_dict() if self.claim else None,
        }


@dataclass
class FinalSection:
    node_id: str
    title: str
    gap: bool
    passages: list[FinalPassage] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "node_id": self.node_id,
            "title": self.title,
            "gap": self.gap,
            "passages": [p.to_dict() for p in self.passages],
        }


@dataclass
class Report:
    run_id: str
    outline_version: int
    sections: list[FinalSection]
    visuals: list[VizSpec]
    citations: CitationSet
    schema: str = REPORT_SCHEMA

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": self.schema,
            "run_id": self.run_id,
            "outline_version": self.outline_version,
            "sections": [s.to_dict() for s in self.sections],
            "visuals": [v.to_dict() for v in self.visuals],
            "citations": self.citations.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Report":
        sections = []
        for s in data["sections"]:
            passages = []
            for p in s["passages"]:
                claim = None
                if p.get("claim"):
                    c = p["claim"]
                    claim = FinalClaim(
                        id=c["id"],
                        category=c["category"],
                        hedged=c["hedged"],
                        evidence_ids=list(c["evidence_ids"]),
                        citation_numbers=list(c["citation_numbers"]),
                        audit_score=c["audit_score"],
                    )
                passages.append(FinalPassage(text=p["text"], claim=claim))
            sections.append(
                FinalSection(
                    node_id=s["node_id"],
                    title=s["title"],
                    gap=s["gap"],
                    passages=passages,
                )
            )
        return cls(
            run_id=data["run_id"],
            outline_version=data["outline_version"],
            sections=sections,
            visuals=[VizSpec.from_dict(v) for v in data.get("visuals", [])],
            citations=CitationSet.from_dict(data.get("citations", {})),
            schema=data.get("schema", REPORT_SCHEMA),
        )


def write(
    draft_sections: list[DraftSection],
    visuals: list[VizSpec],
    audit: AuditBundle | None,
    citations: CitationSet,
    policy: PolicyPort,
    *,
    unsupported_policy: str = "hedge",
    store: EvidenceStore,
    run_id: str = "",
    outline_version: int = 0,
) -> Report:
    """Finalize the report: resolve unsupported claims, number citations.

    Hedge keeps weak claims visible but marked; drop removes them and
    their citations. References are deduplicated by (source, excerpt
    hash) and numbered in order of first appearance in the final text.
    """
    if unsupported_policy not in ("hedge", "drop"):
        raise ReportError(f"unknown unsupported_policy {unsupported_policy!r}")

    ref_numbers: dict[tuple[str, str], int] = {}
    references: list[Reference] = []
    entries: list[CitationEntry] = []

    def number_for(evidence_id: str) -> int:
        unit = store.get(evidence_id)
        key = (unit.source, sha256_hex(unit.excerpt)[:12])
        if key not in ref_numbers:
            ref_numbers[key] = len(ref_numbers) + 1
            references.append(
                Reference(
                    number=ref_numbers[key],
                    source=unit.source,
                    excerpt_hash=key[1],
                    formatted=format_reference(unit.source, unit.timestamp),
                )
            )
        return ref_numbers[key]

    sections: list[FinalSection] = []
    for section in draft_sections:
        final_passages: list[FinalPassage] = []
        for passage in section.passages:
            if passage.claim is None:
                final_passages.append(FinalPassage(text=passage.text))
                continue
            claim = passage.claim
            row = audit.row_for(claim.id) if audit else None
            unsupported = row.unsupported if row else False
            score = row.score if row else 1.0
            if unsupported:
                if unsupported_policy == "drop":
                    continue
                final_passages.append(
                    FinalPassage(
                        text=passage.text,
                        claim=FinalClaim(
                            id=claim.id,
                            category=claim.category,
                            hedged=True,
                            evidence_ids=[],
                            citation_numbers=[],
                            audit_score=score,
                        ),
                    )
                )
                continue
            evidence_id = (row.selected if row and row.selected else claim.evidence_ids[0])
            number = number_for(evidence_id)
            entries.append(
                CitationEntry(
                    locator=[section.node_id, claim.id],
                    evidence_id=evidence_id,
                    reference_number=number,
                )
            )
            final_passages.append(
                FinalPassage(
                    text=passage.text,
                    claim=FinalClaim(
                        id=claim.id,
                        category=claim.category,
                        hedged=False,
                        evidence_ids=[evidence_id],
                        citation_numbers=[number],
                        audit_score=score,
                    ),
                )
            )
        sections.append(
            FinalSection(
                node_id=section.node_id,
                title=section.title,
                gap=section.gap,
                passages=final_passages,
            )
        )

    kept_visuals = []
    for spec in visuals:
        if spec.evidence_ids and all(ev in store.units for ev in spec.evidence_ids):
            kept_visuals.append(spec)

    return Report(
        run_id=run_id,
        outline_version=outline_version,
        sections=sections,
        visuals=kept_visuals,
        citations=CitationSet(entries=entries, references=references),
    )


def _confidence_tiers(report: Report) -> dict[str, list[str]]:
    tiers: dict[str, list[str]] = {"high": [], "moderate": [], "uncertain": []}
    for section in report.sections:
        for passage in section.passages:
            claim = passage.claim
            if claim is None:
                continue
            label = f"{claim.id} ({section.title})"
            if claim.hedged or claim.audit_score < 0.5:
                tiers["uncertain"].append(label)
            elif claim.audit_score >= 0.8:
                tiers["high"].append(label)
            else:
                tiers["moderate"].append(label)
    return tiers


def render_report(report: Report, format: str = "markdown") -> bytes:
    """Render the deliverable; structured output is lossless."""
    if format == "structured":
        return canonical_json(report.to_dict()).encode("utf-8")
    if format != "markdown":
        raise ReportError(f"unknown format {format!r}")

    viz_by_node: dict[str, list[VizSpec]] = {}
    for spec in report.visuals:
        viz_by_node.setdefault(spec.node_id, []).append(spec)

    lines: list[str] = ["# Deep Research Report", ""]
    lines.append(f"Run `{report.run_id}` · outline version {report.outline_version}")
    lines.append("")

    lines.append("## Executive Summary")
    lines.append("")
    gap_count = sum(1 for s in report.sections if s.gap)
    hedged = [
        p.claim for s in report.sections for p in s.passages if p.claim and p.claim.hedged
    ]
    highlights = []
    for section in report.sections:
        for passage in section.passages:
            if passage.claim and not passage.claim.hedged:
                highlights.append(passage.text)
                break
        if len(highlights) >= 5:
            break
    if highlights:
        lines.extend(highlights)
    else:
        lines.append("No cited findings are available for this run.")
    lines.append("")
    lines.append(
        f"Coverage: {len(report.sections)} section(s), {gap_count} evidence gap(s), "
        f"{len(hedged)} hedged claim(s)."
    )
    lines.append("")

    lines.append("## Detailed Analysis")
    lines.append("")
    for section in report.sections:
        lines.append(f"### {section.title}")
        lines.append("")
        if section.gap:
            lines.append(f"> {GAP_MARKER}")
            lines.append("")
            continue
        for passage in section.passages:
            claim = passage.claim
            if claim is None:
                lines.append(passage.text)
            elif claim.hedged:
                lines.append(
                    f"<!-- claim:{claim.id} category:{claim.category} -->"
                    f"{passage.text} {HEDGE_MARKER}"
                )
            else:
                refs = "".join(f"[{n}]" for n in claim.citation_numbers)
                lines.append(
                    f"<!-- claim:{claim.id} category:{claim.category} -->"
                    f"{passage.text} {refs}"
                )
            lines.append("")
        for spec in viz_by_node.get(section.node_id, []):
            lines.append(f"**{spec.caption}**")
            lines.append("")
            lines.append("| label | value | unit | evidence |")
            lines.append("| --- | --- | --- | --- |")
            for row in spec.data:
                evs = ", ".join(row["evidence_ids"])
                lines.append(
                    f"| {row['label']} | {row['value']} | {row.get('unit', '')} | {evs} |"
                )
            lines.append("")

    lines.append("## Insights and Recommendations")
    lines.append("")
    acted = [s for s in report.sections if not s.gap]
    if acted:
        for section in acted:
            lines.append(
                f"- Act on the cited findings for {section.title!r} (see Detailed Analysis)."
            )
    else:
        lines.append("- Gather evidence first: every section is an evidence gap.")
    lines.append("")

    tiers = _confidence_tiers(report)
    lines.append("## Confidence Assessment")
    lines.append("")
    lines.append(f"- High confidence (>80%): {', '.join(tiers['high']) or 'none'}")
    lines.append(f"- Moderate confidence (50-80%): {', '.join(tiers['moderate']) or 'none'}")
    lines.append(f"- Uncertain (<50%): {', '.join(tiers['uncertain']) or 'none'}")
    lines.append("")

    lines.append("## Knowledge Boundaries")
    lines.append("")
    gaps = [s.title for s in report.sections if s.gap]
    if gaps:
        lines.append(f"- Evidence gaps: {', '.join(gaps)}")
    if hedged:
        lines.append(f"- {len(hedged)} claim(s) could not be verified and are hedged.")
    if not gaps and not hedged:
        lines.append("- All sections carry cited evidence under the current audit threshold.")
    lines.append("")

    lines.append("## References")
    lines.append("")
    if report.citations.references:
        for ref in report.citations.references:
            lines.append(f"{ref.number}. {ref.formatted}")
    else:
        lines.append("(no citations)")
    lines.append("")
    return "\n".join(lines).encode("utf-8")


def parse_report(data: bytes) -> Report:
    payload = json.loads(data.decode("utf-8"))
    if payload.get("schema") != REPORT_SCHEMA:
        raise ReportError(f"unsupported report schema {payload.get('schema')!r}")
    return Report.from_dict(payload)


def lint_report_markdown(markdown: str) -> list[str]:
    """Check that every claim marker carries a citation or a hedge marker."""
    violations = []
    for match in CLAIM_COMMENT_RE.finditer(markdown):
        claim_id, _category, rest = match.groups()
        if HEDGE_MARKER in rest:
            continue
        if CITATION_REF_RE.search(rest):
            continue
        violations.append(f"claim {claim_id} has neither citation nor hedge marker")
    return violations
