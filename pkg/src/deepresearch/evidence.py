"""Evidence audit: ingestion, store, node binding, ranking, composition.

Ingestion is normalize -> structure -> persist. Units are deduplicated
by a hash of their normalized content, so mirrored copies of the same
text collapse to one unit regardless of URL. The store is append-only;
snapshots are content-addressed id-sets, which makes re-ingestion a
no-op and batch order irrelevant.
"""

from __future__ import annotations

import html
import logging
import math
import re
import unicodedata
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable
from urllib.parse import parse_qsl, urlencode, urlsplit, urlunsplit

from .ids import canonical_json, content_hash, sha256_hex
from .outline import Outline, OutlineNode
from .ports import PolicyPort

logger = logging.getLogger(__name__)

GAP_MARKER = "EVIDENCE GAP: no audited evidence is bound to this section."

TRACKING_PREFIXES = ("utm_",)
TRACKING_PARAMS = frozenset({"fbclid", "gclid", "mc_cid", "mc_eid", "ref", "ref_src"})

# Tokens ignored by the lexical matcher; pure glue words.
_STOPWORDS = frozenset(
    "a an and are as at be by for from in into is of on or the to vs with".split()
)
_TAG_RE = re.compile(r"<[^>]+>")
_WORD_RE = re.compile(r"[\w%$€£]+")
_SENT_RE = re.compile(r"(?<=[.!?])\s+")


class EvidenceError(Exception):
    pass


class InvalidWeights(EvidenceError):
    pass


@dataclass
class RawResult:
    """One raw tool output prior to any auditing."""

    source: str
    fetched_at: str
    status: str  # "ok" or "error:<code>"
    body: str
    search_task_id: str
    step_index: int
    title: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict[str, Any]:
        return {
            "source": self.source,
            "fetched_at": self.fetched_at,
            "status": self.status,
            "body": self.body,
            "search_task_id": self.search_task_id,
            "step_index": self.step_index,
            "title": self.title,
        }


@dataclass
class NormalizedDoc:
    source: str
    title: str
    text: str
    fetched_at: str
    search_task_id: str
    step_index: int

    @property
    def content_hash(self) -> str:
        return sha256_hex(self.text)


@dataclass
class EvidenceUnit:
    id: str
    source: str
    timestamp: str
    confidence: float
    summary: str
    excerpt: str
    bound_nodes: list[str] = field(default_factory=list)
    provenance: tuple[str, int] = ("", -1)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "timestamp": self.timestamp,
            "confidence": self.confidence,
            "summary": self.summary,
            "excerpt": self.excerpt,
            "bound_nodes": list(self.bound_nodes),
            "provenance": list(self.provenance),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvidenceUnit":
        return cls(
            id=data["id"],
            source=data["source"],
            timestamp=data["timestamp"],
            confidence=data["confidence"],
            summary=data["summary"],
            excerpt=data["excerpt"],
            bound_nodes=list(data.get("bound_nodes", [])),
            provenance=tuple(data.get("provenance", ("", -1))),  # type: ignore[arg-type]
            flags=list(data.get("flags", [])),
        )


def tokens(text: str) -> set[str]:
    return {
        word
        for word in (w.lower() for w in _WORD_RE.findall(text))
        if word not in _STOPWORDS
    }


def canonical_url(url: str) -> str:
    """Lower scheme and host, drop tracking params and fragments."""
    parts = urlsplit(url.strip())
    if not parts.scheme:
        return url.strip()
    query = [
        (key, value)
        for key, value in parse_qsl(parts.query, keep_blank_values=True)
        if key.lower() not in TRACKING_PARAMS
        and not key.lower().startswith(TRACKING_PREFIXES)
    ]
    return urlunsplit(
        (
            parts.scheme.lower(),
            parts.netloc.lower(),
            parts.path,
            urlencode(sorted(query)),
            "",
        )
    )


def normalize_text(body: str) -> str:
    """Strip markup, unify encoding, collapse whitespace."""
    text = html.unescape(_TAG_RE.sub(" ", body))
    text = unicodedata.normalize("NFC", text)
    return " ".join(text.split())


def normalize(
    raw: list[RawResult], log: list[dict[str, Any]] | None = None
) -> list[NormalizedDoc]:
    """Normalization stage; error-status results are dropped and logged."""
    docs: list[NormalizedDoc] = []
    for result in raw:
        if not result.ok:
            entry = {
                "event": "dropped",
                "source": result.source,
                "status": result.status,
                "search_task_id": result.search_task_id,
                "step_index": result.step_index,
            }
            logger.info("ingestion dropped %s (%s)", result.source, result.status)
            if log is not None:
                log.append(entry)
            continue
        docs.append(
            NormalizedDoc(
                source=canonical_url(result.source),
                title=result.title or "",
                text=normalize_text(result.body),
                fetched_at=result.fetched_at,
                search_task_id=result.search_task_id,
                step_index=result.step_index,
            )
        )
    return docs


def first_sentences(text: str, count: int) -> str:
    parts = _SENT_RE.split(text)
    return " ".join(parts[:count]).strip()


def source_prior(source: str, priors: dict[str, float], default: float) -> float:
    """Longest matching prefix in the prior map wins."""
    best: tuple[int, float] | None = None
    for prefix, value in priors.items():
        if source.startswith(prefix) and (best is None or len(prefix) > best[0]):
            best = (len(prefix), value)
    return best[1] if best else default


def structure(
    docs: list[NormalizedDoc],
    policy: PolicyPort,
    *,
    source_priors: dict[str, float] | None = None,
    default_prior: float = 0.5,
    summary_sentences: int = 2,
) -> list[EvidenceUnit]:
    """Turn normalized docs into deduplicated evidence units.

    One unit per distinct content hash. Confidence is the source-type
    prior times the fetch-status factor (ok docs only reach this stage,
    factor 1.0). Summaries come from the policy; if summarization fails
    the excerpt stands in and the unit is flagged.
    """
    from .providers import TEMPLATES, llm_complete

    priors = source_priors or {}
    units: dict[str, EvidenceUnit] = {}
    for doc in docs:
        unit_id = f"ev-{doc.content_hash[:16]}"
        if unit_id in units:
            continue
        excerpt = doc.text[:500]
        flags: list[str] = []
        try:
            summary_body = llm_complete(
                TEMPLATES["summarize"],
                {
                    "source": doc.source,
                    "title": doc.title,
                    "text": doc.text[:4000],
                    "sentences": str(summary_sentences),
                },
                policy,
            ).strip()
        except Exception as exc:  # summarizer failure is not an ingestion failure
            logger.warning("summarizer failed for %s: %s", doc.source, exc)
            summary_body = excerpt
            flags.append("summarizer-failure")
        if not summary_body:
            summary_body = excerpt
            flags.append("summarizer-failure")
        confidence = source_prior(doc.source, priors, default_prior) * 1.0
        units[unit_id] = EvidenceUnit(
            id=unit_id,
            source=doc.source,
            timestamp=doc.fetched_at,
            confidence=min(max(confidence, 0.0), 1.0),
            summary=f"{summary_body} [{doc.source}]",
            excerpt=excerpt,
            provenance=(doc.search_task_id, doc.step_index),
            flags=flags,
        )
    return list(units.values())


class EvidenceStore:
    """Append-only unit store with content-addressed snapshots.

    On disk: a unit/bind event log (rebuildable) plus a snapshot
    manifest listing unit ids per snapshot. Readers always see a
    consistent snapshot because snapshots are immutable id-sets.
    """

    def __init__(self, directory: str | Path | None = None) -> None:
        self.directory = Path(directory) if directory else None
        self.units: dict[str, EvidenceUnit] = {}
        self.snapshots: list[str] = []
        self._snapshot_ids: dict[str, list[str]] = {}
        self.index: dict[str, list[str]] = {}
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._replay_log()

    # -- paths -------------------------------------------------------
    @property
    def _log_path(self) -> Path:
        assert self.directory is not None
        return self.directory / "units.jsonl"

    @property
    def _manifest_path(self) -> Path:
        assert self.directory is not None
        return self.directory / "snapshots.jsonl"

    def _replay_log(self) -> None:
        import json

        if self._log_path.exists():
            with open(self._log_path, encoding="utf-8") as handle:
                for raw in handle:
                    raw = raw.strip()
                    if not raw:
                        continue
                    try:
                        event = json.loads(raw)
                    except json.JSONDecodeError:
                        break  # partial tail write; later events are lost anyway
                    if event["event"] == "unit":
                        unit = EvidenceUnit.from_dict(event["unit"])
                        self.units[unit.id] = unit
                    elif event["event"] == "bind":
                        self._apply_bind(event["unit_id"], event["nodes"])
        if self._manifest_path.exists():
            with open(self._manifest_path, encoding="utf-8") as handle:
                for raw in handle:
                    raw = raw.strip()
                    if not raw:
                        continue
                    try:
                        entry = json.loads(raw)
                    except json.JSONDecodeError:
                        break
                    if all(uid in self.units for uid in entry["unit_ids"]):
                        self._snapshot_ids[entry["snapshot_id"]] = entry["unit_ids"]
                        self.snapshots.append(entry["snapshot_id"])
        self._rebuild_index()

    def _rebuild_index(self) -> None:
        self.index = {}
        for unit in self.units.values():
            for node_id in unit.bound_nodes:
                self.index.setdefault(node_id, []).append(unit.id)
        for ids in self.index.values():
            ids.sort()

    def _append_log(self, event: dict[str, Any]) -> None:
        if not self.directory:
            return
        with open(self._log_path, "a", encoding="utf-8") as handle:
            handle.write(canonical_json(event) + "\n")
            handle.flush()

    # -- mutation ----------------------------------------------------
    def add(self, units: Iterable[EvidenceUnit]) -> list[str]:
        """Add units; existing ids are a no-op. Returns newly added ids."""
        added = []
        for unit in units:
            if unit.id in self.units:
                continue
            stored = replace(unit, bound_nodes=list(unit.bound_nodes))
            self.units[stored.id] = stored
            added.append(stored.id)
            self._append_log({"event": "unit", "unit": stored.to_dict()})
            for node_id in stored.bound_nodes:
                bucket = self.index.setdefault(node_id, [])
                if stored.id not in bucket:
                    bucket.append(stored.id)
                    bucket.sort()
        return added

    def _apply_bind(self, unit_id: str, nodes: list[str]) -> None:
        unit = self.units.get(unit_id)
        if unit is None:
            return
        for node_id in nodes:
            if node_id not in unit.bound_nodes:
                unit.bound_nodes.append(node_id)
            bucket = self.index.setdefault(node_id, [])
            if unit_id not in bucket:
                bucket.append(unit_id)
                bucket.sort()

    def bind(self, unit_id: str, nodes: list[str]) -> None:
        if unit_id not in self.units:
            raise EvidenceError(f"cannot bind unknown unit {unit_id}")
        self._apply_bind(unit_id, nodes)
        self._append_log({"event": "bind", "unit_id": unit_id, "nodes": list(nodes)})

    def snapshot(self) -> str:
        """Content-addressed snapshot of the current id-set."""
        ids = sorted(self.units)
        snapshot_id = "snap-" + content_hash(ids)[:12]
        if snapshot_id not in self._snapshot_ids:
            self._snapshot_ids[snapshot_id] = ids
            self.snapshots.append(snapshot_id)
            if self.directory:
                with open(self._manifest_path, "a", encoding="utf-8") as handle:
                    handle.write(
                        canonical_json({"snapshot_id": snapshot_id, "unit_ids": ids}) + "\n"
                    )
                    handle.flush()
        return snapshot_id

    # -- reads -------------------------------------------------------
    def ids(self) -> set[str]:
        return set(self.units)

    def get(self, unit_id: str) -> EvidenceUnit:
        if unit_id not in self.units:
            raise EvidenceError(f"unknown evidence unit {unit_id}")
        return self.units[unit_id]

    def has_snapshot(self, snapshot_id: str) -> bool:
        return snapshot_id in self._snapshot_ids

    def snapshot_ids(self, snapshot_id: str) -> list[str]:
        if snapshot_id not in self._snapshot_ids:
            raise EvidenceError(f"unknown snapshot {snapshot_id}")
        return list(self._snapshot_ids[snapshot_id])

    def for_node(self, node_id: str) -> list[EvidenceUnit]:
        return [self.units[uid] for uid in self.index.get(node_id, [])]

    def __len__(self) -> int:
        return len(self.units)


def persist(units: list[EvidenceUnit], store: EvidenceStore) -> str:
    """Union the units into the store and return the new snapshot id."""
    store.add(units)
    return store.snapshot()


def ingest(
    raw: list[RawResult],
    store: EvidenceStore,
    policy: PolicyPort,
    *,
    source_priors: dict[str, float] | None = None,
    default_prior: float = 0.5,
    summary_sentences: int = 2,
    log: list[dict[str, Any]] | None = None,
) -> tuple[list[EvidenceUnit], str]:
    """Full ingestion update: persist(structure(normalize(raw)))."""
    docs = normalize(raw, log=log)
    units = structure(
        docs,
        policy,
        source_priors=source_priors,
        default_prior=default_prior,
        summary_sentences=summary_sentences,
    )
    snapshot_id = persist(units, store)
    return units, snapshot_id


def refine_outline(
    outline: Outline,
    new_units: list[EvidenceUnit],
    policy: PolicyPort | None = None,
    *,
    store: EvidenceStore | None = None,
    bind_threshold: float = 0.0,
) -> Outline:
    """Align new evidence with outline nodes after a search step.

    Offline binding is lexical: a unit goes to the leaf whose title
    shares the largest normalized token overlap with the unit's text
    (ties broken by node id). Units matching nothing above the threshold
    land in a visible holding node rather than being dropped.
    """
    leaves = outline.leaves()
    bindings: dict[str, list[str]] = {}
    unassigned: list[EvidenceUnit] = []
    for unit in new_units:
        unit_tokens = tokens(f"{unit.summary} {unit.excerpt}")
        best: tuple[float, str] | None = None
        for leaf in leaves:
            title_tokens = tokens(leaf.title)
            if not title_tokens:
                continue
            score = len(title_tokens & unit_tokens) / len(title_tokens)
            if best is None or score > best[0] or (score == best[0] and leaf.id < best[1]):
                best = (score, leaf.id)
        if best is not None and best[0] > bind_threshold:
            bindings.setdefault(best[1], []).append(unit.id)
            _record_binding(unit, [best[1]], store)
        else:
            unassigned.append(unit)

    refined = outline.with_evidence(bindings)
    if unassigned:
        refined, holding_id = refined.ensure_holding_node()
        holding_bindings = {holding_id: [unit.id for unit in unassigned]}
        refined = refined.with_evidence(holding_bindings)
        for unit in unassigned:
            _record_binding(unit, [holding_id], store)
    return refined


def _record_binding(unit: EvidenceUnit, nodes: list[str], store: EvidenceStore | None) -> None:
    if store is not None and unit.id in store.units:
        store.bind(unit.id, nodes)
    else:
        for node_id in nodes:
            if node_id not in unit.bound_nodes:
                unit.bound_nodes.append(node_id)


def retrieve(
    store: EvidenceStore,
    node: OutlineNode,
    *,
    outline: Outline | None = None,
    include_descendants: bool = False,
) -> list[EvidenceUnit]:
    """Units bound to the node (plus its descendants when configured), by id."""
    ids = set(store.index.get(node.id, []))
    if include_descendants and outline is not None:
        for child in outline.descendants(node.id):
            ids.update(store.index.get(child.id, []))
    return [store.units[uid] for uid in sorted(ids)]


def _parse_ts(value: str) -> datetime:
    try:
        parsed = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        return datetime(1970, 1, 1, tzinfo=timezone.utc)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed


def score_components(
    unit: EvidenceUnit,
    node_context: str,
    candidates: list[EvidenceUnit],
    *,
    now: datetime | None = None,
    half_life_days: float = 180.0,
) -> dict[str, float]:
    """Deterministic offline scoring for the four ranking criteria.

    relevance: token overlap with the node context;
    quality: the unit's confidence;
    timeliness: exponential recency decay with the configured half-life;
    consistency: share of other candidates whose summaries agree
    (token-Jaccard >= 0.2) — the cross-source agreement proxy.
    """
    ctx_tokens = tokens(node_context)
    unit_tokens = tokens(f"{unit.summary} {unit.excerpt}")
    relevance = len(ctx_tokens & unit_tokens) / len(ctx_tokens) if ctx_tokens else 0.0

    quality = min(max(unit.confidence, 0.0), 1.0)

    if now is None:
        now = max((_parse_ts(c.timestamp) for c in candidates), default=_parse_ts(unit.timestamp))
    age_days = max((now - _parse_ts(unit.timestamp)).total_seconds() / 86400.0, 0.0)
    timeliness = math.pow(2.0, -age_days / half_life_days) if half_life_days > 0 else 1.0

    others = [c for c in candidates if c.id != unit.id]
    if not others:
        consistency = 1.0
    else:
        mine = tokens(unit.summary)
        agree = 0
        for other in others:
            theirs = tokens(other.summary)
            union = mine | theirs
            jaccard = len(mine & theirs) / len(union) if union else 0.0
            if jaccard >= 0.2:
                agree += 1
        consistency = agree / len(others)

    return {
        "relevance": min(relevance, 1.0),
        "quality": quality,
        "timeliness": min(timeliness, 1.0),
        "consistency": consistency,
    }


def rank_critic(
    candidates: list[EvidenceUnit],
    node_context: str,
    weights,
    policy: PolicyPort | None = None,
    *,
    now: datetime | None = None,
    half_life_days: float = 180.0,
) -> list[tuple[EvidenceUnit, float]]:
    """Rank candidates by the weighted sum of the four criteria.

    Deterministic: descending score, ties broken by evidence id
    ascending. ``policy`` is reserved for live component scoring;
    offline components are computed locally.
    """
    values = weights.as_tuple() if hasattr(weights, "as_tuple") else tuple(weights)
    if len(values) != 4 or any(w < 0 for w in values):
        raise InvalidWeights(f"need 4 non-negative weights, got {values!r}")
    if abs(sum(values) - 1.0) > 1e-9:
        raise InvalidWeights(f"weights must sum to 1, got {sum(values)}")
    w_rel, w_q, w_t, w_c = values
    scored = []
    for unit in candidates:
        comp = score_components(
            unit, node_context, candidates, now=now, half_life_days=half_life_days
        )
        score = (
            w_rel * comp["relevance"]
            + w_q * comp["quality"]
            + w_t * comp["timeliness"]
            + w_c * comp["consistency"]
        )
        scored.append((unit, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0].id))
    return scored


@dataclass
class NodeContent:
    """Per-node composed content with explicit evidence bindings."""

    node_id: str
    evidence_ids: list[str]
    passage: str
    gap: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "node_id": self.node_id,
            "evidence_ids": list(self.evidence_ids),
            "passage": self.passage,
            "gap": self.gap,
        }


def compose(
    outline_snapshot: Outline,
    store: EvidenceStore,
    top_k: int,
    *,
    weights=None,
    now: datetime | None = None,
    half_life_days: float = 180.0,
    include_descendants: bool = False,
    use_ranking: bool = True,
) -> dict[str, NodeContent]:
    """Compose per-leaf content from ranked store evidence.

    Every leaf of the frozen outline gets an entry; leaves without
    evidence get an explicit gap marker, never silent prose.
    """
    from .config import RankWeights

    weights = weights or RankWeights()
    contents: dict[str, NodeContent] = {}
    for leaf in outline_snapshot.leaves():
        candidates = retrieve(
            store, leaf, outline=outline_snapshot, include_descendants=include_descendants
        )
        if not candidates:
            contents[leaf.id] = NodeContent(leaf.id, [], GAP_MARKER, gap=True)
            continue
        if use_ranking:
            ranked = rank_critic(
                candidates, leaf.title, weights, now=now, half_life_days=half_life_days
            )
            selected = [unit for unit, _ in ranked[:top_k]]
        else:
            selected = sorted(candidates, key=lambda u: u.id)[:top_k]
        lines = [
            f"{first_sentences(unit.summary, 1)} [{unit.id}]" for unit in selected
        ]
        contents[leaf.id] = NodeContent(
            leaf.id, [unit.id for unit in selected], "\n".join(lines), gap=False
        )
    return contents
