"""Authoring helpers for offline fixture directories.

A fixture directory holds one file per checklist/search key plus a
manifest; the bundled builders generate the demo scenario and the
synthetic scenarios used by the verification suite. Everything is
seeded and deterministic, so regenerating a directory yields identical
bytes.
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Any

from .ids import slugify
from .mocks import MANIFEST_SCHEMA

_WORDS = (
    "signal baseline cohort adoption churn latency margin upstream audit "
    "rollout exposure benchmark throughput retention pipeline forecast "
    "segment coverage anomaly variance provenance compliance telemetry"
).split()


def _padding(seed: int, length: int) -> str:
    rng = random.Random(seed)
    words = []
    size = 0
    while size < length:
        word = rng.choice(_WORDS)
        words.append(word)
        size += len(word) + 1
    return " ".join(words)


def write_fixture_dir(
    directory: str | Path,
    *,
    name: str,
    default_query: str,
    checklists: dict[str, list[dict[str, Any]]],
    corpus: dict[str, list[dict[str, Any]]],
    suggested_config: dict[str, Any] | None = None,
) -> Path:
    """Materialize a fixture directory (one file per key, plus manifest)."""
    directory = Path(directory)
    (directory / "checklist").mkdir(parents=True, exist_ok=True)
    (directory / "search").mkdir(parents=True, exist_ok=True)
    manifest: dict[str, Any] = {
        "schema": MANIFEST_SCHEMA,
        "name": name,
        "default_query": default_query,
        "checklists": {},
        "search": {},
        "completions": {},
    }
    if suggested_config:
        manifest["suggested_config"] = suggested_config
    for query, items in checklists.items():
        rel = f"checklist/{slugify(query)}.json"
        (directory / rel).write_text(
            json.dumps({"items": items}, indent=2, sort_keys=True), encoding="utf-8"
        )
        manifest["checklists"][query] = rel
    for key, docs in corpus.items():
        rel = f"search/{slugify(key)}.json"
        (directory / rel).write_text(
            json.dumps({"docs": docs}, indent=2, sort_keys=True), encoding="utf-8"
        )
        manifest["search"][key] = rel
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    return directory


# ---------------------------------------------------------------------------
# Demo scenario: a short-video platform ban and its business fallout.

DEMO_QUERY = (
    "How could a ban on the TikTok short-video platform reshape investment "
    "risk, and how should companies adapt across markets?"
)

_DEMO_DIMENSIONS: list[dict[str, Any]] = [
    {
        "goal": "Economic and financial exposure",
        "inclusions": ["advertiser spending", "creator economy"],
        "exclusions": ["general macroeconomic policy"],
        "acceptance_criteria": [
            "Quantifies costs or revenue shifts for at least two stakeholder groups",
            "Cites market size or valuation figures",
        ],
        "priority": 1,
        "depends_on": [],
    },
    {
        "goal": "Strategic and operational adaptation",
        "inclusions": ["contingency planning", "budget reallocation"],
        "exclusions": [],
        "acceptance_criteria": [
            "Identifies concrete adaptation strategies with their trade-offs",
            "Covers at least two restriction scenarios",
        ],
        "priority": 2,
        "depends_on": [0],
    },
    {
        # Arrives underspecified on purpose: exercises the clarification path.
        "goal": "Legal and regulatory risk",
        "inclusions": ["divestiture requirements", "appeal timelines"],
        "exclusions": [],
        "acceptance_criteria": [],
        "priority": 3,
        "depends_on": [],
    },
    {
        "goal": "Market and competitive dynamics",
        "inclusions": ["user migration", "ad-budget shifts"],
        "exclusions": [],
        "acceptance_criteria": [
            "Names competitors positioned to absorb displaced users",
            "Assesses consolidation versus fragmentation in the market",
        ],
        "priority": 4,
        "depends_on": [],
    },
    {
        "goal": "Social and cultural effects",
        "inclusions": ["creator communities"],
        "exclusions": ["platform moderation debates"],
        "acceptance_criteria": [
            "Describes likely user migration destinations with sources",
            "Covers effects on creator communities",
        ],
        "priority": 5,
        "depends_on": [],
    },
    {
        "goal": "Technical and data implications",
        "inclusions": ["enforcement mechanisms", "data portability"],
        "exclusions": [],
        "acceptance_criteria": [
            "Explains enforcement mechanisms and their technical limits",
            "Covers data migration or algorithm divestiture feasibility",
        ],
        "priority": 6,
        "depends_on": [],
    },
]

_DEMO_DOCS: dict[str, list[dict[str, Any]]] = {
    "Economic and financial exposure": [
        {
            "source": "https://example.org/markets/ad-spend-shift?utm_source=feed&id=7",
            "title": "Ad budgets brace for a platform exit",
            "fetched_at": "2024-11-04T09:00:00+00:00",
            "body": (
                "Economic and financial exposure from a short-video ban is concentrated "
                "in advertising. Analysts estimate 11 billion USD of annual ad spend "
                "would need a new home, and mid-size agencies report that 38% of "
                "performance budgets touch the platform. Creator-economy payouts near "
                "1.2 billion USD a year would pause during any transition window."
            ),
        },
        {
            "source": "https://example.org/markets/creator-payouts",
            "title": "Creator payouts and the cost of interruption",
            "fetched_at": "2024-10-21T12:30:00+00:00",
            "body": (
                "<p>Economic and financial exposure extends to creators: surveyed "
                "full-time creators derive 54% of income from one short-video app. "
                "Replacement platforms typically pay 30% less per view in the first "
                "year. Agencies advise holding 90 days of cash.</p>"
            ),
        },
        {
            "source": "https://mirror.example.net/markets/creator-payouts",
            "title": "Creator payouts and the cost of interruption (mirror)",
            "fetched_at": "2024-10-22T08:00:00+00:00",
            "body": (
                "<p>Economic and financial exposure extends to creators: surveyed "
                "full-time creators derive 54% of income from one short-video app. "
                "Replacement platforms typically pay 30% less per view in the first "
                "year. Agencies advise holding 90 days of cash.</p>"
            ),
        },
    ],
    "Strategic and operational adaptation": [
        {
            "source": "https://example.org/strategy/diversification-playbook",
            "title": "Diversification playbooks after platform shocks",
            "fetched_at": "2024-09-18T10:00:00+00:00",
            "body": (
                "Strategic and operational adaptation starts with audience "
                "diversification: brands that cross-posted to two extra channels kept "
                "83% of reach after previous platform outages. A staged contingency "
                "plan (device bans, app-store removal, full ban) lets teams reallocate "
                "25% of creative budget within one quarter."
            ),
        },
        {
            "source": "https://example.org/strategy/contingency-tiers",
            "title": "Three-tier contingency planning",
            "fetched_at": "2024-08-30T15:45:00+00:00",
            "body": (
                "Strategic and operational adaptation benefits from tiered triggers: "
                "teams map 3 restriction scenarios to pre-approved budget moves, and "
                "operations leads rehearse audience-export drills twice a year. "
                "Email and owned channels recover roughly 40% of lost engagement."
            ),
        },
    ],
    "Legal and regulatory risk": [
        {
            "source": "https://example.org/law/divestiture-timelines",
            "title": "Divestiture orders and appeal windows",
            "fetched_at": "2024-12-01T09:10:00+00:00",
            "body": (
                "Legal and regulatory risk hinges on process: divestiture statutes "
                "typically allow 270 days before enforcement, and appeals have "
                "historically added 6 to 18 months. Compliance teams track 4 distinct "
                "regulatory instruments that could apply to foreign-owned apps."
            ),
        },
        {
            "source": "https://example.org/law/first-amendment-angle",
            "title": "Speech-law challenges to platform bans",
            "fetched_at": "2024-11-20T17:25:00+00:00",
            "body": (
                "Legal and regulatory risk includes constitutional challenges: prior "
                "injunctions blocked two state-level bans, and litigation costs for "
                "trade groups exceeded 12 million USD. Counsel recommend scenario "
                "clauses in creator contracts."
            ),
        },
    ],
    "Market and competitive dynamics": [
        {
            "source": "https://example.org/market/rival-positioning",
            "title": "Rivals position for displaced attention",
            "fetched_at": "2024-10-05T11:00:00+00:00",
            "body": (
                "Market and competitive dynamics favor incumbents: two large rivals "
                "launched creator funds worth 500 million USD combined, and short-form "
                "video inventory prices rose 17% on announcement of restrictions. "
                "Smaller platforms captured only 6% of migrating users in past cases."
            ),
        },
        {
            "source": "https://example.org/market/consolidation-watch",
            "title": "Consolidation versus fragmentation",
            "fetched_at": "2024-09-12T14:20:00+00:00",
            "body": (
                "Market and competitive dynamics point to consolidation: ad buyers "
                "prefer reach, so 70% of reallocated budgets land with the top two "
                "platforms, while niche communities fragment across 5 or more smaller "
                "apps."
            ),
        },
    ],
    "Social and cultural effects": [
        {
            "source": "https://example.org/society/user-migration",
            "title": "Where users go when an app disappears",
            "fetched_at": "2024-08-14T08:05:00+00:00",
            "body": (
                "Social and cultural effects show up as migration: in prior regional "
                "bans, 62% of daily users resurfaced on two rival apps within 8 weeks, "
                "while 15% reduced short-video use entirely. Niche communities often "
                "relocate to messaging platforms."
            ),
        },
        {
            "source": "https://example.org/society/creator-communities",
            "title": "Creator communities under disruption",
            "fetched_at": "2024-07-29T19:40:00+00:00",
            "body": (
                "Social and cultural effects on creators are uneven: established "
                "creators rebuild 80% of their audience within months, but emerging "
                "creators report losing most discovery momentum. Community managers "
                "highlight 3 practices that preserve cultural continuity."
            ),
        },
    ],
    "Technical and data implications": [
        {
            "source": "https://example.org/tech/enforcement-limits",
            "title": "How bans are enforced, and where they leak",
            "fetched_at": "2024-11-11T13:55:00+00:00",
            "body": (
                "Technical and data implications start with enforcement: app-store "
                "removal reaches 85% of casual users, while VPN workarounds keep "
                "roughly 10% of heavy users connected. Network-level blocking raises "
                "false-positive rates for shared infrastructure."
            ),
        },
        {
            "source": "https://example.org/tech/algorithm-divestiture",
            "title": "Separating an algorithm from its owner",
            "fetched_at": "2024-10-02T16:15:00+00:00",
            "body": (
                "Technical and data implications of divestiture are severe: the "
                "recommendation system retrains on 100 million users of behavioral "
                "data, and engineers estimate 24 months to rebuild comparable "
                "performance. Data-portability exports cover profiles but not model "
                "state."
            ),
        },
    ],
}


def build_demo(directory: str | Path) -> Path:
    """The bundled end-to-end scenario."""
    return write_fixture_dir(
        directory,
        name="demo",
        default_query=DEMO_QUERY,
        checklists={DEMO_QUERY: _DEMO_DIMENSIONS},
        corpus=_DEMO_DOCS,
        suggested_config={"min_evidence_per_leaf": 1, "max_steps": 24},
    )


# ---------------------------------------------------------------------------
# Synthetic scenarios for engineered loop shapes.

_GREEK = (
    "alpha", "bravo", "cedar", "delta", "ember", "falcon", "garnet", "harbor",
    "indigo", "juniper", "krypton", "lumen",
)


def synthetic_spec(
    *,
    n_items: int,
    evidence_per_item: int = 1,
    docs_per_search: int = 1,
    pad_chars: int = 0,
    seed: int = 7,
    drop_corpus_for: set[int] | frozenset[int] = frozenset(),
) -> dict[str, Any]:
    """Engineered scenario: n independent items, each needing a known
    number of search rounds. Dropping an item's corpus makes its searches
    fail forever, which pushes the run to the horizon."""
    if n_items > len(_GREEK):
        raise ValueError(f"at most {len(_GREEK)} synthetic items supported")
    query = f"Synthetic research sweep over {n_items} strands (seed {seed})"
    items = []
    corpus: dict[str, list[dict[str, Any]]] = {}
    for index in range(n_items):
        word = _GREEK[index]
        goal = f"Research strand {word}"
        items.append(
            {
                "goal": goal,
                "inclusions": [f"{word} findings"],
                "exclusions": [],
                "acceptance_criteria": [
                    f"Collects {evidence_per_item} distinct sources on {word}"
                ],
                "priority": index + 1,
                "depends_on": [],
            }
        )
        if index in drop_corpus_for:
            continue
        for round_index in range(evidence_per_item):
            key = goal if round_index == 0 else f"{goal} follow-up {round_index}"
            docs = []
            for doc_index in range(docs_per_search):
                doc_seed = seed * 10_000 + index * 100 + round_index * 10 + doc_index
                body = (
                    f"Research strand {word}: finding {round_index}.{doc_index}. "
                    f"Metric for {word} reached {40 + index + round_index}% in 2024. "
                )
                if pad_chars:
                    body += _padding(doc_seed, pad_chars)
                docs.append(
                    {
                        "source": f"https://example.org/{word}/r{round_index}/d{doc_index}",
                        "title": f"{word} report {round_index}.{doc_index}",
                        "fetched_at": f"2024-06-{(round_index % 27) + 1:02d}T00:00:00+00:00",
                        "body": body,
                    }
                )
            corpus[key] = docs
    return {
        "query": query,
        "items": items,
        "corpus": corpus,
        "suggested_config": {"min_evidence_per_leaf": evidence_per_item},
    }


def build_synthetic(directory: str | Path, **kwargs: Any) -> Path:
    spec = synthetic_spec(**kwargs)
    return write_fixture_dir(
        directory,
        name=f"synthetic-{kwargs.get('n_items', 0)}",
        default_query=spec["query"],
        checklists={spec["query"]: spec["items"]},
        corpus=spec["corpus"],
        suggested_config=spec["suggested_config"],
    )


def build_stop_at_seven(directory: str | Path) -> Path:
    """Seven items, one search each: the goal predicate fires at step 7."""
    return build_synthetic(
        directory, n_items=7, evidence_per_item=1, docs_per_search=2, pad_chars=300
    )


def build_long_run(directory: str | Path) -> Path:
    """Eight items times six evidence rounds: enough work to fill 50 steps."""
    return build_synthetic(
        directory, n_items=8, evidence_per_item=6, docs_per_search=1, pad_chars=3200
    )
