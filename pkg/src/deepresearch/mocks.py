"""Deterministic offline providers.

Two policy implementations cover offline work:

* ``ScriptedPolicy`` computes completions as a pure function of the
  template, the bindings, and a fixture directory (checklist items and
  the search corpus are authored there). It drives full engine runs
  without any network.
* ``FixtureReplayPolicy`` replays recorded completions keyed by
  (template name, content hash of the bindings); a missing key is an
  error, never silent improvisation. The hash key catches accidental
  prompt drift.

``FixtureEnvironment`` serves the search corpus the same way: unknown
queries produce an error-status result, not fabricated content.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .checklist import Checklist, PlanIntent, ReviewDecision, Verdict
from .evidence import RawResult, first_sentences
from .ids import content_hash, sha256_hex
from .ports import FixtureMissError
from .providers import PromptTemplate, SearchTask
from .workspace import SUBGOAL_LINE_RE, TASK_LINE_RE

MANIFEST_SCHEMA = "fixtures@1"


@dataclass
class Scenario:
    """A loaded fixture directory."""

    directory: Path
    manifest: dict[str, Any]

    @classmethod
    def load(cls, directory: str | Path) -> "Scenario":
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise FixtureMissError(f"no fixture manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("schema") != MANIFEST_SCHEMA:
            raise FixtureMissError(
                f"unsupported fixture schema {manifest.get('schema')!r}"
            )
        return cls(directory=directory, manifest=manifest)

    @property
    def default_query(self) -> str:
        return self.manifest.get("default_query", "")

    def manifest_hash(self) -> str:
        """Content hash over every fixture file; pins runs to fixtures."""
        digests: dict[str, str] = {}
        for path in sorted(self.directory.rglob("*")):
            if path.is_file():
                digests[str(path.relative_to(self.directory))] = sha256_hex(
                    path.read_bytes()
                )
        return content_hash(digests)[:16]

    def _load_entry(self, section: str, key: str) -> Any | None:
        rel = self.manifest.get(section, {}).get(key)
        if rel is None:
            return None
        return json.loads((self.directory / rel).read_text(encoding="utf-8"))

    def checklist_for(self, query: str) -> list[dict[str, Any]] | None:
        data = self._load_entry("checklists", query)
        if data is None:
            return None
        return data["items"]

    def corpus_for(self, query_text: str) -> list[dict[str, Any]] | None:
        data = self._load_entry("search", query_text)
        if data is None:
            return None
        return data["docs"]

    def completion_for(self, key: str) -> str | None:
        data = self._load_entry("completions", key)
        if data is None:
            return None
        return data["text"]


def _parse_workspace(text: str) -> tuple[list[dict[str, Any]], list[dict[str, str]]]:
    """Pull subgoal and pending-task lines out of a rendered workspace."""
    subgoals = []
    tasks = []
    for line in text.splitlines():
        match = SUBGOAL_LINE_RE.match(line)
        if match:
            subgoals.append(
                {
                    "kind": match.group(1),
                    "id": match.group(2),
                    "title": match.group(3),
                    "have": int(match.group(4)),
                    "need": int(match.group(5)),
                }
            )
            continue
        match = TASK_LINE_RE.match(line)
        if match:
            tasks.append({"id": match.group(1), "query_text": match.group(2)})
    return subgoals, tasks


class ScriptedPolicy:
    """Rule-based completions over a fixture scenario; pure and stateless."""

    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario

    def complete(self, template: PromptTemplate, bindings: dict[str, str]) -> str:
        handler = getattr(self, f"_t_{template.name}", None)
        if handler is None:
            raise FixtureMissError(f"no scripted rule for template {template.name!r}")
        return handler(bindings)

    # -- template handlers --------------------------------------------
    def _t_checklist_generate(self, bindings: dict[str, str]) -> str:
        items = self.scenario.checklist_for(bindings["query"])
        if items is None:
            raise FixtureMissError(
                f"no checklist fixture for query {bindings['query']!r}"
            )
        return json.dumps(items)

    def _t_summarize(self, bindings: dict[str, str]) -> str:
        count = int(bindings.get("sentences", "2"))
        return first_sentences(bindings["text"], count)

    def _t_step_thought(self, bindings: dict[str, str]) -> str:
        subgoals, tasks = _parse_workspace(bindings["workspace"])
        deficits = [s for s in subgoals if s["have"] < s["need"]]
        return (
            f"Step {bindings['step']}: {len(deficits)} subgoal(s) still need evidence; "
            f"{len(tasks)} search task(s) pending."
        )

    def _t_step_action_thought(self, bindings: dict[str, str]) -> str:
        subgoals, tasks = _parse_workspace(bindings["workspace"])
        if tasks:
            return (
                f"Run pending search [{tasks[0]['id']}] {tasks[0]['query_text']!r} "
                "to close its evidence gap."
            )
        deficits = [s for s in subgoals if s["have"] < s["need"]]
        if deficits or not subgoals:
            return "No searches pending; plan new search tasks for the open subgoals."
        return "All subgoals covered; no further tool use needed."

    def _t_step_action(self, bindings: dict[str, str]) -> str:
        subgoals, tasks = _parse_workspace(bindings["workspace"])
        max_tasks = int(bindings.get("max_tasks", "1"))
        if tasks:
            selected = [t["id"] for t in tasks[:max_tasks]]
            return json.dumps(
                {
                    "tool": "search",
                    "parameters": {"task_ids": selected},
                    "task_descriptor": f"search: {tasks[0]['query_text']}",
                }
            )
        deficits = [s for s in subgoals if s["have"] < s["need"]]
        if deficits or not subgoals:
            return json.dumps(
                {
                    "tool": "plan",
                    "parameters": {},
                    "task_descriptor": "plan search tasks for open subgoals",
                }
            )
        return json.dumps(
            {"tool": "noop", "parameters": {}, "task_descriptor": "nothing to do"}
        )

    def _t_plan(self, bindings: dict[str, str]) -> str:
        subgoals, _ = _parse_workspace(bindings["workspace"])
        if subgoals:
            rows = []
            for sub in subgoals:
                if sub["have"] >= sub["need"]:
                    continue
                query_text = (
                    sub["title"]
                    if sub["have"] == 0
                    else f"{sub['title']} follow-up {sub['have']}"
                )
                row: dict[str, Any] = {
                    "query_text": query_text,
                    "intent": f"close the evidence gap for {sub['title']!r}",
                }
                if sub["kind"] == "item":
                    row["origin_item"] = sub["id"]
                else:
                    row["origin_node"] = sub["id"]
                rows.append(row)
            return json.dumps({"search_tasks": rows, "new_leaves": []})
        # Bare outline (checklist module disabled): derive topics from fixtures.
        items = self.scenario.checklist_for(bindings["query"]) or []
        leaves = [{"title": item["goal"]} for item in items]
        rows = [
            {
                "query_text": item["goal"],
                "intent": f"gather evidence on {item['goal']!r}",
                "origin_title": item["goal"],
            }
            for item in items
        ]
        return json.dumps({"search_tasks": rows, "new_leaves": leaves})

    def _t_critic_review(self, bindings: dict[str, str]) -> str:
        items = json.loads(bindings["items_json"])
        verdicts = []
        for item in items:
            if item["status"] in ("verified", "waived"):
                continue
            if item.get("acceptance_criteria"):
                verdicts.append({"item_id": item["id"], "verdict": "approve", "payload": {}})
            else:
                verdicts.append(
                    {
                        "item_id": item["id"],
                        "verdict": "edit",
                        "payload": {
                            "acceptance_criteria": [
                                f"Covers {item['goal']!r} with at least one cited source",
                                "States limitations of the available evidence",
                            ]
                        },
                    }
                )
        return json.dumps({"verdicts": verdicts})

    def _t_section_prose(self, bindings: dict[str, str]) -> str:
        count = len([ln for ln in bindings["claims"].splitlines() if ln.strip()])
        return f"{bindings['title']}: {count} audited finding(s) follow."


class FixtureReplayPolicy:
    """Replays recorded completions keyed by (template, bindings hash)."""

    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario

    @staticmethod
    def key_for(template: PromptTemplate, bindings: dict[str, str]) -> str:
        return f"{template.name}/{content_hash(dict(bindings))[:16]}"

    def complete(self, template: PromptTemplate, bindings: dict[str, str]) -> str:
        key = self.key_for(template, bindings)
        text = self.scenario.completion_for(key)
        if text is None:
            raise FixtureMissError(
                f"no recorded completion for key {key!r} "
                f"(template {template.name!r}); refusing to improvise"
            )
        return text


def record_completion(
    directory: str | Path,
    template: PromptTemplate,
    bindings: dict[str, str],
    text: str,
) -> str:
    """Author a replay fixture entry; returns the manifest key."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    else:
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {"schema": MANIFEST_SCHEMA, "name": directory.name}
    key = FixtureReplayPolicy.key_for(template, bindings)
    rel = f"llm/{template.name}-{key.rsplit('/', 1)[1]}.json"
    target = directory / rel
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps({"text": text}), encoding="utf-8")
    manifest.setdefault("completions", {})[key] = rel
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return key


class FixtureEnvironment:
    """Search over the fixture corpus; unknown queries are fixture misses."""

    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario

    def search(self, task: SearchTask, step_index: int) -> list[RawResult]:
        docs = self.scenario.corpus_for(task.query_text)
        if docs is None:
            return [
                RawResult(
                    source=f"fixture://{task.id}",
                    fetched_at="",
                    status="error:fixture-miss",
                    body="",
                    search_task_id=task.id,
                    step_index=step_index,
                )
            ]
        return [
            RawResult(
                source=doc["source"],
                fetched_at=doc.get("fetched_at", ""),
                status=doc.get("status", "ok"),
                body=doc.get("body", ""),
                title=doc.get("title"),
                search_task_id=task.id,
                step_index=step_index,
            )
            for doc in docs
        ]


class LLMCritic:
    """Checklist critic backed by the policy port."""

    def __init__(self, policy) -> None:
        self.policy = policy

    def review(
        self, checklist: Checklist, intents: list[PlanIntent], round_index: int
    ) -> ReviewDecision:
        from .providers import TEMPLATES, _extract_json, llm_complete

        text = llm_complete(
            TEMPLATES["critic_review"],
            {
                "checklist_version": checklist.version_id,
                "round": str(round_index),
                "items_json": json.dumps([item.to_dict() for item in checklist.items]),
                "intents_json": json.dumps([intent.to_dict() for intent in intents]),
            },
            self.policy,
        )
        data = _extract_json(text)
        return ReviewDecision(
            checklist_version=checklist.version_id,
            verdicts=[
                Verdict(
                    item_id=row["item_id"],
                    verdict=row["verdict"],
                    payload=row.get("payload", {}),
                )
                for row in data.get("verdicts", [])
            ],
        )


class AutoApproveCritic:
    """Approves items that have criteria, waives the rest (one round)."""

    def review(
        self, checklist: Checklist, intents: list[PlanIntent], round_index: int
    ) -> ReviewDecision:
        verdicts = []
        for item in checklist.items:
            if item.status in ("verified", "waived"):
                continue
            if item.acceptance_criteria:
                verdicts.append(Verdict(item_id=item.id, verdict="approve"))
            else:
                verdicts.append(Verdict(item_id=item.id, verdict="waive"))
        return ReviewDecision(checklist_version=checklist.version_id, verdicts=verdicts)
