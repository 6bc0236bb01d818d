"""Prompt templates, tool-mode operations, and live provider adapters.

Templates use ``${name}`` placeholders. ``llm_complete`` refuses to call
out while any placeholder is unbound, and retries transient provider
failures with exponential backoff (idempotent completion calls only).
"""

from __future__ import annotations

import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

from .evidence import RawResult
from .ids import short_id
from .outline import Outline, OutlineNode, node_id_for
from .ports import (
    EnvironmentPort,
    PolicyPort,
    ProviderError,
    TransientProviderError,
)

logger = logging.getLogger(__name__)

_PLACEHOLDER_RE = re.compile(r"\$\{(\w+)\}")

ACTION_TOOLS = ("plan", "search", "draft", "extract", "write", "noop")


class TemplateError(ProviderError):
    """Unbound placeholder or unresolved marker in a rendered prompt."""


class ToolOutputError(ProviderError):
    """Tool-mode policy output could not be parsed."""


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    version: int = 1

    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER_RE.findall(self.body))

    def render(self, bindings: dict[str, str]) -> str:
        missing = self.placeholders() - set(bindings)
        if missing:
            raise TemplateError(
                f"template {self.name!r} has unbound placeholders: {sorted(missing)}"
            )
        rendered = _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), self.body)
        leftover = _PLACEHOLDER_RE.search(rendered)
        if leftover:
            raise TemplateError(
                f"template {self.name!r} still contains marker {leftover.group(0)!r}"
            )
        return rendered


TEMPLATES: dict[str, PromptTemplate] = {
    template.name: template
    for template in (
        PromptTemplate(
            "system",
            "You are a senior research analyst. Work systematically: decompose the "
            "problem, gather evidence from diverse sources, weigh credibility, and "
            "synthesize findings into a clear, well-cited report. State uncertainty "
            "explicitly and mark knowledge boundaries.",
        ),
        PromptTemplate(
            "task",
            "Research question:\n${query}\n\n"
            "Produce a structured report with these sections: Executive Summary, "
            "Detailed Analysis, Insights and Recommendations, Confidence Assessment, "
            "Knowledge Boundaries. Support every claim with cited evidence and flag "
            "anything uncertain.",
        ),
        PromptTemplate(
            "checklist_generate",
            "Decompose the research question into independent sub-goals.\n\n"
            "Question: ${query}\n\n"
            "Return JSON: a list of items, each with fields goal, inclusions, "
            "exclusions, acceptance_criteria (each criterion independently "
            "checkable), priority (1 = most important), depends_on (list of item "
            "indices). Only include acceptance criteria you can state precisely; "
            "leave the list empty if the goal needs clarification first.",
        ),
        PromptTemplate(
            "summarize",
            "Summarize the following content in at most ${sentences} sentences, "
            "keeping concrete facts and figures.\nSource: ${source}\nTitle: ${title}\n\n${text}",
        ),
        PromptTemplate(
            "step_thought",
            "Current workspace:\n${workspace}\n\nStep ${step}: review the open "
            "subgoals and evidence gaps, then state the immediate objective.",
        ),
        PromptTemplate(
            "step_action_thought",
            "Workspace:\n${workspace}\n\nThought: ${thought}\n\nExplain which tool "
            "you will use next and why (what gap it closes).",
        ),
        PromptTemplate(
            "step_action",
            "Workspace:\n${workspace}\n\nThought: ${thought}\nRationale: "
            "${action_thought}\nAt most ${max_tasks} search tasks may run this "
            'step.\n\nReturn JSON: {"tool": "plan|search|noop", "parameters": '
            '{...}, "task_descriptor": "..."}. For search, parameters.task_ids '
            "lists pending task ids to execute.",
        ),
        PromptTemplate(
            "plan",
            "Question: ${query}\n\nWorkspace:\n${workspace}\n\nPropose the next "
            "search tasks for subgoals that still lack evidence. Return JSON: "
            '{"search_tasks": [{"query_text": "...", "intent": "...", '
            '"origin_item": "..." or "origin_title": "..."}], "new_leaves": '
            '[{"title": "..."}]}. Add new_leaves only when the outline has no '
            "section for a needed topic.",
        ),
        PromptTemplate(
            "critic_review",
            "Review checklist version ${checklist_version} (round ${round}).\n"
            "Items:\n${items_json}\nOpen clarification intents:\n${intents_json}\n\n"
            'Return JSON: {"verdicts": [{"item_id": "...", "verdict": '
            '"approve|edit|split|merge|waive", "payload": {}}]}. Approve only '
            "items whose acceptance criteria are complete; edit items to add "
            "missing criteria.",
        ),
        PromptTemplate(
            "section_prose",
            'Write a short lead paragraph for the section "${title}" based '
            "strictly on these findings:\n${claims}\nDo not introduce facts beyond "
            "the findings.",
        ),
    )
}


@dataclass(frozen=True)
class SearchTask:
    """One retrieval intent generated by planning."""

    id: str
    query_text: str
    intent: str
    origin_item: str | None = None
    origin_node: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "query_text": self.query_text,
            "intent": self.intent,
            "origin_item": self.origin_item,
            "origin_node": self.origin_node,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SearchTask":
        return cls(
            id=data["id"],
            query_text=data["query_text"],
            intent=data.get("intent", ""),
            origin_item=data.get("origin_item"),
            origin_node=data.get("origin_node"),
        )


def make_task(
    query_text: str, intent: str, origin_item: str | None = None, origin_node: str | None = None
) -> SearchTask:
    return SearchTask(
        id=short_id("task", query_text, origin_item, origin_node, length=10),
        query_text=query_text,
        intent=intent,
        origin_item=origin_item,
        origin_node=origin_node,
    )


@dataclass
class ActionCode:
    """Executable tool parameters and task descriptor for one step."""

    tool: str
    parameters: dict[str, Any] = field(default_factory=dict)
    task_descriptor: str = ""

    def __post_init__(self) -> None:
        if self.tool not in ACTION_TOOLS:
            raise ProviderError(f"unknown tool {self.tool!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool": self.tool,
            "parameters": self.parameters,
            "task_descriptor": self.task_descriptor,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ActionCode":
        return cls(
            tool=data["tool"],
            parameters=data.get("parameters", {}),
            task_descriptor=data.get("task_descriptor", ""),
        )


def llm_complete(
    template: PromptTemplate,
    bindings: dict[str, str],
    policy: PolicyPort,
    *,
    max_attempts: int = 3,
    backoff_base_s: float = 0.5,
) -> str:
    """Validated completion call with bounded retries on transient errors."""
    template.render(bindings)  # placeholder validation before any call
    last: Exception | None = None
    for attempt in range(1, max_attempts + 1):
        try:
            completion = policy.complete(template, bindings)
            if attempt > 1:
                logger.info(
                    "llm_complete %s succeeded on attempt %d", template.name, attempt
                )
            return completion
        except TransientProviderError as exc:
            last = exc
            logger.warning(
                "llm_complete %s transient failure (attempt %d/%d): %s",
                template.name,
                attempt,
                max_attempts,
                exc,
            )
            if attempt < max_attempts:
                time.sleep(backoff_base_s * (2 ** (attempt - 1)))
    raise TransientProviderError(
        f"llm_complete {template.name} failed after {max_attempts} attempts: {last}"
    )


def _extract_json(text: str) -> Any:
    """Parse JSON, tolerating surrounding prose or a fenced block."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    fenced = re.search(r"```(?:json)?\s*(.*?)```", text, re.DOTALL)
    if fenced:
        return json.loads(fenced.group(1))
    start = min((i for i in (text.find("{"), text.find("[")) if i >= 0), default=-1)
    if start >= 0:
        return json.loads(text[start:])
    raise json.JSONDecodeError("no JSON found", text, 0)


def plan_tool(
    query: str,
    workspace,
    policy: PolicyPort,
    outline: Outline,
    *,
    max_tasks: int = 8,
) -> tuple[Outline, list[SearchTask]]:
    """Generate outline refinements and search tasks from the workspace.

    The returned outline only ever gains nodes, so checklist bindings
    are preserved. Unparseable policy output is retried once, then the
    step is aborted with a diagnostic.
    """
    bindings = {"query": query, "workspace": workspace.render()}
    data: Any = None
    last: Exception | None = None
    for _ in range(2):
        text = llm_complete(TEMPLATES["plan"], bindings, policy)
        try:
            data = _extract_json(text)
            break
        except json.JSONDecodeError as exc:
            last = exc
            logger.warning("plan output unparseable, retrying once: %s", exc)
    if data is None:
        raise ToolOutputError(f"plan output unparseable after retry: {last}")

    refined = outline
    title_to_node: dict[str, str] = {n.title: n.id for n in outline.nodes}
    new_leaves = [row for row in data.get("new_leaves", []) if str(row.get("title", "")).strip()]
    if new_leaves:
        nodes = [node for node in refined.nodes]
        root = refined.root
        next_order = max((n.order for n in nodes if n.parent == root.id), default=-1) + 1
        for row in new_leaves:
            title = str(row["title"]).strip()
            if title in title_to_node:
                continue
            node = OutlineNode(
                id=node_id_for(title, (root.title,)),
                title=title,
                parent=root.id,
                order=next_order,
                depth=1,
            )
            nodes.append(node)
            title_to_node[title] = node.id
            next_order += 1
        refined = Outline(nodes=nodes, version=refined.version + 1, notes=list(refined.notes))

    tasks: list[SearchTask] = []
    for row in data.get("search_tasks", [])[:max_tasks]:
        query_text = str(row.get("query_text", "")).strip()
        intent = str(row.get("intent", "")).strip()
        if not query_text or not intent:
            raise ToolOutputError(f"search task missing query_text or intent: {row}")
        origin_node = row.get("origin_node")
        if not origin_node and row.get("origin_title"):
            origin_node = title_to_node.get(str(row["origin_title"]))
        tasks.append(
            make_task(
                query_text,
                intent,
                origin_item=row.get("origin_item"),
                origin_node=origin_node,
            )
        )
    return refined, tasks


def search_tool(
    tasks: list[SearchTask],
    environment: EnvironmentPort,
    fanout: int,
    step_index: int,
) -> list[RawResult]:
    """Run search tasks with bounded concurrency.

    Every task yields at least one result (errors included as
    error-status results). Output order is normalized so the observation
    is independent of the fanout degree.
    """
    if not tasks:
        raise ProviderError("search_tool requires at least one task")

    def run_one(task: SearchTask) -> list[RawResult]:
        try:
            results = environment.search(task, step_index)
        except Exception as exc:
            logger.warning("search task %s failed: %s", task.id, exc)
            results = []
            results.append(
                RawResult(
                    source=f"search:{task.id}",
                    fetched_at="",
                    status=f"error:{type(exc).__name__}",
                    body="",
                    search_task_id=task.id,
                    step_index=step_index,
                )
            )
        if not results:
            results = [
                RawResult(
                    source=f"search:{task.id}",
                    fetched_at="",
                    status="error:empty",
                    body="",
                    search_task_id=task.id,
                    step_index=step_index,
                )
            ]
        return results

    gathered: list[RawResult] = []
    workers = max(1, min(fanout, len(tasks)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for batch in pool.map(run_one, tasks):
            gathered.extend(batch)
    gathered.sort(key=lambda r: (r.search_task_id, r.source, r.body))
    return gathered


class HttpPolicy:
    """POSTs rendered prompts to a completion endpoint (live mode)."""

    def __init__(self, endpoint: str, timeout_s: float = 60.0, token: str = "") -> None:
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s
        self.token = token

    def complete(self, template: PromptTemplate, bindings: dict[str, str]) -> str:
        from urllib.error import HTTPError, URLError
        from urllib.request import Request, urlopen

        payload = {
            "template": template.name,
            "version": template.version,
            "prompt": template.render(bindings),
        }
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        request = Request(
            f"{self.endpoint}/complete",
            data=json.dumps(payload).encode("utf-8"),
            headers=headers,
            method="POST",
        )
        try:
            with urlopen(request, timeout=self.timeout_s) as response:
                body = json.loads(response.read().decode("utf-8"))
        except HTTPError as exc:
            if exc.code in (429, 500, 502, 503, 504):
                raise TransientProviderError(f"policy endpoint {exc.code}") from exc
            raise ProviderError(f"policy endpoint error {exc.code}") from exc
        except (URLError, TimeoutError) as exc:
            raise TransientProviderError(f"policy endpoint unreachable: {exc}") from exc
        if "completion" not in body:
            raise ProviderError("policy endpoint returned no completion")
        return str(body["completion"])


class HttpEnvironment:
    """Search/scrape over an HTTP tool endpoint (live mode)."""

    def __init__(self, endpoint: str, timeout_s: float = 60.0, token: str = "") -> None:
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s
        self.token = token

    def search(self, task: SearchTask, step_index: int) -> list[RawResult]:
        from urllib.error import HTTPError, URLError
        from urllib.request import Request, urlopen

        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        request = Request(
            f"{self.endpoint}/search",
            data=json.dumps({"query": task.query_text, "intent": task.intent}).encode(),
            headers=headers,
            method="POST",
        )
        try:
            with urlopen(request, timeout=self.timeout_s) as response:
                body = json.loads(response.read().decode("utf-8"))
        except HTTPError as exc:
            raise TransientProviderError(f"search endpoint {exc.code}") from exc
        except (URLError, TimeoutError) as exc:
            raise TransientProviderError(f"search endpoint unreachable: {exc}") from exc
        results = []
        for row in body.get("results", []):
            results.append(
                RawResult(
                    source=row.get("source", ""),
                    fetched_at=row.get("fetched_at", ""),
                    status=row.get("status", "ok"),
                    body=row.get("body", ""),
                    title=row.get("title"),
                    search_task_id=task.id,
                    step_index=step_index,
                )
            )
        return results
