"""Hierarchical report outline.

Nodes are content-addressed (hash of title + parent path) so citations
and evidence bindings stay stable across outline versions. The compiler
maps a verified checklist onto the tree: dependency clusters become
sections, items become leaves, sibling order follows priority.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

from .ids import content_hash

logger = logging.getLogger(__name__)

UNASSIGNED_TITLE = "Unassigned evidence"


class OutlineError(Exception):
    pass


def node_id_for(title: str, parent_path: tuple[str, ...], dedup: int = 0) -> str:
    parts: list[Any] = [title, list(parent_path)]
    if dedup:
        parts.append(dedup)
    return f"node-{content_hash(parts)[:12]}"


@dataclass
class OutlineNode:
    id: str
    title: str
    parent: str | None
    order: int
    depth: int
    bound_items: list[str] = field(default_factory=list)
    bound_evidence: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "parent": self.parent,
            "order": self.order,
            "depth": self.depth,
            "bound_items": list(self.bound_items),
            "bound_evidence": list(self.bound_evidence),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OutlineNode":
        return cls(
            id=data["id"],
            title=data["title"],
            parent=data.get("parent"),
            order=data["order"],
            depth=data["depth"],
            bound_items=list(data.get("bound_items", [])),
            bound_evidence=list(data.get("bound_evidence", [])),
        )


@dataclass
class Outline:
    nodes: list[OutlineNode]
    version: int = 0
    notes: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        ids = [node.id for node in self.nodes]
        if len(set(ids)) != len(ids):
            raise OutlineError("duplicate node ids")
        roots = [node for node in self.nodes if node.parent is None]
        if len(roots) != 1:
            raise OutlineError(f"outline must have exactly one root, found {len(roots)}")
        known = set(ids)
        for node in self.nodes:
            if node.parent is not None and node.parent not in known:
                raise OutlineError(f"node {node.id} has unknown parent {node.parent}")
        for parent_id in {node.parent for node in self.nodes if node.parent}:
            orders = [node.order for node in self.nodes if node.parent == parent_id]
            if len(set(orders)) != len(orders):
                raise OutlineError(f"sibling orders under {parent_id} are not unique")
        # Cycle check: every node must reach the root.
        by_id = {node.id: node for node in self.nodes}
        for node in self.nodes:
            seen = set()
            cursor: OutlineNode | None = node
            while cursor is not None and cursor.parent is not None:
                if cursor.id in seen:
                    raise OutlineError(f"cycle through node {node.id}")
                seen.add(cursor.id)
                cursor = by_id.get(cursor.parent)

    @property
    def root(self) -> OutlineNode:
        return next(node for node in self.nodes if node.parent is None)

    def get(self, node_id: str) -> OutlineNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise OutlineError(f"unknown node {node_id}")

    def children(self, node_id: str) -> list[OutlineNode]:
        kids = [node for node in self.nodes if node.parent == node_id]
        return sorted(kids, key=lambda node: node.order)

    def leaves(self) -> list[OutlineNode]:
        parents = {node.parent for node in self.nodes if node.parent}
        return [node for node in self.dfs() if node.id not in parents]

    def dfs(self) -> list[OutlineNode]:
        out: list[OutlineNode] = []

        def walk(node: OutlineNode) -> None:
            out.append(node)
            for child in self.children(node.id):
                walk(child)

        walk(self.root)
        return out

    def descendants(self, node_id: str) -> list[OutlineNode]:
        out: list[OutlineNode] = []

        def walk(nid: str) -> None:
            for child in self.children(nid):
                out.append(child)
                walk(child.id)

        walk(node_id)
        return out

    def with_evidence(self, bindings: dict[str, list[str]]) -> "Outline":
        """New version with evidence ids appended to the given nodes."""
        nodes = []
        for node in self.nodes:
            extra = [e for e in bindings.get(node.id, []) if e not in node.bound_evidence]
            if extra:
                nodes.append(replace(node, bound_evidence=node.bound_evidence + extra))
            else:
                nodes.append(replace(node))
        return Outline(nodes=nodes, version=self.version + 1, notes=list(self.notes))

    def ensure_holding_node(self) -> tuple["Outline", str]:
        """Visible holding node for evidence that matched nothing."""
        for node in self.nodes:
            if node.title == UNASSIGNED_TITLE and node.parent == self.root.id:
                return self, node.id
        order = max((n.order for n in self.nodes if n.parent == self.root.id), default=-1) + 1
        node = OutlineNode(
            id=node_id_for(UNASSIGNED_TITLE, (self.root.title,)),
            title=UNASSIGNED_TITLE,
            parent=self.root.id,
            order=order,
            depth=1,
        )
        outline = Outline(
            nodes=[replace(n) for n in self.nodes] + [node],
            version=self.version + 1,
            notes=list(self.notes),
        )
        return outline, node.id

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "notes": list(self.notes),
            "nodes": [node.to_dict() for node in self.dfs()],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Outline":
        return cls(
            nodes=[OutlineNode.from_dict(n) for n in data["nodes"]],
            version=data.get("version", 0),
            notes=list(data.get("notes", [])),
        )


def make_root(title: str) -> OutlineNode:
    return OutlineNode(id=node_id_for(title, ()), title=title, parent=None, order=0, depth=0)


def initial_outline(query: str, item_pairs: Iterable[tuple[str, str]]) -> Outline:
    """Pre-critic outline: root plus one node per checklist item."""
    root = make_root(query)
    nodes = [root]
    seen_titles: dict[str, int] = {}
    for order, (item_id, goal) in enumerate(item_pairs):
        dedup = seen_titles.get(goal, 0)
        seen_titles[goal] = dedup + 1
        nodes.append(
            OutlineNode(
                id=node_id_for(goal, (root.title,), dedup),
                title=goal,
                parent=root.id,
                order=order,
                depth=1,
                bound_items=[item_id],
            )
        )
    return Outline(nodes=nodes, version=0)


def _clusters(items: list) -> list[list]:
    """Connected components over depends_on edges (undirected)."""
    parent: dict[str, str] = {item.id: item.id for item in items}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: str, b: str) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    for item in items:
        for dep in item.depends_on:
            if dep in parent:
                union(item.id, dep)
    groups: dict[str, list] = {}
    for item in items:
        groups.setdefault(find(item.id), []).append(item)
    return list(groups.values())


def _topo_by_priority(items: list) -> list:
    """Topological order, ties broken by priority then id (deterministic)."""
    import heapq

    by_id = {item.id: item for item in items}
    indegree = {item.id: 0 for item in items}
    dependents: dict[str, list[str]] = {item.id: [] for item in items}
    for item in items:
        for dep in item.depends_on:
            if dep in by_id:
                indegree[item.id] += 1
                dependents[dep].append(item.id)
    heap = [
        (item.priority, item.id) for item in items if indegree[item.id] == 0
    ]
    heapq.heapify(heap)
    out = []
    while heap:
        _, item_id = heapq.heappop(heap)
        out.append(by_id[item_id])
        for nxt in dependents[item_id]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(heap, (by_id[nxt].priority, nxt))
    if len(out) != len(items):
        raise OutlineError("dependency cycle in checklist items")
    return out


def compile_outline(checklist, max_depth: int = 4) -> Outline:
    """Map a verified checklist to the report outline.

    Dependency clusters of two or more items become sections holding one
    leaf per item; singleton clusters become leaves directly under the
    root. Cluster order follows the best (lowest) priority inside each
    cluster. A hierarchy that would exceed ``max_depth`` is flattened to
    leaves under the root, with a note recorded.
    """
    pending = [i for i in checklist.items if i.status not in ("verified", "waived")]
    if pending:
        raise OutlineError(
            f"checklist has unresolved items: {[i.id for i in pending]}"
        )
    verified = [i for i in checklist.items if i.status == "verified"]
    root = make_root(checklist.query)
    nodes = [root]
    notes: list[str] = []
    seen: dict[tuple[str, ...], dict[str, int]] = {}

    def new_node(title: str, parent: OutlineNode, order: int, items: list[str]) -> OutlineNode:
        path = _path_of(parent, nodes)
        bucket = seen.setdefault(path, {})
        dedup = bucket.get(title, 0)
        bucket[title] = dedup + 1
        return OutlineNode(
            id=node_id_for(title, path, dedup),
            title=title,
            parent=parent.id,
            order=order,
            depth=parent.depth + 1,
            bound_items=items,
        )

    flatten = max_depth < 2
    if flatten:
        notes.append(f"flattened: sections would exceed max_depth={max_depth}")
        logger.warning("outline flattened to depth 1 (max_depth=%d)", max_depth)

    clusters = _clusters(verified)
    clusters.sort(key=lambda group: min(item.priority for item in group))
    order = 0
    for group in clusters:
        ordered = _topo_by_priority(group)
        if len(ordered) == 1 or flatten:
            for item in ordered:
                nodes.append(new_node(item.goal, root, order, [item.id]))
                order += 1
        else:
            section = new_node(ordered[0].goal, root, order, [])
            nodes.append(section)
            order += 1
            for child_order, item in enumerate(ordered):
                nodes.append(new_node(item.goal, section, child_order, [item.id]))
    return Outline(nodes=nodes, version=1, notes=notes)


def _path_of(node: OutlineNode, nodes: list[OutlineNode]) -> tuple[str, ...]:
    by_id = {n.id: n for n in nodes}
    path = []
    cursor: OutlineNode | None = node
    while cursor is not None:
        path.append(cursor.title)
        cursor = by_id.get(cursor.parent) if cursor.parent else None
    return tuple(reversed(path))
