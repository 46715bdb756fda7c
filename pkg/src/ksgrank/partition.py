"""Shortest-path-tree partitioning of a retrieved KSG into sub-KSGs.

A sub-KSG is anchored at a tree node whose tree children are all leaves: it
holds the root-to-anchor path plus those children, along with the KSG
triples joining consecutive path nodes and the anchor to each child.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .kg_store import KSG, KnowledgeGraph, Triple


@dataclass
class ShortestPathTree:
    root: int
    parent: dict[int, int | None]
    depth: dict[int, int]
    children: dict[int, list[int]]
    unreachable: frozenset = frozenset()

    def path_to(self, node: int) -> list[int]:
        path = [node]
        while self.parent[path[-1]] is not None:
            path.append(self.parent[path[-1]])
        return path[::-1]

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]


def shortest_path_tree(ksg: KSG, root: int) -> ShortestPathTree:
    """BFS tree over directed unit-weight edges.

    Among equal-length predecessors the smallest entity id becomes the
    parent.  Self-loops are ignored; nodes the root cannot reach are left out.
    """
    if root not in ksg.nodes:
        raise KeyError(f"root {root} is not a node of the KSG")
    out = {}
    inc = {}
    for s, _, o in ksg.triples:
        if s == o:
            continue
        out.setdefault(s, set()).add(o)
        inc.setdefault(o, set()).add(s)
    depth = {root: 0}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in sorted(out.get(u, ())):
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    parent: dict[int, int | None] = {root: None}
    children: dict[int, list[int]] = {v: [] for v in depth}
    for v, dv in depth.items():
        if v == root:
            continue
        p = min(u for u in inc[v] if depth.get(u) == dv - 1)
        parent[v] = p
        children[p].append(v)
    for lst in children.values():
        lst.sort()
    return ShortestPathTree(root, parent, depth, children, frozenset(ksg.nodes) - frozenset(depth))


@dataclass
class SubKSG:
    question_id: str
    root: int
    anchor: int
    nodes: tuple
    path_len: int
    edges: tuple
    label: int = 0

    @property
    def path(self) -> tuple:
        return self.nodes[: self.path_len]

    @property
    def leaves(self) -> tuple:
        return self.nodes[self.path_len:]

    @property
    def key(self) -> tuple:
        return (self.question_id, self.root, self.anchor)

    def to_json(self, g: KnowledgeGraph) -> dict:
        ent = g.entities.name
        return {
            "question_id": self.question_id,
            "root": ent(self.root),
            "anchor": ent(self.anchor),
            "nodes": [ent(n) for n in self.nodes],
            "path_len": self.path_len,
            "edges": [list(g.named(t)) for t in self.edges],
            "label": self.label,
        }

    @classmethod
    def from_json(cls, raw: dict, g: KnowledgeGraph) -> "SubKSG":
        ent = g.entities.__getitem__
        nodes = tuple(ent(n) for n in raw["nodes"])
        return cls(
            question_id=str(raw["question_id"]),
            root=ent(raw["root"]) if "root" in raw else nodes[0],
            anchor=ent(raw["anchor"]),
            nodes=nodes,
            path_len=int(raw.get("path_len", len(nodes))),
            edges=tuple(Triple(ent(s), g.relations[r], ent(o)) for s, r, o in raw["edges"]),
            label=int(raw["label"]),
        )


def label_subksg(s: SubKSG, answers: Iterable[int]) -> int:
    return int(not set(s.nodes).isdisjoint(answers))


def partition_ksg(
    ksg: KSG,
    root: int,
    answers: Iterable[int] = (),
    question_id: str = "",
    literal_labels: bool = False,
) -> list[SubKSG]:
    """Partition ``ksg`` from ``root``; output is ordered by anchor id.

    Labels are 1 when the sub-KSG contains an answer.  ``literal_labels``
    instead marks every sub-KSG 1 whenever any answer is reachable from the
    root, which is what a word-for-word reading of the procedure does.
    """
    answers = set(answers)
    tree = shortest_path_tree(ksg, root)
    by_pair: dict[tuple[int, int], list[Triple]] = {}
    for t in ksg.triples:
        if t.subject != t.object:
            by_pair.setdefault((t.subject, t.object), []).append(t)
    for lst in by_pair.values():
        lst.sort()
    reachable_answer = any(a in tree.depth for a in answers)
    result = []
    for n in sorted(tree.depth):
        kids = tree.children[n]
        if not kids or not all(tree.is_leaf(c) for c in kids):
            continue
        path = tree.path_to(n)
        edges = []
        for u, v in zip(path, path[1:]):
            edges.extend(by_pair[(u, v)])
        for c in kids:
            edges.extend(by_pair[(n, c)])
        s = SubKSG(question_id, root, n, tuple(path) + tuple(kids), len(path), tuple(edges))
        s.label = int(reachable_answer) if literal_labels else label_subksg(s, answers)
        result.append(s)
    return result


@dataclass
class PartitionResult:
    question_id: str
    subksgs: list[SubKSG]
    unreachable: dict[int, int] = field(default_factory=dict)  # root -> count

    @property
    def covered(self) -> bool:
        return any(s.label == 1 for s in self.subksgs)


def partition_question(ksg: KSG, question_id: str, topics: list[int], answers: Iterable[int],
                       literal_labels: bool = False) -> PartitionResult:
    """Run the partition once per topic entity and concatenate, root order preserved."""
    answers = set(answers)
    subs, unreachable = [], {}
    for root in topics:
        subs.extend(partition_ksg(ksg, root, answers, question_id, literal_labels))
        unreachable[root] = len(shortest_path_tree(ksg, root).unreachable)
    return PartitionResult(question_id, subs, unreachable)


def coverage_rate(results: Mapping[str, PartitionResult] | Iterable[PartitionResult]) -> float:
    results = list(results.values()) if isinstance(results, Mapping) else list(results)
    if not results:
        raise ValueError("coverage_rate of an empty question set")
    return sum(r.covered for r in results) / len(results)
