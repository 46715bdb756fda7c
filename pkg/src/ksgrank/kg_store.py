"""Knowledge-graph storage, question records, and coarse k-hop retrieval."""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

log = logging.getLogger(__name__)


class ParseError(ValueError):
    pass


class Triple(NamedTuple):
    subject: int
    relation: int
    object: int


class Interner:
    """Dense ids in first-seen order."""

    def __init__(self):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []

    def intern(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def get(self, name: str, default=None):
        return self._ids.get(name, default)

    def __getitem__(self, name: str) -> int:
        return self._ids[name]

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __contains__(self, name) -> bool:
        return name in self._ids

    def __len__(self):
        return len(self._names)

    @property
    def names(self) -> list[str]:
        return list(self._names)


class KnowledgeGraph:
    """Deduplicated triple set with out- and in-adjacency indices.

    ``out_index[s]`` lists ``(relation, object)`` and ``in_index[o]`` lists
    ``(relation, subject)``, both sorted.  Treat as immutable once built.
    """

    def __init__(self, entities: Interner | None = None, relations: Interner | None = None):
        self.entities = entities or Interner()
        self.relations = relations or Interner()
        self.triples: list[Triple] = []
        self._seen: set[Triple] = set()
        self.out_index: dict[int, list[tuple[int, int]]] = {}
        self.in_index: dict[int, list[tuple[int, int]]] = {}

    @classmethod
    def from_named_triples(cls, triples: Iterable[tuple[str, str, str]]) -> "KnowledgeGraph":
        g = cls()
        for s, r, o in triples:
            g.add(s, r, o)
        g.build_index()
        return g

    def add(self, s: str, r: str, o: str) -> bool:
        t = Triple(self.entities.intern(s), self.relations.intern(r), self.entities.intern(o))
        if t in self._seen:
            return False
        self._seen.add(t)
        self.triples.append(t)
        return True

    def build_index(self):
        out_index: dict[int, list] = {}
        in_index: dict[int, list] = {}
        for s, r, o in self.triples:
            out_index.setdefault(s, []).append((r, o))
            in_index.setdefault(o, []).append((r, s))
        for lst in out_index.values():
            lst.sort()
        for lst in in_index.values():
            lst.sort()
        self.out_index, self.in_index = out_index, in_index

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def __contains__(self, triple) -> bool:
        return Triple(*triple) in self._seen

    def successors(self, e: int) -> list[tuple[int, int]]:
        return self.out_index.get(e, [])

    def predecessors(self, e: int) -> list[tuple[int, int]]:
        return self.in_index.get(e, [])

    def named(self, t: Triple) -> tuple[str, str, str]:
        return (self.entities.name(t.subject), self.relations.name(t.relation), self.entities.name(t.object))

    def self_loops(self) -> list[Triple]:
        return [t for t in self.triples if t.subject == t.object]


def load_triples(path) -> KnowledgeGraph:
    g = KnowledgeGraph()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3 or not all(fields):
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            g.add(*fields)
    g.build_index()
    return g


def save_triples(g: KnowledgeGraph, path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in g.triples:
            fh.write("\t".join(g.named(t)) + "\n")


@dataclass
class QuestionRecord:
    id: str
    text: str
    tokens: list[str]
    topic_entities: list[int]
    answers: set[int]
    dependency_edges: list[tuple[int, int]] | None = None
    split: str | None = None
    flagged: bool = False
    problems: list[str] = field(default_factory=list)

    def to_json(self, g: KnowledgeGraph) -> dict:
        rec = {
            "id": self.id,
            "text": self.text,
            "tokens": list(self.tokens),
            "topic_entities": [g.entities.name(e) for e in self.topic_entities],
            "answers": sorted(g.entities.name(e) for e in self.answers),
        }
        if self.dependency_edges is not None:
            rec["dependency_edges"] = [list(e) for e in self.dependency_edges]
        if self.split is not None:
            rec["split"] = self.split
        return rec


@dataclass
class RecordError:
    line: int
    id: str | None
    message: str


REQUIRED_FIELDS = ("id", "text", "tokens", "topic_entities", "answers")


def parse_question(raw: dict, g: KnowledgeGraph) -> QuestionRecord:
    missing = [f for f in REQUIRED_FIELDS if f not in raw]
    if missing:
        raise ParseError(f"missing field(s) {', '.join(missing)}")
    tokens = [str(t) for t in raw["tokens"]]
    if not tokens:
        raise ParseError("empty token list")
    deps = raw.get("dependency_edges")
    if deps is not None:
        deps = [(int(h), int(d)) for h, d in deps]
        bad = [e for e in deps if not (0 <= e[0] < len(tokens) and 0 <= e[1] < len(tokens))]
        if bad:
            raise ParseError(f"dependency edge {list(bad[0])} out of range for {len(tokens)} tokens")
    problems = []
    topics, answers = [], set()
    for name in raw["topic_entities"]:
        idx = g.entities.get(name)
        if idx is None:
            problems.append(f"unknown topic entity {name}")
        else:
            topics.append(idx)
    for name in raw["answers"]:
        idx = g.entities.get(name)
        if idx is None:
            problems.append(f"unknown answer entity {name}")
        else:
            answers.add(idx)
    if not topics:
        problems.append("no resolvable topic entity")
    return QuestionRecord(
        id=str(raw["id"]),
        text=str(raw["text"]),
        tokens=tokens,
        topic_entities=topics,
        answers=answers,
        dependency_edges=deps,
        split=raw.get("split"),
        flagged=bool(problems),
        problems=problems,
    )


def load_questions(path, g: KnowledgeGraph) -> tuple[list[QuestionRecord], list[RecordError]]:
    """Read line-delimited JSON question records.

    Returns ``(records, errors)``.  Malformed records land in ``errors``;
    records mentioning entities unknown to ``g`` are kept but flagged.
    """
    records, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rid = None
            try:
                raw = json.loads(line)
                if not isinstance(raw, dict):
                    raise ParseError("record is not an object")
                rid = raw.get("id")
                rec = parse_question(raw, g)
            except (ParseError, json.JSONDecodeError, TypeError, ValueError) as exc:
                errors.append(RecordError(lineno, None if rid is None else str(rid), str(exc)))
                continue
            for problem in rec.problems:
                log.warning("question %s: %s; flagged unanswerable", rec.id, problem)
            records.append(rec)
    return records, errors


@dataclass
class KSG:
    """Question-specific subgraph: a node set and the triples induced on it."""

    nodes: frozenset
    triples: list[Triple]

    def __contains__(self, e) -> bool:
        return e in self.nodes

    def out_edges(self) -> dict[int, list[tuple[int, int]]]:
        adj: dict[int, list] = {}
        for s, r, o in self.triples:
            adj.setdefault(s, []).append((r, o))
        for lst in adj.values():
            lst.sort()
        return adj


def khop_retrieve(g: KnowledgeGraph, topics: list[int], k: int = 2) -> KSG:
    """All entities within ``k`` hops of a topic, ignoring edge direction, plus induced triples."""
    if not topics:
        raise ValueError("khop_retrieve needs at least one topic entity")
    if k < 0:
        raise ValueError("hop count must be >= 0")
    for t in topics:
        if not 0 <= t < g.num_entities:
            raise KeyError(f"topic entity id {t} not in graph")
    depth = {t: 0 for t in topics}
    queue = deque(topics)
    while queue:
        u = queue.popleft()
        if depth[u] == k:
            continue
        for _, v in g.successors(u) + g.predecessors(u):
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    nodes = frozenset(depth)
    triples = sorted(
        Triple(s, r, o) for s in nodes for r, o in g.successors(s) if o in nodes
    )
    return KSG(nodes, triples)
