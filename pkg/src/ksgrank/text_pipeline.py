"""Question graphs, graphized/linearized sub-KSGs, and word embeddings."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .kg_store import KnowledgeGraph, QuestionRecord, Triple

log = logging.getLogger(__name__)

_REL_SPLIT = re.compile(r"[._]")


@dataclass
class QuestionGraph:
    nodes: list[str]
    edges: list[tuple[int, int]]


def build_question_graph(rec: QuestionRecord) -> QuestionGraph:
    """Dependency edges when the record has them (labels dropped), else a left-to-right chain."""
    n = len(rec.tokens)
    if rec.dependency_edges is not None:
        edges = sorted(set((int(h), int(d)) for h, d in rec.dependency_edges))
    else:
        edges = [(i, i + 1) for i in range(n - 1)]
    return QuestionGraph(list(rec.tokens), edges)


def relation_tokens(relation: str) -> list[str]:
    return [t for t in _REL_SPLIT.split(relation) if t]


def entity_tokens(entity: str, names: Mapping[str, str] | None = None) -> list[str]:
    if names and entity in names:
        return names[entity].split()
    return [entity]


@dataclass
class GraphizedSubKSG:
    """Entities and per-triple relation nodes, with edges subject->relation->object."""

    nodes: list[list[str]]
    edges: list[tuple[int, int]]
    entity_ids: list[int]          # KG id of node i for i < len(entity_ids)

    @property
    def num_entities(self) -> int:
        return len(self.entity_ids)


def graphize_triples(triples: Iterable[Triple], g: KnowledgeGraph,
                     names: Mapping[str, str] | None = None,
                     entities: Iterable[int] | None = None) -> GraphizedSubKSG:
    triples = list(triples)
    order: list[int] = list(entities) if entities is not None else []
    seen = set(order)
    for s, _, o in triples:
        for e in (s, o):
            if e not in seen:
                seen.add(e)
                order.append(e)
    index = {e: i for i, e in enumerate(order)}
    nodes = [entity_tokens(g.entities.name(e), names) for e in order]
    edges = []
    for s, r, o in triples:
        rel = len(nodes)
        nodes.append(relation_tokens(g.relations.name(r)))
        edges.append((index[s], rel))
        edges.append((rel, index[o]))
    return GraphizedSubKSG(nodes, edges, order)


def graphize_subksg(s, g: KnowledgeGraph, names: Mapping[str, str] | None = None) -> GraphizedSubKSG:
    if not s.edges:
        raise ValueError("cannot graphize an empty sub-KSG")
    return graphize_triples(s.edges, g, names, entities=s.nodes)


def linearize_subksg(s, g: KnowledgeGraph, names: Mapping[str, str] | None = None) -> list[str]:
    """Subject, relation, and object tokens of each triple, in path order then child order."""
    tokens = []
    for subj, rel, obj in s.edges:
        tokens += entity_tokens(g.entities.name(subj), names)
        tokens += relation_tokens(g.relations.name(rel))
        tokens += entity_tokens(g.entities.name(obj), names)
    return tokens


class EmbeddingError(ValueError):
    pass


class EmbeddingTable:
    def __init__(self, vocab: dict[str, int], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(vocab):
            raise EmbeddingError(f"matrix shape {matrix.shape} does not match vocabulary of {len(vocab)}")
        self.vocab = vocab
        self.matrix = matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.vocab)

    def __contains__(self, token) -> bool:
        return token in self.vocab

    def lookup(self, tokens: list[str]) -> tuple[list[int], int]:
        """In-vocabulary indices and the total token count (OOV tokens count as zero vectors)."""
        return [self.vocab[t] for t in tokens if t in self.vocab], len(tokens)

    def save(self, path):
        inv = sorted(self.vocab, key=self.vocab.get)
        with open(path, "w", encoding="utf-8") as fh:
            for tok in inv:
                vals = " ".join(repr(float(v)) for v in self.matrix[self.vocab[tok]])
                fh.write(f"{tok} {vals}\n")


def embed_node(tokens: list[str], table: EmbeddingTable) -> np.ndarray:
    if not tokens:
        raise ValueError("embed_node needs at least one token")
    idx, n = table.lookup(tokens)
    if not idx:
        return np.zeros(table.dim)
    return table.matrix[idx].sum(axis=0) / n


def load_embeddings(path, vocabulary: Iterable[str] | None = None) -> EmbeddingTable:
    """Read ``token v1 ... vD`` lines; keep only ``vocabulary`` tokens when given."""
    wanted = None if vocabulary is None else set(vocabulary)
    vocab: dict[str, int] = {}
    rows = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                if line.strip():
                    raise EmbeddingError(f"{path}:{lineno}: no vector values")
                continue
            if dim is None:
                dim = len(parts) - 1
            elif len(parts) - 1 != dim:
                raise EmbeddingError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            tok = parts[0]
            if (wanted is not None and tok not in wanted) or tok in vocab:
                continue
            vocab[tok] = len(rows)
            rows.append(np.asarray(parts[1:], dtype=np.float64))
    if dim is None:
        raise EmbeddingError(f"{path}: empty embedding file")
    if wanted is not None:
        missing = wanted - set(vocab)
        if missing:
            log.info("%d corpus tokens have no embedding; they embed as zero vectors", len(missing))
    matrix = np.vstack(rows) if rows else np.zeros((0, dim))
    return EmbeddingTable(vocab, matrix)


def load_entity_names(path) -> dict[str, str]:
    names = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            ent, _, name = line.rstrip("\n").partition("\t")
            names[ent] = name
    return names


# --- model inputs ---------------------------------------------------------

@dataclass
class TokenGroups:
    """Embedding-table row indices per node/token and the divisor for each mean."""

    groups: list[np.ndarray]
    counts: list[int]

    def __len__(self):
        return len(self.groups)


@dataclass
class GraphInput:
    nodes: TokenGroups
    adjacency: np.ndarray      # adjacency[v, u] = number of edges v -> u


@dataclass
class SequenceInput:
    tokens: TokenGroups


def token_groups(token_lists: list[list[str]], table: EmbeddingTable) -> TokenGroups:
    groups, counts = [], []
    for toks in token_lists:
        idx, n = table.lookup(toks)
        groups.append(np.asarray(idx, dtype=np.intp))
        counts.append(max(n, 1))
    return TokenGroups(groups, counts)


def adjacency_matrix(n: int, edges: Iterable[tuple[int, int]]) -> np.ndarray:
    a = np.zeros((n, n))
    for u, v in edges:
        a[u, v] += 1.0
    return a


def question_inputs(rec: QuestionRecord, table: EmbeddingTable) -> tuple[GraphInput, SequenceInput]:
    qg = build_question_graph(rec)
    nodes = token_groups([[t] for t in qg.nodes], table)
    return GraphInput(nodes, adjacency_matrix(len(qg.nodes), qg.edges)), SequenceInput(nodes)


def subksg_inputs(s, g: KnowledgeGraph, table: EmbeddingTable,
                  names: Mapping[str, str] | None = None) -> tuple[GraphInput, SequenceInput]:
    gs = graphize_subksg(s, g, names)
    graph = GraphInput(token_groups(gs.nodes, table), adjacency_matrix(len(gs.nodes), gs.edges))
    seq = linearize_subksg(s, g, names)
    return graph, SequenceInput(token_groups([[t] for t in seq], table))


def corpus_vocabulary(questions: Iterable[QuestionRecord], subksgs: Iterable, g: KnowledgeGraph,
                      names: Mapping[str, str] | None = None) -> set[str]:
    vocab = set()
    for q in questions:
        vocab.update(q.tokens)
    for s in subksgs:
        vocab.update(linearize_subksg(s, g, names))
    return vocab

