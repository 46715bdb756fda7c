"""Merge top-ranked sub-KSGs and pick answers by node classification.

The classifier is a question-conditioned BiGGNN: every node of the merged
graph starts from ``[word embedding; r_q]`` where ``r_q`` is the question
graph embedding, and each entity node's final state goes through
``sigmoid(W h + b)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .biggnn import BiGGNN, BiGGNNConfig
from .kg_store import KSG, KnowledgeGraph, QuestionRecord, Triple
from .numerics import AdamState, Linear, ParameterSet, Tensor, adam_step, ops
from .ranker import RankedList
from .text_pipeline import (EmbeddingTable, adjacency_matrix, graphize_triples, question_inputs,
                            token_groups)

log = logging.getLogger(__name__)


@dataclass
class MergedGraph:
    nodes: list[int]                         # ascending entity id
    edges: list[Triple]                      # sorted, deduplicated
    provenance: dict[int, list] = field(default_factory=dict)   # node -> contributing anchors

    def contains_any(self, entities) -> bool:
        return not set(self.nodes).isdisjoint(entities)


def merge_topk(ranked: RankedList, k: int) -> MergedGraph:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranked.items:
        raise ValueError(f"question {ranked.question_id}: empty ranked list")
    nodes, edges = set(), set()
    provenance: dict[int, list] = {}
    for s, _ in ranked.items[:k]:
        nodes.update(s.nodes)
        edges.update(s.edges)
        for n in s.nodes:
            provenance.setdefault(n, []).append(s.anchor)
    return MergedGraph(sorted(nodes), sorted(edges), provenance)


def full_graph(ksg: KSG) -> MergedGraph:
    """The whole retrieved KSG in merged-graph form (the no-ranking input regime)."""
    return MergedGraph(sorted(ksg.nodes), sorted(set(ksg.triples)), {})


@dataclass
class NodePrediction:
    node: int
    probability: float
    selected: bool


@dataclass
class AnswererConfig:
    graph_hidden: int = 128
    graph_layers: int = 2
    lr: float = 5e-4
    epochs: int = 30
    patience: int = 5
    threshold: float = 0.5
    seed: int = 0


class AnswerSelector:
    def __init__(self, config: AnswererConfig, table: EmbeddingTable, g: KnowledgeGraph,
                 names: Mapping[str, str] | None = None):
        self.config, self.table, self.g, self.names = config, table, g, names
        self.params = ParameterSet(config.seed)
        self.embeddings = Tensor(table.matrix)
        d = config.graph_hidden
        self.question_encoder = BiGGNN(self.params, "answer.question",
                                       BiGGNNConfig(d, config.graph_layers, table.dim))
        self.node_encoder = BiGGNN(self.params, "answer.graph",
                                   BiGGNNConfig(d, config.graph_layers, table.dim + 2 * d))
        self.classifier = Linear(self.params, "answer.classifier", 2 * d, 1)
        self._cache: dict = {}

    def _graph_inputs(self, merged: MergedGraph):
        gz = graphize_triples(merged.edges, self.g, self.names, entities=merged.nodes)
        return token_groups(gz.nodes, self.table), adjacency_matrix(len(gz.nodes), gz.edges), len(merged.nodes)

    def logits(self, merged: MergedGraph, question: QuestionRecord) -> Tensor:
        """One logit per entity node, in ``merged.nodes`` order."""
        if not merged.nodes:
            raise ValueError("cannot classify an empty graph")
        q_graph, _ = question_inputs(question, self.table)
        rq = self.question_encoder.encode(
            ops.mean_rows(self.embeddings, q_graph.nodes.groups, q_graph.nodes.counts),
            q_graph.adjacency).graph
        groups, adjacency, n_entities = self._graph_inputs(merged)
        words = ops.mean_rows(self.embeddings, groups.groups, groups.counts)
        cond = ops.matmul(Tensor(np.ones((len(groups), 1))), ops.reshape(rq, (1, rq.shape[0])))
        enc = self.node_encoder.encode(ops.concat([words, cond], axis=-1), adjacency)
        return ops.reshape(self.classifier(enc.nodes[:n_entities]), (n_entities,))

    def classify_nodes(self, merged: MergedGraph, question: QuestionRecord) -> list[NodePrediction]:
        z = self.logits(merged, question).data
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        return [NodePrediction(int(n), float(pi), bool(pi >= self.config.threshold))
                for n, pi in zip(merged.nodes, p)]


def select_answers(preds: Sequence[NodePrediction], threshold: float = 0.5) -> tuple[set, int]:
    """Thresholded node set and the top-1 node (ties to the smallest id)."""
    if not preds:
        raise ValueError("no predictions to select from")
    chosen = {p.node for p in preds if p.probability >= threshold}
    top = min(preds, key=lambda p: (-p.probability, p.node)).node
    return chosen, top


def bce_loss(logits: Tensor, labels) -> Tensor:
    return ops.bce_with_logits(logits, np.asarray(labels, dtype=float))


@dataclass
class AnswerExample:
    question: QuestionRecord
    graph: MergedGraph

    @property
    def labels(self) -> np.ndarray:
        return np.array([1.0 if n in self.question.answers else 0.0 for n in self.graph.nodes])


def hits_at_1(model: AnswerSelector, examples: Sequence[AnswerExample]) -> float:
    if not examples:
        return 0.0
    hits = 0
    for ex in examples:
        _, top = select_answers(model.classify_nodes(ex.graph, ex.question))
        hits += top in ex.question.answers
    return hits / len(examples)


def train_answerer(examples: Sequence[AnswerExample], dev: Sequence[AnswerExample], config: AnswererConfig,
                   table: EmbeddingTable, g: KnowledgeGraph, names: Mapping[str, str] | None = None,
                   on_epoch=None) -> tuple[AnswerSelector, list[dict]]:
    """Per-example BCE with Adam; early stopping on dev Hits@1, ties going to lower dev loss.

    The best parameters seen are restored before returning.
    """
    usable = []
    for ex in examples:
        if not ex.graph.nodes:
            log.warning("question %s: empty graph, skipped", ex.question.id)
            continue
        usable.append(ex)
    if not usable:
        raise ValueError("no usable answer-selection examples")
    model = AnswerSelector(config, table, g, names)
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    history, best, best_state, stale = [], (float("-inf"),), model.params.state(), 0
    dev = [ex for ex in dev if ex.graph.nodes] or usable
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for i in rng.permutation(len(usable)):
            ex = usable[i]
            loss = bce_loss(model.logits(ex.graph, ex.question), ex.labels)
            model.params.zero_grad()
            loss.backward()
            adam_step(model.params, state)
            total += float(loss.data)
        dev_loss = sum(float(bce_loss(model.logits(ex.graph, ex.question), ex.labels).data) for ex in dev)
        dev_loss /= len(dev)
        hits = hits_at_1(model, dev)
        score = (hits, -dev_loss)        # Hits@1 first, lower dev loss breaks ties
        entry = {"epoch": epoch, "train_loss": total / len(usable), "dev_hits": hits, "dev_loss": dev_loss}
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        if score > best:
            best, best_state, stale = score, model.params.state(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.params.load_state(best_state)
    return model, history
