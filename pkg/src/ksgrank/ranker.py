"""G-G-E ranking model, training-pair construction, training, and ranking.

The score of a (question, sub-KSG) pair is the cosine between
``[r_q; r_q']`` and ``[r_S; r_S']``, where ``r`` comes from the graph
encoders and ``r'`` from the sequence matcher.  The ``g-g`` and ``ebimpm``
modes drop one of the two halves.
"""
from __future__ import annotations

import logging
import time
import zlib
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer

from . import evalmetrics
from .biggnn import BiGGNN, BiGGNNConfig
from .ebimpm import EBiMPM, EBiMPMConfig
from .kg_store import KnowledgeGraph, QuestionRecord
from .numerics import AdamState, ParameterSet, Tensor, adam_step, ops
from .numerics.tensor import as_tensor
from .partition import SubKSG
from .text_pipeline import (EmbeddingTable, GraphInput, SequenceInput, linearize_subksg,
                            question_inputs, subksg_inputs)

log = logging.getLogger(__name__)

MODES = ("g-g-e", "g-g", "ebimpm")


class TrainingError(RuntimeError):
    pass


@dataclass
class RankerConfig:
    mode: str = "g-g-e"
    graph_hidden: int = 128          # D
    graph_layers: int = 2            # L
    context_dim: int = 128           # d
    perspectives: int = 20           # l
    share_graph_encoder: bool = False
    freeze_embeddings: bool = True
    target_mode: str = "01"          # "01" or "pm1" (labels rescaled to -1/+1)
    lr: float = 5e-4
    batch_size: int = 50
    epochs: int = 30
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown ranker mode {self.mode!r}; choose from {MODES}")
        if self.target_mode not in ("01", "pm1"):
            raise ValueError(f"unknown target mode {self.target_mode!r}")


@dataclass
class TrainingPair:
    question_id: str
    subksg: tuple            # SubKSG.key
    label: int


class GGEModel:
    """Holds the parameters and the encoders for one ranking mode."""

    def __init__(self, config: RankerConfig, table: EmbeddingTable):
        self.config = config
        self.params = ParameterSet(config.seed)
        if config.freeze_embeddings:
            self.embeddings = Tensor(table.matrix)
        else:
            self.embeddings = self.params.register("embeddings", Tensor(table.matrix.copy()))
        word = table.dim
        self.question_graph = self.subgraph_graph = self.matcher = None
        if config.mode in ("g-g-e", "g-g"):
            gcfg = BiGGNNConfig(config.graph_hidden, config.graph_layers, word)
            self.question_graph = BiGGNN(self.params, "graph.question", gcfg)
            self.subgraph_graph = (self.question_graph if config.share_graph_encoder
                                   else BiGGNN(self.params, "graph.subgraph", gcfg))
        if config.mode in ("g-g-e", "ebimpm"):
            mcfg = EBiMPMConfig(word, config.context_dim, config.perspectives, config.context_dim)
            self.matcher = EBiMPM(self.params, "match", mcfg)

    def features(self, groups) -> Tensor:
        return ops.mean_rows(self.embeddings, groups.groups, groups.counts)

    def representations(self, q_graph: GraphInput, q_seq: SequenceInput,
                        s_graph: GraphInput, s_seq: SequenceInput) -> tuple[Tensor, Tensor]:
        q_parts, s_parts = [], []
        if self.question_graph is not None:
            q_parts.append(self.question_graph.encode(self.features(q_graph.nodes), q_graph.adjacency).graph)
            s_parts.append(self.subgraph_graph.encode(self.features(s_graph.nodes), s_graph.adjacency).graph)
        if self.matcher is not None:
            out = self.matcher(self.features(q_seq.tokens), self.features(s_seq.tokens))
            q_parts.append(out.question)
            s_parts.append(out.subgraph)
        return ops.concat(q_parts, axis=0), ops.concat(s_parts, axis=0)

    def score(self, q_graph, q_seq, s_graph, s_seq) -> Tensor:
        rq, rs = self.representations(q_graph, q_seq, s_graph, s_seq)
        return cosine_score(rq, rs)


def cosine_score(rq, rs) -> Tensor:
    """cos(rq, rs); zero vectors score 0."""
    return ops.cosine(rq, rs)


def mse_loss(predictions, labels) -> Tensor:
    """Mean of ``(label - prediction)**2``."""
    predictions = as_tensor(predictions)
    labels = np.asarray(labels, dtype=float)
    if predictions.data.size == 0 or labels.size == 0:
        raise ValueError("mse_loss of an empty batch")
    if predictions.shape != labels.shape:
        raise ops.ShapeError(f"mse_loss: predictions {predictions.shape} vs labels {labels.shape}")
    return ops.mean(ops.squared_error(predictions, labels))


# --- inputs ---------------------------------------------------------------

class Featurizer:
    """Turns questions and sub-KSGs into cached model inputs."""

    def __init__(self, g: KnowledgeGraph, table: EmbeddingTable, names: Mapping[str, str] | None = None):
        self.g, self.table, self.names = g, table, names
        self._q: dict = {}
        self._s: dict = {}

    def question(self, rec: QuestionRecord):
        if rec.id not in self._q:
            self._q[rec.id] = question_inputs(rec, self.table)
        return self._q[rec.id]

    def subksg(self, s: SubKSG):
        if s.key not in self._s:
            self._s[s.key] = subksg_inputs(s, self.g, self.table, self.names)
        return self._s[s.key]

    def text(self, s: SubKSG) -> list[str]:
        return linearize_subksg(s, self.g, self.names)


def score_pair(model: GGEModel, feats: Featurizer, rec: QuestionRecord, s: SubKSG) -> Tensor:
    qg, qs = feats.question(rec)
    sg, ss = feats.subksg(s)
    return model.score(qg, qs, sg, ss)


# --- training pairs -------------------------------------------------------

def _question_rng(seed: int, question_id: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(question_id.encode("utf-8"))])


def sample_negatives_random(question_id: str, pool: Sequence[SubKSG], n: int = 20,
                            seed: int = 0) -> list[TrainingPair]:
    """Up to ``n`` distinct label-0 pairs drawn from ``pool`` (seeded per question)."""
    pool = sorted((s for s in pool if s.label == 0), key=lambda s: s.key)
    if not pool:
        log.warning("question %s: no negative sub-KSGs to sample", question_id)
        return []
    if len(pool) <= n:
        chosen = pool
    else:
        idx = np.sort(_question_rng(seed, question_id).choice(len(pool), size=n, replace=False))
        chosen = [pool[i] for i in idx]
    return [TrainingPair(question_id, s.key, 0) for s in chosen]


def tfidf_similarities(reference: list[str], candidates: list[list[str]]) -> np.ndarray:
    """TF-IDF cosine of each candidate token list against ``reference``.

    Uses scikit-learn's smoothed idf ``ln((1+n)/(1+df)) + 1`` over the
    reference plus candidates, with l2-normalised rows.
    """
    vec = TfidfVectorizer(analyzer=lambda toks: toks, lowercase=False)
    m = vec.fit_transform([reference] + candidates)
    return np.asarray((m[1:] @ m[0].T).todense()).reshape(-1)


def sample_negative_tfidf(question_id: str, positive: SubKSG, candidates: Sequence[SubKSG],
                          feats: Featurizer) -> TrainingPair:
    """The answer-free candidate whose text is most TF-IDF-similar to the positive."""
    pool = sorted((s for s in candidates if s.label == 0 and s.key != positive.key), key=lambda s: s.key)
    if not pool:
        raise ValueError(f"question {question_id}: no answer-free candidate for a TF-IDF negative")
    sims = tfidf_similarities(feats.text(positive), [feats.text(s) for s in pool])
    best = int(np.argmax(sims))       # first maximum = smallest key
    return TrainingPair(question_id, pool[best].key, 0)


def make_pairs(question_ids: Sequence[str], subksgs: Mapping[str, Sequence[SubKSG]],
               mode: str = "random", n_negatives: int = 20, seed: int = 0,
               feats: Featurizer | None = None) -> list[TrainingPair]:
    """One positive plus negatives per covered question; uncovered questions are skipped."""
    pairs = []
    for qid in question_ids:
        subs = sorted(subksgs.get(qid, ()), key=lambda s: s.key)
        positives = [s for s in subs if s.label == 1]
        if not positives:
            continue
        pos = positives[int(_question_rng(seed, qid).integers(len(positives)))]
        pairs.append(TrainingPair(qid, pos.key, 1))
        if mode == "random":
            pairs.extend(sample_negatives_random(qid, subs, n_negatives, seed))
        elif mode == "tfidf":
            if any(s.label == 0 for s in subs):
                pairs.append(sample_negative_tfidf(qid, pos, subs, feats))
        else:
            raise ValueError(f"unknown negative sampling mode {mode!r}")
    return pairs


# --- ranking --------------------------------------------------------------

@dataclass
class RankedList:
    question_id: str
    items: list              # [(SubKSG, score)] best first

    @property
    def labels(self) -> list[int]:
        return [s.label for s, _ in self.items]


def order_scored(question_id: str, scored: Sequence[tuple[SubKSG, float]]) -> RankedList:
    items = sorted(scored, key=lambda it: (-it[1], it[0].anchor, it[0].root))
    return RankedList(question_id, list(items))


def rank(model: GGEModel, feats: Featurizer, rec: QuestionRecord, candidates: Sequence[SubKSG]) -> RankedList:
    if not candidates:
        raise ValueError(f"question {rec.id}: nothing to rank")
    scored = [(s, float(score_pair(model, feats, rec, s).data)) for s in candidates]
    return order_scored(rec.id, scored)


# --- training -------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_mrr: float
    wall_time: float


@dataclass
class TrainResult:
    model: GGEModel
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev_mrr: float = float("-inf")


def dev_mrr(model: GGEModel, feats: Featurizer, dev: Sequence[tuple[QuestionRecord, Sequence[SubKSG]]]) -> float:
    lists = {rec.id: rank(model, feats, rec, subs).labels for rec, subs in dev if subs}
    return evalmetrics.mrr(lists)


def train(pairs: Sequence[TrainingPair], questions: Mapping[str, QuestionRecord],
          subksgs: Mapping[tuple, SubKSG], dev: Sequence[tuple[QuestionRecord, Sequence[SubKSG]]],
          feats: Featurizer, config: RankerConfig, model: GGEModel | None = None,
          on_epoch=None) -> TrainResult:
    """Mini-batch Adam on the MSE loss with per-epoch dev MRR and early stopping.

    Returns the model restored to its best-dev-MRR parameters.
    """
    if not pairs:
        raise ValueError("no training pairs")
    if not dev:
        raise ValueError("empty dev set")
    model = model or GGEModel(config, feats.table)
    params = model.params
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model)
    best_state = params.state()
    stale = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(pairs))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[lo: lo + config.batch_size]]
            loss = batch_loss(model, feats, questions, subksgs, batch, config.target_mode)
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {lo}: "
                    f"questions {[p.question_id for p in batch]}")
            params.zero_grad()
            loss.backward()
            adam_step(params, state)
            total += float(loss.data) * len(batch)
        score = dev_mrr(model, feats, dev)
        entry = EpochLog(epoch, total / len(pairs), score, time.perf_counter() - start)
        result.log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        log.info("epoch %d  loss %.5f  dev MRR %.4f", epoch, entry.train_loss, score)
        if score > result.best_dev_mrr:
            result.best_dev_mrr, result.best_epoch = score, epoch
            best_state = params.state()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    params.load_state(best_state)
    return result


def batch_loss(model, feats, questions, subksgs, batch: Sequence[TrainingPair], target_mode="01") -> Tensor:
    scores = ops.stack([
        score_pair(model, feats, questions[p.question_id], subksgs[p.subksg]) for p in batch
    ])
    labels = np.array([p.label for p in batch], dtype=float)
    if target_mode == "pm1":
        labels = 2.0 * labels - 1.0
    return mse_loss(scores, labels)


def config_dict(config: RankerConfig) -> dict:
    return asdict(config)
