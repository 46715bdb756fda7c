"""Oracle suites behind ``ksgrank selftest`` and ``ksgrank gradcheck``.

Each check returns a :class:`CheckResult`; nothing here raises on a failed
check, so a report always covers every suite.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import evalmetrics, fixtures, oracles
from .biggnn import BiGGNN, BiGGNNConfig
from .ebimpm import EBiMPM, EBiMPMConfig
from .kg_store import KSG, KnowledgeGraph, QuestionRecord, Triple, khop_retrieve, load_questions, load_triples
from .numerics import ParameterSet, Tensor, adam_step, AdamState, gradcheck, ops
from .numerics.layers import gru_cell, lstm
from .partition import partition_ksg, partition_question
from .ranker import Featurizer, GGEModel, RankerConfig, TrainingPair, batch_loss, make_pairs
from .text_pipeline import EmbeddingTable, load_embeddings, load_entity_names

TOL = 1e-4
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(name, fn) -> CheckResult:
    start = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:                       # a crash is a failed check, not a crashed report
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(passed), detail, time.perf_counter() - start)


# --- partition ------------------------------------------------------------

def partition_oracle(n_graphs: int = 200, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(n_graphs):
        n, triples = oracles.random_digraph(rng)
        root = int(rng.integers(n))
        answers = {int(a) for a in rng.integers(n, size=int(rng.integers(0, 3)))}
        ksg = KSG(frozenset(range(n)), [Triple(*t) for t in triples])
        for literal in (False, True):
            got = [{"anchor": s.anchor, "nodes": list(s.nodes), "edges": [tuple(e) for e in s.edges],
                    "label": s.label}
                   for s in partition_ksg(ksg, root, answers, "q", literal_labels=literal)]
            want = oracles.literal_partition(n, triples, root, answers, literal_labels=literal)
            mismatches += got != want
    return mismatches == 0, f"{n_graphs} random graphs, {mismatches} mismatches"


def school_check() -> tuple[bool, str]:
    paths = fixtures.school_paths()
    g = load_triples(paths["triples"])
    (q,), _ = load_questions(paths["questions"], g)
    res = partition_question(khop_retrieve(g, q.topic_entities, 2), q.id, q.topic_entities, q.answers)
    got = sorted(([g.entities.name(n) for n in s.nodes], s.label) for s in res.subksgs)
    want = sorted([(fixtures.SCHOOL_EDUCATION_NODES, 1), (fixtures.SCHOOL_NAMESAKE_NODES, 0)])
    return got == want, f"sub-KSGs {got}"


# --- gradients ------------------------------------------------------------

def _sumsq(x):
    return ops.sum(ops.mul(x, x))


def _op_cases(rng):
    t = lambda *s: Tensor(rng.normal(size=s))           # noqa: E731
    pos = lambda *s: Tensor(rng.uniform(0.5, 2.0, size=s))   # noqa: E731
    table = t(6, 3)
    groups = [np.array([0, 2]), np.array([], dtype=np.intp), np.array([5, 5, 1])]
    return {
        "add": (lambda a, b: _sumsq(ops.add(a, b)), [t(3, 4), t(4)]),
        "sub": (lambda a, b: _sumsq(ops.sub(a, b)), [t(3, 4), t(3, 1)]),
        "mul": (lambda a, b: ops.sum(ops.mul(a, b)), [t(2, 3), t(2, 3)]),
        "matmul": (lambda a, b: ops.sum(ops.tanh(ops.matmul(a, b))), [t(3, 4), t(4, 2)]),
        "matmul_vec": (lambda a, b: ops.sum(ops.tanh(ops.matmul(a, b))), [t(4), t(4, 3)]),
        "concat": (lambda a, b: ops.sum(ops.tanh(ops.concat([a, b], axis=-1))), [t(2, 3), t(2, 2)]),
        "stack": (lambda a, b: ops.sum(ops.tanh(ops.stack([a, b]))), [t(3), t(3)]),
        "getitem": (lambda a: ops.sum(ops.tanh(a[1:, :2])), [t(3, 4)]),
        "take_rows": (lambda a: ops.sum(ops.tanh(ops.take_rows(a, np.array([2, 0, 2])))), [t(3, 4)]),
        "reshape": (lambda a: ops.sum(ops.tanh(ops.reshape(a, (4, 3)))), [t(3, 4)]),
        "transpose": (lambda a, b: ops.sum(ops.matmul(ops.transpose(a), b)), [t(3, 2), t(3, 4)]),
        "sigmoid": (lambda a: ops.sum(ops.sigmoid(a)), [t(3, 3)]),
        "tanh": (lambda a: ops.sum(ops.tanh(a)), [t(3, 3)]),
        "exp": (lambda a: ops.sum(ops.exp(a)), [t(3, 3)]),
        "log": (lambda a: ops.sum(ops.log(a)), [pos(3, 3)]),
        "softmax": (lambda a, b: ops.sum(ops.mul(ops.softmax(a, axis=1), b)), [t(3, 4), t(3, 4)]),
        "mean": (lambda a: ops.mean(ops.tanh(a)), [t(3, 4)]),
        "max": (lambda a: ops.sum(ops.max(a, axis=0)), [t(5, 3)]),
        "cosine": (lambda a, b: ops.sum(ops.cosine(a, b)), [t(3, 4), t(3, 4)]),
        "perspective_cosine": (lambda a, b, w: ops.sum(ops.perspective_cosine(a, b, w)),
                               [t(3, 4), t(3, 4), t(2, 4)]),
        "squared_error": (lambda a: ops.sum(ops.squared_error(a, np.ones(3))), [t(3)]),
        "bce_with_logits": (lambda a: ops.bce_with_logits(a, np.array([1.0, 0.0, 1.0])), [t(3)]),
        "mean_rows": (lambda tb: ops.sum(ops.tanh(ops.mean_rows(tb, groups, [2, 1, 3]))), [table]),
        "gru_cell": (lambda m, h, w, u, b: _sumsq(gru_cell(m, h, w, u, b)),
                     [t(3, 2), t(3, 4), t(2, 12), t(4, 12), t(12)]),
        "lstm": (lambda x, wx, wh, b: ops.sum(ops.tanh(lstm(x, wx, wh, b))),
                 [t(4, 3), t(3, 8), t(2, 8), t(8)]),
        "lstm_reverse": (lambda x, wx, wh, b: ops.sum(ops.tanh(lstm(x, wx, wh, b, reverse=True))),
                         [t(4, 3), t(3, 8), t(2, 8), t(8)]),
    }


def tiny_gge_setup(seed: int = 0, hidden: int = 4, perspectives: int = 2, word_dim: int = 4):
    """A 2-node sub-KSG, a 3-token question, and a small G-G-E model."""
    rng = np.random.default_rng(seed)
    g = KnowledgeGraph.from_named_triples([("m.a", "people.person.education", "m.b")])
    q = QuestionRecord("q", "where school ?", ["where", "school", "?"], [0], {1})
    (s,) = partition_ksg(khop_retrieve(g, [0], 2), 0, {1}, "q")
    vocab = ["where", "school", "?", "m.a", "m.b", "people", "person", "education"]
    table = EmbeddingTable({w: i for i, w in enumerate(vocab)}, rng.normal(size=(len(vocab), word_dim)))
    feats = Featurizer(g, table)
    cfg = RankerConfig(graph_hidden=hidden, context_dim=hidden, perspectives=perspectives, seed=seed)
    model = GGEModel(cfg, table)
    return model, feats, q, s


def gge_loss_error(seed: int = 0, corrupt=None) -> float:
    model, feats, q, s = tiny_gge_setup(seed)
    pair = TrainingPair(q.id, s.key, 1)
    params = [t for _, t in model.params.items()]
    for p in params:   # move away from zero biases so every gate is exercised
        p.data += 0.1 * np.random.default_rng(seed + 1).normal(size=p.data.shape)

    def f(*_):
        return batch_loss(model, feats, {q.id: q}, {s.key: s}, [pair])

    return gradcheck(f, params, eps=EPS, corrupt=corrupt)


def gradient_report(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    errors = {name: gradcheck(fn, inputs, eps=EPS) for name, (fn, inputs) in _op_cases(rng).items()}
    enc = BiGGNN(ParameterSet(seed), "g", BiGGNNConfig(hidden=3, layers=2, input_dim=2))
    feats = Tensor(rng.normal(size=(4, 2)))
    adj = (rng.random((4, 4)) < 0.4).astype(float)
    errors["biggnn"] = gradcheck(lambda x: ops.sum(ops.tanh(enc.encode(x, adj).graph)), [feats], eps=EPS)
    match = EBiMPM(ParameterSet(seed), "m", EBiMPMConfig(input_dim=3, context_dim=4, perspectives=2,
                                                         aggregation_dim=4))
    qx, sx = Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=(2, 3)))
    errors["ebimpm"] = gradcheck(
        lambda a, b: ops.sum(ops.tanh(ops.concat([match(a, b).question, match(a, b).subgraph]))),
        [qx, sx], eps=EPS)
    errors["gge_loss"] = gge_loss_error(seed)
    return errors


def gradient_check(seed: int = 0) -> tuple[bool, str]:
    errors = gradient_report(seed)
    worst = max(errors, key=errors.get)
    control = gge_loss_error(seed, corrupt=lambda a: a * 1.01)
    ok = errors[worst] <= TOL and control > TOL
    return ok, (f"{len(errors)} cases, worst {worst} {errors[worst]:.2e} (tol {TOL:g}); "
                f"corrupted x1.01 control {control:.2e}")


# --- metrics and shapes ---------------------------------------------------

def metric_oracle(seed: int = 0, n_lists: int = 1000) -> tuple[bool, str]:
    lists = oracles.random_ranked_lists(np.random.default_rng(seed), n_lists)
    bad = []
    recalls = []
    for k in range(1, 31):
        r = evalmetrics.recall_at_k(lists, k)
        recalls.append(r)
        if r != oracles.brute_recall(lists, k):
            bad.append(f"R@{k}")
    for mode in ("first", "all"):
        if evalmetrics.mrr(lists, mode) != oracles.brute_mrr(lists, mode):
            bad.append(f"MRR[{mode}]")
    monotone = all(a <= b for a, b in zip(recalls, recalls[1:]))
    return not bad and monotone, f"{n_lists} lists, mismatches {bad or 'none'}, monotone {monotone}"


def dimension_contracts(seed: int = 0, trials: int = 20) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        hidden, n, d_in = (int(x) for x in rng.integers(1, 7, size=3))
        enc = BiGGNN(ParameterSet(seed), "g", BiGGNNConfig(hidden, int(rng.integers(1, 3)), d_in))
        out = enc.encode(rng.normal(size=(n, d_in)), (rng.random((n, n)) < 0.3).astype(float))
        if out.nodes.shape != (n, 2 * hidden) or out.graph.shape != (2 * hidden,):
            return False, f"BiGGNN D={hidden} N={n}: {out.nodes.shape}, {out.graph.shape}"
        d, l, l1, l2 = 2 * int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 6)), \
            int(rng.integers(1, 6))
        m = EBiMPM(ParameterSet(seed), "m", EBiMPMConfig(d_in, d, l, d))
        q, s = m.context_encode(rng.normal(size=(l1, d_in)), rng.normal(size=(l2, d_in)))
        q_bar, s_bar = m.multi_perspective_match(q, s)
        if q_bar.shape != (l1, 8 * l) or s_bar.shape != (l2, 8 * l):
            return False, f"matching l={l}: {q_bar.shape}, {s_bar.shape}"
    return True, f"{trials} randomized shape draws"


# --- overfitting ----------------------------------------------------------

def overfit_pairs(n_pairs: int = 20, seed: int = 0):
    """20 labelled pairs from the bundled synthetic dataset, half of them positive when possible."""
    paths = fixtures.synthetic_paths()
    g = load_triples(paths["triples"])
    questions, _ = load_questions(paths["questions"], g)
    names = load_entity_names(paths["entity_names"])
    subs = {q.id: partition_question(khop_retrieve(g, q.topic_entities, 2), q.id, q.topic_entities,
                                     q.answers).subksgs for q in questions}
    qids = [q.id for q in questions if q.split == "train"]
    pool = make_pairs(qids, subs, "random", 1, seed)
    pos = [p for p in pool if p.label == 1]
    neg = [p for p in pool if p.label == 0]
    pairs = (pos[: n_pairs // 2] + neg)[:n_pairs]
    pairs = pairs + pos[n_pairs // 2:][: n_pairs - len(pairs)]
    table = load_embeddings(paths["embeddings"])
    feats = Featurizer(g, table, names)
    by_key = {s.key: s for lst in subs.values() for s in lst}
    return pairs, {q.id: q for q in questions}, by_key, feats


def overfit(epochs: int = 200, target: float = 0.01, seed: int = 0, lr: float = 5e-4) -> tuple[float, int, float]:
    """Full-batch Adam on 20 pairs with D=d=16, l=4; returns (final MSE, epochs used, seconds)."""
    start = time.perf_counter()
    pairs, questions, by_key, feats = overfit_pairs(seed=seed)
    model = GGEModel(RankerConfig(graph_hidden=16, context_dim=16, perspectives=4, seed=seed, lr=lr),
                     feats.table)
    state = AdamState(lr=lr)
    loss = float("inf")
    for epoch in range(1, epochs + 1):
        out = batch_loss(model, feats, questions, by_key, pairs)
        loss = float(out.data)
        if loss < target:
            return loss, epoch - 1, time.perf_counter() - start
        model.params.zero_grad()
        out.backward()
        adam_step(model.params, state)
    loss = float(batch_loss(model, feats, questions, by_key, pairs).data)
    return loss, epochs, time.perf_counter() - start


def overfit_check(seed: int = 0) -> tuple[bool, str]:
    loss, used, seconds = overfit(seed=seed)
    return loss < 0.01 and seconds < 60.0, f"MSE {loss:.4g} after {used} epochs in {seconds:.1f}s"


SUITES = {
    "partition-oracle": partition_oracle,
    "school-fixture": school_check,
    "gradients": gradient_check,
    "overfit": overfit_check,
    "metric-oracle": metric_oracle,
    "dimension-contracts": dimension_contracts,
}


def run_selftest(names=None) -> list[CheckResult]:
    return [_timed(name, SUITES[name]) for name in (names or SUITES)]
