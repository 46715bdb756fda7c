"""Staged pipeline over a run directory.

Every stage reads the artifacts of earlier stages from the run directory,
writes its own, and records them in ``manifest.json``.  Stages are
deterministic given the configuration and seed, so re-running one with
unchanged inputs rewrites byte-identical artifacts (the training logs carry
wall-clock times and are the exception).
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from . import evalmetrics
from .answer_select import (AnswerExample, AnswererConfig, AnswerSelector, MergedGraph, full_graph,
                            merge_topk, select_answers, train_answerer)
from .kg_store import KSG, KnowledgeGraph, QuestionRecord, Triple, khop_retrieve, load_questions, \
    load_triples, parse_question, save_triples
from .numerics import load_checkpoint, save_checkpoint
from .partition import SubKSG, partition_question
from .ranker import (Featurizer, GGEModel, RankedList, RankerConfig, TrainingPair, config_dict,
                     make_pairs, order_scored, score_pair, train)
from .text_pipeline import (EmbeddingTable, entity_tokens, load_embeddings, load_entity_names,
                            relation_tokens)

log = logging.getLogger(__name__)

STAGES = ("ingest", "retrieve", "partition", "make-pairs", "train-ranker", "rank", "merge",
          "train-answerer", "evaluate")
STAGE_VERSIONS = {stage: 1 for stage in STAGES}
PRODUCERS = {
    "kg.tsv": "ingest",
    "questions.jsonl": "ingest",
    "ingest_errors.jsonl": "ingest",
    "ksg.jsonl": "retrieve",
    "subksgs.jsonl": "partition",
    "partition_stats.json": "partition",
    "pairs.jsonl": "make-pairs",
    "ranker.ckpt.json": "train-ranker",
    "train_log.jsonl": "train-ranker",
    "scores.tsv": "rank",
    "ranked.jsonl": "rank",
    "merged.jsonl": "merge",
    "answerer.ckpt.json": "train-answerer",
    "answerer_log.jsonl": "train-answerer",
    "predictions.jsonl": "evaluate",
    "metrics.json": "evaluate",
    "metrics.txt": "evaluate",
    "recall_curve.csv": "evaluate",
}

DEFAULT_CONFIG: dict[str, Any] = {
    "triples": None,
    "questions": None,
    "embeddings": None,
    "entity_names": None,
    "seed": None,
    "retrieval_hops": 2,
    "literal_labels": False,
    "split_fractions": [0.8, 0.1, 0.1],
    "negatives": "random",
    "n_negatives": 20,
    "ranker": config_dict(RankerConfig()),
    "answerer": {
        "graph_hidden": 128, "graph_layers": 2, "lr": 5e-4, "epochs": 30, "patience": 5,
        "threshold": 0.5, "train_regime": "top5",
    },
    "merge_k": [1, 3, 5],
    "recall_k": [1, 2, 3, 5, 10],
    "mrr_mode": "first",
    "hits_mode": "top1",
    "workers": 1,
}


class MissingInput(FileNotFoundError):
    pass


class ConfigError(ValueError):
    pass


# --- configuration --------------------------------------------------------

def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def set_path(config: dict, dotted: str, raw: str) -> dict:
    """Apply a ``a.b=value`` override; the value is parsed as JSON when it can be."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = config
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown configuration section {k!r} in {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown configuration key {dotted!r}")
    node[keys[-1]] = value
    return config


def resolve_seed(config: dict) -> int:
    if config.get("seed") is not None:
        return int(config["seed"])
    env = os.environ.get("KSGRANK_SEED")
    return int(env) if env else 0


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _regime_k(regime: str) -> int | None:
    if regime == "full":
        return None
    if regime.startswith("top") and regime[3:].isdigit():
        return int(regime[3:])
    raise ConfigError(f"unknown input regime {regime!r}; use 'full' or 'topK'")


# --- run directory --------------------------------------------------------

class Run:
    """A run directory plus lazily loaded stage artifacts."""

    def __init__(self, run_dir, config: dict | None = None):
        self.dir = Path(run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        stored = self.dir / "config.json"
        base = DEFAULT_CONFIG
        if stored.exists():
            base = merge_config(DEFAULT_CONFIG, json.loads(stored.read_text(encoding="utf-8")))
        self.config = merge_config(base, config or {})
        self.config["seed"] = resolve_seed(self.config)
        stored.write_text(json.dumps(self.config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.seed = self.config["seed"]
        self._cache: dict = {}

    def path(self, name: str) -> Path:
        return self.dir / name

    def require(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingInput(
                f"{p} not found; run `ksgrank {PRODUCERS[name]} --run-dir {self.dir}` first")
        return p

    def record(self, stage: str, outputs: list[str]) -> None:
        mpath = self.path("manifest.json")
        manifest = json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists() else {"stages": {}}
        manifest["config_hash"] = config_hash(self.config)
        manifest["seed"] = self.seed
        manifest["stages"][stage] = {
            "version": STAGE_VERSIONS[stage],
            "config_hash": manifest["config_hash"],
            "outputs": {name: _sha(self.path(name)) for name in outputs},
        }
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    # loaded artifacts
    @property
    def graph(self) -> KnowledgeGraph:
        if "graph" not in self._cache:
            self._cache["graph"] = load_triples(self.require("kg.tsv"))
        return self._cache["graph"]

    @property
    def questions(self) -> dict[str, QuestionRecord]:
        if "questions" not in self._cache:
            g = self.graph
            recs = []
            for raw in _read_jsonl(self.require("questions.jsonl")):
                rec = parse_question(raw, g)
                rec.flagged = rec.flagged or bool(raw.get("flagged", False))
                recs.append(rec)
            self._cache["questions"] = {r.id: r for r in recs}
        return self._cache["questions"]

    def split(self, name: str) -> list[QuestionRecord]:
        return [q for q in self.questions.values() if q.split == name]

    @property
    def names(self) -> dict[str, str] | None:
        if "names" not in self._cache:
            p = self.config.get("entity_names")
            self._cache["names"] = load_entity_names(p) if p else None
        return self._cache["names"]

    @property
    def ksgs(self) -> dict[str, KSG]:
        if "ksgs" not in self._cache:
            g, out = self.graph, {}
            for raw in _read_jsonl(self.require("ksg.jsonl")):
                nodes = frozenset(g.entities[n] for n in raw["nodes"])
                triples = [Triple(g.entities[s], g.relations[r], g.entities[o]) for s, r, o in raw["triples"]]
                out[raw["question_id"]] = KSG(nodes, triples)
            self._cache["ksgs"] = out
        return self._cache["ksgs"]

    @property
    def subksgs(self) -> dict[str, list[SubKSG]]:
        if "subksgs" not in self._cache:
            out: dict[str, list[SubKSG]] = {qid: [] for qid in self.questions}
            for raw in _read_jsonl(self.require("subksgs.jsonl")):
                s = SubKSG.from_json(raw, self.graph)
                out.setdefault(s.question_id, []).append(s)
            self._cache["subksgs"] = out
        return self._cache["subksgs"]

    @property
    def subksg_by_key(self) -> dict[tuple, SubKSG]:
        return {s.key: s for subs in self.subksgs.values() for s in subs}

    @property
    def table(self) -> EmbeddingTable:
        if "table" not in self._cache:
            path = self.config.get("embeddings")
            if not path:
                raise ConfigError("configuration key 'embeddings' is not set")
            g, names = self.graph, self.names
            vocab = set()
            for q in self.questions.values():
                vocab.update(q.tokens)
            for ksg in self.ksgs.values():
                for e in ksg.nodes:
                    vocab.update(entity_tokens(g.entities.name(e), names))
                for t in ksg.triples:
                    vocab.update(relation_tokens(g.relations.name(t.relation)))
            self._cache["table"] = load_embeddings(path, vocab)
        return self._cache["table"]

    @property
    def featurizer(self) -> Featurizer:
        if "feats" not in self._cache:
            self._cache["feats"] = Featurizer(self.graph, self.table, self.names)
        return self._cache["feats"]

    def ranker_config(self) -> RankerConfig:
        cfg = dict(self.config["ranker"])
        cfg["seed"] = self.seed
        return RankerConfig(**cfg)

    def answerer_config(self) -> AnswererConfig:
        cfg = {k: v for k, v in self.config["answerer"].items() if k != "train_regime"}
        return AnswererConfig(seed=self.seed, **cfg)


# --- stages ---------------------------------------------------------------

def assign_splits(records: list[QuestionRecord], fractions, seed: int) -> None:
    """Seeded train/dev/test assignment for records that arrive without a split."""
    todo = sorted((r for r in records if r.split is None), key=lambda r: r.id)
    if not todo:
        return
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or fr.sum() <= 0:
        raise ConfigError(f"split_fractions must be three non-negative numbers, got {fractions}")
    order = np.random.default_rng(seed).permutation(len(todo))
    bounds = np.round(np.cumsum(fr / fr.sum()) * len(todo)).astype(int)
    for pos, i in enumerate(order):
        todo[i].split = "train" if pos < bounds[0] else ("dev" if pos < bounds[1] else "test")


def stage_ingest(run: Run) -> dict:
    for key in ("triples", "questions"):
        if not run.config.get(key):
            raise ConfigError(f"configuration key {key!r} is not set")
    g = load_triples(run.config["triples"])
    records, errors = load_questions(run.config["questions"], g)
    assign_splits(records, run.config["split_fractions"], run.seed)
    save_triples(g, run.path("kg.tsv"))
    _write_jsonl(run.path("questions.jsonl"), (dict(r.to_json(g), flagged=r.flagged) for r in records))
    _write_jsonl(run.path("ingest_errors.jsonl"),
                 ({"line": e.line, "id": e.id, "message": e.message} for e in errors))
    for e in errors:
        log.warning("questions line %d (%s): %s", e.line, e.id, e.message)
    run._cache.clear()
    run.record("ingest", ["kg.tsv", "questions.jsonl", "ingest_errors.jsonl"])
    return {"triples": len(g.triples), "entities": g.num_entities, "questions": len(records),
            "rejected": len(errors), "flagged": sum(r.flagged for r in records)}


def stage_retrieve(run: Run) -> dict:
    g, k = run.graph, int(run.config["retrieval_hops"])
    rows = []
    for q in run.questions.values():
        if not q.topic_entities:
            rows.append({"question_id": q.id, "nodes": [], "triples": []})
            continue
        ksg = khop_retrieve(g, q.topic_entities, k)
        rows.append({"question_id": q.id,
                     "nodes": sorted(g.entities.name(n) for n in ksg.nodes),
                     "triples": [list(g.named(t)) for t in ksg.triples]})
    _write_jsonl(run.path("ksg.jsonl"), rows)
    run.record("retrieve", ["ksg.jsonl"])
    return {"questions": len(rows), "mean_nodes": float(np.mean([len(r["nodes"]) for r in rows] or [0]))}


def stage_partition(run: Run) -> dict:
    g, ksgs = run.graph, run.ksgs
    rows, results = [], {}
    for q in run.questions.values():
        if q.flagged or not q.topic_entities:
            continue
        res = partition_question(ksgs[q.id], q.id, q.topic_entities, q.answers,
                                 literal_labels=bool(run.config["literal_labels"]))
        results[q.id] = res
        rows.extend(s.to_json(g) for s in res.subksgs)
    _write_jsonl(run.path("subksgs.jsonl"), rows)
    stats = {
        "questions": len(results),
        "flagged_excluded": sum(q.flagged for q in run.questions.values()),
        "subksgs": len(rows),
        "coverage": sum(r.covered for r in results.values()) / len(results) if results else 0.0,
        "coverage_by_split": {},
        "unreachable": {qid: {g.entities.name(k): v for k, v in r.unreachable.items()}
                        for qid, r in sorted(results.items())},
    }
    for split in ("train", "dev", "test"):
        rs = [r for qid, r in results.items() if run.questions[qid].split == split]
        if rs:
            stats["coverage_by_split"][split] = sum(r.covered for r in rs) / len(rs)
    run.path("partition_stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")
    run._cache.pop("subksgs", None)
    run.record("partition", ["subksgs.jsonl", "partition_stats.json"])
    return {k: stats[k] for k in ("questions", "subksgs", "coverage")}


def stage_make_pairs(run: Run) -> dict:
    ids = sorted(q.id for q in run.split("train"))
    feats = run.featurizer if run.config["negatives"] == "tfidf" else None
    pairs = make_pairs(ids, run.subksgs, run.config["negatives"], int(run.config["n_negatives"]),
                       run.seed, feats)
    g = run.graph
    _write_jsonl(run.path("pairs.jsonl"), (
        {"question_id": p.question_id, "root": g.entities.name(p.subksg[1]),
         "anchor": g.entities.name(p.subksg[2]), "label": p.label} for p in pairs))
    run.record("make-pairs", ["pairs.jsonl"])
    return {"pairs": len(pairs), "positives": sum(p.label for p in pairs)}


def load_pairs(run: Run) -> list[TrainingPair]:
    rows = _read_jsonl(run.require("pairs.jsonl"))
    g = run.graph
    return [TrainingPair(r["question_id"], (r["question_id"], g.entities[r["root"]], g.entities[r["anchor"]]),
                         int(r["label"])) for r in rows]


def stage_train_ranker(run: Run) -> dict:
    run.require("pairs.jsonl")
    pairs = load_pairs(run)
    config = run.ranker_config()
    dev = [(q, run.subksgs.get(q.id, [])) for q in run.split("dev")]
    dev = [(q, subs) for q, subs in dev if subs] or [
        (run.questions[qid], run.subksgs[qid]) for qid in sorted({p.question_id for p in pairs})]
    logfile = open(run.path("train_log.jsonl"), "w", encoding="utf-8")

    def on_epoch(entry):
        logfile.write(json.dumps({"epoch": entry.epoch, "train_loss": entry.train_loss,
                                  "dev_mrr": entry.dev_mrr, "wall_time": entry.wall_time},
                                 sort_keys=True) + "\n")
        logfile.flush()

    with logfile:
        result = train(pairs, run.questions, run.subksg_by_key, dev, run.featurizer, config,
                       on_epoch=on_epoch)
    save_checkpoint(run.path("ranker.ckpt.json"), result.model.params, config_dict(config), run.seed,
                    extra={"best_epoch": result.best_epoch, "best_dev_mrr": result.best_dev_mrr})
    run.record("train-ranker", ["ranker.ckpt.json"])
    return {"epochs": len(result.log), "best_epoch": result.best_epoch, "best_dev_mrr": result.best_dev_mrr}


def load_ranker(run: Run) -> GGEModel:
    doc = load_checkpoint(run.require("ranker.ckpt.json"))
    model = GGEModel(RankerConfig(**doc["config"]), run.table)
    model.params.load_state(doc["state"])
    return model


_WORKER: dict = {}


def _worker_init(run_dir: str):
    run = Run(run_dir)
    _WORKER["run"] = run
    _WORKER["model"] = load_ranker(run)


def _score_question(qid: str) -> list[float]:
    run, model = _WORKER["run"], _WORKER["model"]
    rec = run.questions[qid]
    return [float(score_pair(model, run.featurizer, rec, s).data) for s in run.subksgs[qid]]


def stage_rank(run: Run) -> dict:
    run.require("ranker.ckpt.json")
    qids = [qid for qid in run.questions if run.subksgs.get(qid)]
    workers = max(1, int(run.config.get("workers") or 1))
    if workers == 1:
        _WORKER["run"], _WORKER["model"] = run, load_ranker(run)
        scores = [_score_question(q) for q in qids]
    else:
        with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(str(run.dir),)) as ex:
            scores = list(ex.map(_score_question, qids, chunksize=max(1, len(qids) // (4 * workers))))
    _WORKER.clear()
    g = run.graph
    ranked_rows, score_lines = [], ["question_id\troot\tanchor\tscore\tlabel"]
    for qid, sc in zip(qids, scores):
        ranked = order_scored(qid, list(zip(run.subksgs[qid], sc)))
        items = []
        for s, score in ranked.items:
            items.append({"root": g.entities.name(s.root), "anchor": g.entities.name(s.anchor),
                          "score": score, "label": s.label})
            score_lines.append(f"{qid}\t{items[-1]['root']}\t{items[-1]['anchor']}\t{score!r}\t{s.label}")
        ranked_rows.append({"question_id": qid, "items": items})
    run.path("scores.tsv").write_text("\n".join(score_lines) + "\n", encoding="utf-8")
    _write_jsonl(run.path("ranked.jsonl"), ranked_rows)
    run.record("rank", ["scores.tsv", "ranked.jsonl"])
    return {"questions": len(qids)}


def load_ranked(run: Run) -> dict[str, RankedList]:
    path = run.require("ranked.jsonl")
    g, by_key = run.graph, run.subksg_by_key
    out = {}
    for row in _read_jsonl(path):
        qid = row["question_id"]
        items = [(by_key[(qid, g.entities[it["root"]], g.entities[it["anchor"]])], it["score"])
                 for it in row["items"]]
        out[qid] = RankedList(qid, items)
    return out


def regimes(run: Run) -> list[str]:
    return ["full"] + [f"top{int(k)}" for k in run.config["merge_k"]]


def stage_merge(run: Run) -> dict:
    ranked, g = load_ranked(run), run.graph
    rows = []
    for qid in run.questions:
        if qid not in ranked:
            continue
        for regime in regimes(run):
            k = _regime_k(regime)
            merged = full_graph(run.ksgs[qid]) if k is None else merge_topk(ranked[qid], k)
            rows.append({"question_id": qid, "regime": regime,
                         "nodes": [g.entities.name(n) for n in merged.nodes],
                         "edges": [list(g.named(t)) for t in merged.edges]})
    _write_jsonl(run.path("merged.jsonl"), rows)
    run.record("merge", ["merged.jsonl"])
    return {"graphs": len(rows)}


def load_merged(run: Run) -> dict[tuple[str, str], MergedGraph]:
    g, out = run.graph, {}
    for row in _read_jsonl(run.require("merged.jsonl")):
        out[(row["question_id"], row["regime"])] = MergedGraph(
            [g.entities[n] for n in row["nodes"]],
            [Triple(g.entities[s], g.relations[r], g.entities[o]) for s, r, o in row["edges"]])
    return out


def stage_train_answerer(run: Run) -> dict:
    run.require("merged.jsonl")
    merged = load_merged(run)
    regime = run.config["answerer"]["train_regime"]
    _regime_k(regime)
    if regime not in regimes(run):
        raise ConfigError(f"answerer.train_regime {regime!r} is not among the merged regimes {regimes(run)}")

    def examples(split):
        return [AnswerExample(q, merged[(q.id, regime)]) for q in run.split(split) if (q.id, regime) in merged]

    config = run.answerer_config()
    with open(run.path("answerer_log.jsonl"), "w", encoding="utf-8") as fh:
        def on_epoch(entry):
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
        model, history = train_answerer(examples("train"), examples("dev"), config, run.table, run.graph,
                                        run.names, on_epoch=on_epoch)
    save_checkpoint(run.path("answerer.ckpt.json"), model.params,
                    dict(vars(config), train_regime=regime), run.seed)
    run.record("train-answerer", ["answerer.ckpt.json", "answerer_log.jsonl"])
    return {"epochs": len(history)}


def load_answerer(run: Run) -> AnswerSelector:
    doc = load_checkpoint(run.require("answerer.ckpt.json"))
    cfg = {k: v for k, v in doc["config"].items() if k != "train_regime"}
    model = AnswerSelector(AnswererConfig(**cfg), run.table, run.graph, run.names)
    model.params.load_state(doc["state"])
    return model


def stage_evaluate(run: Run, split: str = "test") -> dict:
    for name in ("ranked.jsonl", "merged.jsonl", "answerer.ckpt.json"):
        run.require(name)
    ranked = load_ranked(run)
    merged = load_merged(run)
    model = load_answerer(run)
    g = run.graph
    test = [q for q in run.split(split)]
    if not test:
        raise ConfigError(f"no questions in the {split!r} split")
    lists = {q.id: ranked[q.id].labels if q.id in ranked else [] for q in test}
    stats = json.loads(run.require("partition_stats.json").read_text(encoding="utf-8"))
    report = evalmetrics.ranking_report(lists, [int(k) for k in run.config["recall_k"]],
                                        run.config["mrr_mode"],
                                        coverage=stats.get("coverage_by_split", {}).get(split))
    gold = {q.id: set(q.answers) for q in test}
    pred_rows = []
    for regime in regimes(run):
        predictions, contained = {}, 0
        for q in test:
            m = merged.get((q.id, regime))
            if m is None or not m.nodes:
                predictions[q.id] = (set(), None)      # nothing to select from: a miss
                pred_rows.append({"question_id": q.id, "regime": regime, "top1": None, "predicted": [],
                                  "gold": sorted(g.entities.name(n) for n in q.answers),
                                  "contains_answer": False})
                continue
            probs = model.classify_nodes(m, q)
            chosen, top = select_answers(probs, model.config.threshold)
            predictions[q.id] = (chosen, top)
            contained += bool(q.answers) and m.contains_any(q.answers)
            pred_rows.append({"question_id": q.id, "regime": regime, "top1": g.entities.name(top),
                              "predicted": sorted(g.entities.name(n) for n in chosen),
                              "gold": sorted(g.entities.name(n) for n in q.answers),
                              "contains_answer": m.contains_any(q.answers)})
        scores = evalmetrics.hits_precision_recall_f1(predictions, gold, run.config["hits_mode"])
        scores["containment"] = contained / scores["questions"] if scores["questions"] else 0.0
        report.answer[regime] = scores
    report.per_question = [{"question_id": qid, "labels": list(labels)} for qid, labels in sorted(lists.items())]
    _write_jsonl(run.path("predictions.jsonl"), pred_rows)
    run.path("metrics.json").write_text(report.to_json(), encoding="utf-8")
    run.path("metrics.txt").write_text(report.to_text(), encoding="utf-8")
    run.path("recall_curve.csv").write_text(report.recall_csv(), encoding="utf-8")
    run.record("evaluate", ["predictions.jsonl", "metrics.json", "metrics.txt", "recall_curve.csv"])
    return {"mrr": report.mrr, "recall": report.recall,
            "answer": {r: m["hits"] for r, m in report.answer.items()}}


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "retrieve": stage_retrieve,
    "partition": stage_partition,
    "make-pairs": stage_make_pairs,
    "train-ranker": stage_train_ranker,
    "rank": stage_rank,
    "merge": stage_merge,
    "train-answerer": stage_train_answerer,
    "evaluate": stage_evaluate,
}


def run_all(run: Run, stages=STAGES) -> dict:
    return {stage: STAGE_FUNCS[stage](run) for stage in stages}
