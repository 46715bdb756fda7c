"""Ranking and answer-selection metrics.

Ranking metrics take, per question, the 0/1 labels of its candidates in
ranked order.  Questions without any positive candidate are dropped before
averaging unless ``filtered=False``, in which case they count as misses.
"""
from __future__ import annotations

import csv
import io
import json
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence


def _kept(lists: Mapping[str, Sequence[int]], filtered: bool) -> list[Sequence[int]]:
    return [labels for _, labels in sorted(lists.items()) if not filtered or any(labels)]


def recall_at_k(lists: Mapping[str, Sequence[int]], k: int, filtered: bool = True) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    kept = _kept(lists, filtered)
    if not kept:
        return 0.0
    return sum(1 for labels in kept if any(labels[:k])) / len(kept)


def _reciprocal_rank_exact(labels: Sequence[int], mode: str) -> Fraction:
    ranks = [i + 1 for i, y in enumerate(labels) if y]
    if not ranks:
        return Fraction(0)
    if mode == "first":
        return Fraction(1, ranks[0])
    if mode == "all":
        return sum((Fraction(1, r) for r in ranks), Fraction(0)) / len(ranks)
    raise ValueError(f"unknown MRR mode {mode!r}")


def reciprocal_rank(labels: Sequence[int], mode: str = "first") -> float:
    return float(_reciprocal_rank_exact(labels, mode))


def mrr(lists: Mapping[str, Sequence[int]], mode: str = "first", filtered: bool = True) -> float:
    """Mean reciprocal rank, accumulated in exact rationals so the result is independent of question order."""
    kept = _kept(lists, filtered)
    if not kept:
        return 0.0
    return float(sum((_reciprocal_rank_exact(labels, mode) for labels in kept), Fraction(0)) / len(kept))


def prf1(predicted: set, gold: set) -> tuple[float, float, float]:
    hit = len(predicted & gold)
    p = hit / len(predicted) if predicted else 0.0
    r = hit / len(gold) if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def hits_precision_recall_f1(
    predictions: Mapping[str, tuple[set, object]],
    gold: Mapping[str, set],
    hits_mode: str = "top1",
) -> dict:
    """Hits plus macro-averaged precision/recall/F1.

    ``predictions[qid]`` is ``(thresholded set, top-1 node)``.  Hits counts a
    question when the top-1 node is a gold answer (``hits_mode="set"``: when
    the thresholded set meets the gold set).  Questions with an empty gold
    set are skipped.
    """
    if hits_mode not in ("top1", "set"):
        raise ValueError(f"unknown hits mode {hits_mode!r}")
    hits = ps = rs = fs = 0.0
    n = 0
    for qid in sorted(predictions):
        answers = set(gold.get(qid, ()))
        if not answers:
            continue
        chosen, top1 = predictions[qid]
        chosen = set(chosen)
        n += 1
        if hits_mode == "top1":
            hits += top1 in answers
        else:
            hits += bool(chosen & answers)
        p, r, f = prf1(chosen, answers)
        ps, rs, fs = ps + p, rs + r, fs + f
    if n == 0:
        return {"hits": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0, "questions": 0}
    return {"hits": hits / n, "precision": ps / n, "recall": rs / n, "f1": fs / n, "questions": n}


@dataclass
class MetricReport:
    questions: int
    excluded: int
    mrr: float
    recall: dict                       # K -> filtered Recall@K
    recall_unfiltered: dict            # K -> Recall@K over every question
    mrr_unfiltered: float
    coverage: float | None = None
    answer: dict = field(default_factory=dict)   # input regime -> hits/P/R/F1
    per_question: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = asdict(self)
        doc["recall"] = {str(k): v for k, v in self.recall.items()}
        doc["recall_unfiltered"] = {str(k): v for k, v in self.recall_unfiltered.items()}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [
            f"questions        {self.questions} ({self.excluded} without a positive sub-KSG excluded)",
            f"MRR              {self.mrr:.4f}   (unfiltered {self.mrr_unfiltered:.4f})",
        ]
        for k in sorted(self.recall):
            lines.append(f"Recall@{k:<9d} {self.recall[k]:.4f}   (unfiltered {self.recall_unfiltered[k]:.4f})")
        if self.coverage is not None:
            lines.append(f"coverage         {self.coverage:.4f}")
        for regime, m in sorted(self.answer.items()):
            lines.append(
                f"answer[{regime}]  hits {m['hits']:.4f}  P {m['precision']:.4f}  "
                f"R {m['recall']:.4f}  F1 {m['f1']:.4f}  (n={m['questions']})")
        return "\n".join(lines) + "\n"

    def recall_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["K", "recall", "recall_unfiltered"])
        for k in sorted(self.recall):
            w.writerow([k, repr(self.recall[k]), repr(self.recall_unfiltered[k])])
        return buf.getvalue()


def ranking_report(lists: Mapping[str, Sequence[int]], ks: Sequence[int], mrr_mode: str = "first",
                   coverage: float | None = None) -> MetricReport:
    kept = sum(1 for labels in lists.values() if any(labels))
    return MetricReport(
        questions=len(lists),
        excluded=len(lists) - kept,
        mrr=mrr(lists, mrr_mode),
        recall={k: recall_at_k(lists, k) for k in ks},
        recall_unfiltered={k: recall_at_k(lists, k, filtered=False) for k in ks},
        mrr_unfiltered=mrr(lists, mrr_mode, filtered=False),
        coverage=coverage,
    )
