import json

import pytest

from ksgrank import pipeline
from ksgrank.cli import main

TINY = ["--set", "ranker.graph_hidden=8", "--set", "ranker.context_dim=8", "--set", "ranker.perspectives=2",
        "--set", "ranker.epochs=2", "--set", "answerer.graph_hidden=8", "--set", "answerer.epochs=2"]
DETERMINISTIC = ["kg.tsv", "questions.jsonl", "ksg.jsonl", "subksgs.jsonl", "partition_stats.json",
                 "pairs.jsonl", "ranker.ckpt.json", "scores.tsv", "ranked.jsonl", "merged.jsonl",
                 "answerer.ckpt.json", "predictions.jsonl", "metrics.json", "metrics.txt", "recall_curve.csv"]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("run")
    assert main(["run", "--run-dir", str(run_dir), "--dataset", "synthetic", "--seed", "3"] + TINY) == 0
    return run_dir


def test_school_partition_via_cli(tmp_path, capsys):
    for stage in ("ingest", "retrieve", "partition"):
        assert main([stage, "--run-dir", str(tmp_path), "--dataset", "school"]) == 0
    rows = [json.loads(line) for line in (tmp_path / "subksgs.jsonl").read_text().splitlines()]
    assert len(rows) == 2 and sorted(r["label"] for r in rows) == [0, 1]


def test_missing_input_names_the_producer(tmp_path, capsys):
    assert main(["rank", "--run-dir", str(tmp_path)]) == 2
    assert "ksgrank train-ranker" in capsys.readouterr().err
    (tmp_path / "kg.tsv").write_text("a\tr\tb\n")
    (tmp_path / "questions.jsonl").write_text("")
    assert main(["merge", "--run-dir", str(tmp_path)]) == 2
    assert "ksgrank rank" in capsys.readouterr().err


def test_unknown_override_is_rejected(tmp_path, capsys):
    assert main(["ingest", "--run-dir", str(tmp_path), "--set", "ranker.nonsense=1"]) == 2
    assert "nonsense" in capsys.readouterr().err


def test_seed_falls_back_to_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("KSGRANK_SEED", "17")
    assert pipeline.Run(tmp_path / "a").seed == 17
    assert pipeline.Run(tmp_path / "b", {"seed": 4}).seed == 4
    monkeypatch.delenv("KSGRANK_SEED")
    assert pipeline.Run(tmp_path / "c").seed == 0


def test_overrides_persist_in_run_config(tmp_path):
    main(["ingest", "--run-dir", str(tmp_path), "--dataset", "school", "--set", "ranker.epochs=4",
          "--mode", "g-g", "--mrr-mode", "all"])
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["ranker"]["epochs"] == 4 and cfg["ranker"]["mode"] == "g-g" and cfg["mrr_mode"] == "all"
    assert pipeline.Run(tmp_path).config["ranker"]["epochs"] == 4


def test_pipeline_outputs_and_manifest(tiny_run):
    for name in pipeline.PRODUCERS:
        assert (tiny_run / name).exists(), name
    manifest = json.loads((tiny_run / "manifest.json").read_text())
    assert manifest["seed"] == 3 and set(manifest["stages"]) == set(pipeline.STAGES)
    metrics = json.loads((tiny_run / "metrics.json").read_text())
    recalls = [metrics["recall"][k] for k in sorted(metrics["recall"], key=int)]
    assert all(a <= b for a, b in zip(recalls, recalls[1:]))
    assert set(metrics["answer"]) == {"full", "top1", "top3", "top5"}


def test_prediction_never_beats_containment(tiny_run):
    for line in (tiny_run / "predictions.jsonl").read_text().splitlines():
        row = json.loads(line)
        if not row["contains_answer"]:
            assert row["top1"] not in row["gold"] and not set(row["predicted"]) & set(row["gold"])


def test_stages_are_idempotent(tiny_run):
    before = {name: (tiny_run / name).read_bytes() for name in DETERMINISTIC}
    for stage in pipeline.STAGES:
        assert main([stage, "--run-dir", str(tiny_run)]) == 0
    after = {name: (tiny_run / name).read_bytes() for name in DETERMINISTIC}
    assert [n for n in DETERMINISTIC if before[n] != after[n]] == []


def test_workers_do_not_change_scores(tiny_run):
    before = (tiny_run / "scores.tsv").read_bytes()
    assert main(["rank", "--run-dir", str(tiny_run), "--workers", "2"]) == 0
    assert (tiny_run / "scores.tsv").read_bytes() == before


def test_tfidf_negatives_give_one_negative_per_question(tmp_path):
    args = ["--run-dir", str(tmp_path), "--dataset", "synthetic", "--negatives", "tfidf"]
    for stage in ("ingest", "retrieve", "partition", "make-pairs"):
        assert main([stage] + args) == 0
    rows = [json.loads(line) for line in (tmp_path / "pairs.jsonl").read_text().splitlines()]
    per_q = {}
    for r in rows:
        per_q.setdefault(r["question_id"], []).append(r["label"])
    assert all(sorted(v) in ([1], [0, 1]) for v in per_q.values())


def test_gradcheck_and_selftest_commands(capsys):
    assert main(["gradcheck"]) == 0
    assert "gge_loss" in capsys.readouterr().out
    assert main(["selftest", "--only", "partition-oracle", "--only", "metric-oracle"]) == 0
