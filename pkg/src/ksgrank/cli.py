"""Command-line entry point: ``ksgrank <subcommand> --run-dir DIR [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import fixtures, pipeline, selftest

DATASETS = {"synthetic": fixtures.synthetic_paths, "school": fixtures.school_paths}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--run-dir", required=True, help="directory holding the stage artifacts")
    p.add_argument("--config", help="JSON configuration file merged over the stored/default config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key, e.g. ranker.epochs=5 (repeatable)")
    p.add_argument("--dataset", choices=sorted(DATASETS), help="use a bundled dataset's file paths")
    p.add_argument("--seed", type=int, help="random seed (falls back to config, then $KSGRANK_SEED)")
    p.add_argument("--workers", type=int, help="worker processes for ranking")
    p.add_argument("--mode", choices=["g-g-e", "g-g", "ebimpm"], help="ranker ablation mode")
    p.add_argument("--negatives", choices=["random", "tfidf"], help="negative sampling mode")
    p.add_argument("--mrr-mode", choices=["first", "all"], help="reciprocal rank convention")
    p.add_argument("--hits-mode", choices=["top1", "set"], help="answer Hits convention")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksgrank", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in pipeline.STAGES:
        _common(sub.add_parser(stage, help=f"run the {stage} stage"))
    _common(sub.add_parser("run", help="run every stage in order"))
    g = sub.add_parser("gradcheck", help="finite-difference check of every differentiable component")
    g.add_argument("--seed", type=int, default=0)
    s = sub.add_parser("selftest", help="run the oracle suites")
    s.add_argument("--only", action="append", choices=sorted(selftest.SUITES))
    return parser


def overrides(args) -> dict:
    cfg: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    if args.dataset:
        cfg.update({k: str(v) for k, v in DATASETS[args.dataset]().items()})
    merged = pipeline.merge_config(pipeline.DEFAULT_CONFIG, cfg)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise pipeline.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        pipeline.set_path(merged, key, value)
        cfg = pipeline.merge_config(cfg, _nested(key, merged))
    flat = {"seed": args.seed, "workers": args.workers, "negatives": args.negatives,
            "mrr_mode": args.mrr_mode, "hits_mode": args.hits_mode}
    cfg.update({k: v for k, v in flat.items() if v is not None})
    if args.mode:
        cfg.setdefault("ranker", {})["mode"] = args.mode
    return cfg


def _nested(dotted: str, config: dict) -> dict:
    keys = dotted.split(".")
    value = config
    for k in keys:
        value = value[k]
    out: dict = {}
    node = out
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        results = selftest.run_selftest(args.only)
        for r in results:
            print(r.line())
        return 0 if all(r.passed for r in results) else 1
    if args.command == "gradcheck":
        errors = selftest.gradient_report(args.seed)
        for name, err in errors.items():
            print(f"{name:<20s} {err:.3e}  {'ok' if err <= selftest.TOL else 'FAIL'}")
        return 0 if max(errors.values()) <= selftest.TOL else 1
    try:
        run = pipeline.Run(args.run_dir, overrides(args))
        stages = pipeline.STAGES if args.command == "run" else (args.command,)
        for stage in stages:
            summary = pipeline.STAGE_FUNCS[stage](run)
            print(f"{stage}: {json.dumps(summary, sort_keys=True)}")
    except (pipeline.MissingInput, pipeline.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
