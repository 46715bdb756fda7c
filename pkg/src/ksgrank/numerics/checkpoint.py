"""Versioned JSON checkpoints.

Values are written with Python's shortest round-trip float repr, so a
save/load cycle is exact and the same parameters always produce the same
bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .params import ParameterSet

FORMAT = "ksgrank-checkpoint"
VERSION = 1


def dumps_checkpoint(params: ParameterSet, config: dict, seed: int, extra: dict | None = None) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "seed": int(seed),
        "config": config,
        "parameters": [
            {
                "name": name,
                "shape": list(t.data.shape),
                "values": [float(v) for v in np.asarray(t.data, dtype=np.float64).reshape(-1)],
            }
            for name, t in params.items()
        ],
    }
    if extra:
        doc["extra"] = extra
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_checkpoint(path, params: ParameterSet, config: dict, seed: int, extra: dict | None = None):
    Path(path).write_text(dumps_checkpoint(params, config, seed, extra), encoding="utf-8")


def load_checkpoint(path) -> dict:
    """Parse a checkpoint; returns the document with ``state`` (name -> ndarray) added."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    doc["state"] = {
        p["name"]: np.asarray(p["values"], dtype=np.float64).reshape(p["shape"])
        for p in doc["parameters"]
    }
    return doc
