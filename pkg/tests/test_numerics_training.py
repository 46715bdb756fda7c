import json

import numpy as np
import pytest

from ksgrank.numerics import AdamState, NonFiniteGradient, ParameterSet, adam_step, load_checkpoint, \
    save_checkpoint
from ksgrank.numerics.checkpoint import dumps_checkpoint


def test_adam_zero_gradient_leaves_parameters():
    p = ParameterSet(0)
    w = p.add("w", (2, 2))
    before = w.data.copy()
    w.grad = np.zeros_like(w.data)
    adam_step(p, AdamState())
    assert np.array_equal(w.data, before)


def test_adam_first_step_matches_hand_formula():
    p = ParameterSet(0)
    w = p.add("w", (1,), init="zeros")
    w.grad = np.array([1.0])
    state = AdamState(lr=5e-4)
    adam_step(p, state)
    assert w.data[0] == pytest.approx(-5e-4 * 1 / (1 + 1e-8), rel=1e-12)


def test_adam_is_bitwise_reproducible():
    results = []
    for _ in range(2):
        p = ParameterSet(42)
        w = p.add("w", (3, 3))
        state = AdamState()
        for k in range(5):
            w.grad = np.sin(w.data * (k + 1))
            adam_step(p, state)
        results.append(w.data.tobytes())
    assert results[0] == results[1]


def test_adam_refuses_non_finite_gradient():
    p = ParameterSet(0)
    w = p.add("layer.w", (2,))
    before = w.data.copy()
    w.grad = np.array([np.nan, 0.0])
    with pytest.raises(NonFiniteGradient, match="layer.w"):
        adam_step(p, AdamState())
    assert np.array_equal(w.data, before)


def test_glorot_bounds_and_zero_bias():
    p = ParameterSet(0)
    w = p.add("w", (30, 20))
    b = p.add("b", (20,), init="zeros")
    assert np.all(np.abs(w.data) <= np.sqrt(6 / 50))
    assert not b.data.any()


def test_checkpoint_round_trip_is_exact_and_byte_stable(tmp_path):
    p = ParameterSet(5)
    p.add("a", (3, 2))
    p.add("b", (4,))
    save_checkpoint(tmp_path / "c.json", p, {"hidden": 2}, seed=5)
    doc = load_checkpoint(tmp_path / "c.json")
    q = ParameterSet(99)
    q.add("a", (3, 2))
    q.add("b", (4,))
    q.load_state(doc["state"])
    assert all(np.array_equal(p[n].data, q[n].data) for n in p.names())
    assert dumps_checkpoint(q, {"hidden": 2}, 5) == (tmp_path / "c.json").read_text()
    assert doc["seed"] == 5 and doc["config"] == {"hidden": 2}


def test_checkpoint_rejects_other_formats(tmp_path):
    (tmp_path / "x.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.json")


def test_load_state_checks_shapes():
    p = ParameterSet(0)
    p.add("a", (2,))
    with pytest.raises(ValueError):
        p.load_state({"a": np.zeros(3)})
    with pytest.raises(KeyError):
        p.load_state({})
