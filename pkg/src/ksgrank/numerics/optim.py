from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterSet


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)


def adam_step(params: ParameterSet, state: AdamState) -> AdamState:
    """One bias-corrected Adam update using the ``.grad`` of every parameter.

    Parameters without a gradient are left alone (their moments still decay
    only when they receive one).  Raises before touching anything if a
    gradient is NaN or infinite.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.first.get(name)
        v = state.second.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.first[name], state.second[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
