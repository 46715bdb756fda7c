"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor

# below this magnitude a coordinate is compared in absolute terms
REL_FLOOR = 1e-5


def gradcheck(f, inputs, eps: float = 1e-5, tol: float = 1e-4, corrupt=None) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``f(*inputs)`` must return a scalar Tensor.  Every input's gradient is
    checked coordinate by coordinate with ``(f(x+eps) - f(x-eps)) / 2eps``.
    The per-coordinate error is ``|a - n| / max(|a|, |n|, REL_FLOOR)``.

    ``corrupt`` optionally maps the analytic gradient array before the
    comparison; the negative-control tests use it.  ``tol`` is not used to
    decide anything here; see :func:`check_gradients`.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    if out.data.size != 1:
        raise ValueError("gradcheck needs a scalar-valued function")
    out.backward()
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        if corrupt is not None:
            analytic = corrupt(analytic)
        flat = t.data.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(*inputs).data)
            flat[i] = orig - eps
            down = float(f(*inputs).data)
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * eps)
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), REL_FLOOR)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    for t in inputs:
        t.grad = None
    return worst


def check_gradients(f, inputs, eps: float = 1e-5, tol: float = 1e-4) -> bool:
    return gradcheck(f, inputs, eps=eps, tol=tol) <= tol


def random_inputs(rng: np.random.Generator, *shapes, scale: float = 1.0) -> list:
    return [Tensor(rng.normal(scale=scale, size=s), requires_grad=True) for s in shapes]
