"""Differentiable operations on :class:`~ksgrank.numerics.tensor.Tensor`.

Elementwise ops broadcast like numpy; gradients are summed back down to the
operand shapes.  Shape errors name the op and both shapes.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(op, fn, a, b):
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("add", np.add, a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("sub", np.subtract, a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("mul", np.multiply, a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(out, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0] or b.ndim > 2 or a.ndim > 2:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ b.data.T if b.ndim == 2 else np.multiply.outer(g, b.data)
        if b.requires_grad:
            if a.ndim == 2:
                gb = a.data.T @ g
            else:
                gb = np.multiply.outer(a.data, g)
        return ga, gb

    return make_result(a.data @ b.data, (a, b), backward, "matmul")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(data, tensors, backward, "concat")


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"stack: incompatible shapes {shapes}") from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(data, tensors, backward, "stack")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return make_result(a.data[index], (a,), backward, "getitem")


def take_rows(a, indices) -> Tensor:
    """Gather rows ``a[indices]`` (repeats allowed)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, indices, g)
        return (out,)

    return make_result(a.data[indices], (a,), backward, "take_rows")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g.reshape(a.shape),)

    return make_result(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g.T,)

    return make_result(a.data.T, (a,), backward, "transpose")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so neither branch overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return make_result(out, (a,), backward, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return make_result(out, (a,), backward, "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return make_result(out, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g / a.data,)

    return make_result(np.log(a.data), (a,), backward, "log")


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), backward, "softmax")


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return make_result(a.data.mean(axis=axis), (a,), backward, "mean")


def max(a, axis=0) -> Tensor:  # noqa: A001 - mirrors numpy
    """Max-pool along ``axis``; the gradient goes to the first maximal entry only."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return make_result(out, (a,), backward, "max")


def cosine(a, b, axis=-1) -> Tensor:
    """Cosine similarity along ``axis`` with broadcasting; cos(0, x) is defined as 0."""
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    dot = _binary("cosine", np.multiply, a, b).sum(axis=axis, keepdims=True)
    sx = (x * x).sum(axis=axis, keepdims=True)
    sy = (y * y).sum(axis=axis, keepdims=True)
    denom = np.sqrt(sx * sy)
    ok = denom > 0
    inv = np.where(ok, 1.0 / np.where(ok, denom, 1.0), 0.0)
    c = dot * inv

    def backward(g):
        g = np.expand_dims(g, axis) * inv
        # d cos / dx = y / (|x||y|) - cos x / |x|^2, with the zero cases masked by inv = 0
        ga = g * (y - x * (dot / np.where(sx > 0, sx, 1.0)))
        gb = g * (x - y * (dot / np.where(sy > 0, sy, 1.0)))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(np.squeeze(c, axis), (a, b), backward, "cosine")


def perspective_cosine(a, b, w) -> Tensor:
    """``out[..., k] = cos(w[k] * a, w[k] * b)`` for perspective weights ``w`` of shape (l, h).

    ``a`` and ``b`` broadcast against each other over their leading axes; the
    result has shape ``broadcast(a, b)[:-1] + (l,)``.
    """
    a, b, w = as_tensor(a), as_tensor(b), as_tensor(w)
    if a.shape[-1] != w.shape[-1] or b.shape[-1] != w.shape[-1]:
        raise ShapeError(f"perspective_cosine: shapes {a.shape}, {b.shape} with weights {w.shape}")
    x = a.data[..., None, :] * w.data
    y = b.data[..., None, :] * w.data
    dot = _binary("perspective_cosine", np.multiply, Tensor(x), Tensor(y)).sum(axis=-1, keepdims=True)
    sx = (x * x).sum(axis=-1, keepdims=True)
    sy = (y * y).sum(axis=-1, keepdims=True)
    denom = np.sqrt(sx * sy)
    ok = denom > 0
    inv = np.where(ok, 1.0 / np.where(ok, denom, 1.0), 0.0)

    def backward(g):
        g = g[..., None] * inv
        gx = g * (y - x * (dot / np.where(sx > 0, sx, 1.0)))
        gy = g * (x - y * (dot / np.where(sy > 0, sy, 1.0)))
        ga = gb = gw = None
        if a.requires_grad:
            ga = _unbroadcast((gx * w.data).sum(axis=-2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast((gy * w.data).sum(axis=-2), b.shape)
        if w.requires_grad:
            gw = _unbroadcast(gx * a.data[..., None, :] + gy * b.data[..., None, :], w.shape)
        return ga, gb, gw

    return make_result((dot * inv)[..., 0], (a, b, w), backward, "perspective_cosine")


def squared_error(pred, target) -> Tensor:
    """Elementwise ``(target - pred)**2``."""
    pred, target = as_tensor(pred), as_tensor(target)
    diff = _binary("squared_error", np.subtract, pred, target)

    def backward(g):
        return _unbroadcast(2.0 * g * diff, pred.shape), _unbroadcast(-2.0 * g * diff, target.shape)

    return make_result(diff * diff, (pred, target), backward, "squared_error")


def bce_with_logits(logits, targets) -> Tensor:
    """Summed binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: incompatible shapes {logits.shape} and {t.shape}")
    x = logits.data
    # log(1 + exp(-|x|)) + max(x, 0) - x*t, stable for large |x|
    loss = np.logaddexp(0.0, -np.abs(x)) + np.maximum(x, 0.0) - x * t
    p = 0.5 * (1.0 + np.tanh(0.5 * x))

    def backward(g):
        return (g * (p - t),)

    return make_result(loss.sum(), (logits,), backward, "bce_with_logits")


def mean_rows(table, groups, counts) -> Tensor:
    """Row ``i`` is ``table[groups[i]].sum(0) / counts[i]``; empty groups give a zero row.

    ``counts`` may exceed ``len(groups[i])``: the surplus stands for tokens whose
    vector is fixed at zero.
    """
    table = as_tensor(table)
    width = table.shape[1]
    out = np.zeros((len(groups), width), dtype=table.data.dtype)
    for i, (idx, n) in enumerate(zip(groups, counts)):
        if len(idx):
            out[i] = table.data[idx].sum(axis=0) / n

    def backward(g):
        full = np.zeros_like(table.data)
        for i, (idx, n) in enumerate(zip(groups, counts)):
            if len(idx):
                np.add.at(full, idx, g[i] / n)
        return (full,)

    return make_result(out, (table,), backward, "mean_rows")
