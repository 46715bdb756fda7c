"""Recurrent and dense building blocks.

The GRU cell and the LSTM are fused ops with hand-written backward passes;
recording every gate on the tape would dominate training time.  The LSTM
runs a whole sequence per call (backpropagation through time inside).
"""
from __future__ import annotations

import numpy as np

from . import ops
from .params import ParameterSet
from .tensor import Tensor, as_tensor, make_result


def linear(x, weight, bias=None) -> Tensor:
    out = ops.matmul(x, weight)
    return out if bias is None else ops.add(out, bias)


def gru_cell(m, h, w, u, b) -> Tensor:
    """Batched GRU update, one row per node, as a single fused op.

    ``w``: (d_in, 3d) input weights for [update | reset | candidate];
    ``u``: (d, 3d) recurrent weights in the same order; ``b``: (3d,).

        z = sig(m w_z + h u_z + b_z)      r = sig(m w_r + h u_r + b_r)
        c = tanh(m w_c + (r * h) u_c + b_c)
        h' = (1 - z) * h + z * c
    """
    m, h, w, u, b = (as_tensor(t) for t in (m, h, w, u, b))
    d = h.shape[-1]
    if u.shape != (d, 3 * d) or w.shape[-1] != 3 * d or m.shape[-1] != w.shape[0] \
            or b.shape != (3 * d,) or m.shape[:-1] != h.shape[:-1]:
        raise ops.ShapeError(
            f"gru_cell: input {m.shape}, state {h.shape}, weights {w.shape}/{u.shape}, bias {b.shape}")
    gx = m.data @ w.data + b.data
    u_zr, u_c = u.data[:, : 2 * d], u.data[:, 2 * d:]
    zr = _sig(gx[..., : 2 * d] + h.data @ u_zr)
    z, r = zr[..., :d], zr[..., d:]
    rh = r * h.data
    c = np.tanh(gx[..., 2 * d:] + rh @ u_c)
    out = (1.0 - z) * h.data + z * c

    def backward(g):
        dz = g * (c - h.data)
        da_c = g * z * (1.0 - c * c)
        d_rh = da_c @ u_c.T
        da_zr = np.concatenate([dz * z * (1.0 - z), d_rh * h.data * r * (1.0 - r)], axis=-1)
        dh = g * (1.0 - z) + d_rh * r + da_zr @ u_zr.T
        dgx = np.concatenate([da_zr, da_c], axis=-1)
        m2 = m.data.reshape(-1, m.shape[-1])
        dgx2 = dgx.reshape(-1, 3 * d)
        du = np.concatenate([h.data.reshape(-1, d).T @ da_zr.reshape(-1, 2 * d),
                             rh.reshape(-1, d).T @ da_c.reshape(-1, d)], axis=-1)
        return dgx @ w.data.T, dh, m2.T @ dgx2, du, dgx2.sum(axis=0)

    return make_result(out, (m, h, w, u, b), backward, "gru_cell")


def gru_cell_reference(m, h, w, u, b) -> Tensor:
    """Same update as :func:`gru_cell`, composed from primitive ops (used as a test oracle)."""
    d = as_tensor(h).shape[-1]
    gx = ops.add(ops.matmul(m, w), b)
    zr = ops.sigmoid(ops.add(gx[..., : 2 * d], ops.matmul(h, u[:, : 2 * d])))
    z, r = zr[..., :d], zr[..., d:]
    cand = ops.tanh(ops.add(gx[..., 2 * d:], ops.matmul(ops.mul(r, h), u[:, 2 * d:])))
    return ops.add(ops.mul(ops.sub(1.0, z), h), ops.mul(z, cand))


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm(x, wx, wh, b, reverse=False) -> Tensor:
    """Single-direction LSTM over the rows of ``x`` (T, d_in); returns (T, d).

    Gate layout in the 4d columns: input, forget, cell candidate, output.
    Zero initial state.  With ``reverse`` the recurrence runs from the last
    row to the first and outputs stay aligned with their input positions.
    """
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ops.ShapeError(f"lstm: expected a non-empty (T, d_in) sequence, got {x.shape}")
    d = wh.shape[0]
    if wh.shape != (d, 4 * d) or wx.shape != (x.shape[1], 4 * d) or b.shape != (4 * d,):
        raise ops.ShapeError(
            f"lstm: input {x.shape}, weights {wx.shape}/{wh.shape}, bias {b.shape}")
    T = x.shape[0]
    order = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    pre_x = x.data @ wx.data + b.data
    w_h = wh.data
    # tanh(a) = 2 sigmoid(2a) - 1 lets one sigmoid call cover all four gates
    scale = np.ones(4 * d, dtype=pre_x.dtype)
    scale[2 * d: 3 * d] = 2.0
    pre_scaled = pre_x * scale
    wh_scaled = w_h * scale
    dtype = pre_x.dtype
    hs = np.zeros((T, d), dtype=dtype)
    cs = np.zeros((T, d), dtype=dtype)
    gates = np.empty((T, 4 * d), dtype=dtype)
    h_prev = np.zeros(d, dtype=dtype)
    c_prev = np.zeros(d, dtype=dtype)
    for t in order:
        g = _sig(pre_scaled[t] + h_prev @ wh_scaled)
        g[2 * d: 3 * d] = 2.0 * g[2 * d: 3 * d] - 1.0
        c = g[d: 2 * d] * c_prev + g[:d] * g[2 * d: 3 * d]
        h_prev = g[3 * d:] * np.tanh(c)
        gates[t], cs[t], hs[t] = g, c, h_prev
        c_prev = c

    def backward(grad_h):
        d_pre = np.empty_like(pre_x)
        dh_next = np.zeros(d, dtype=dtype)
        dc_next = np.zeros(d, dtype=dtype)
        zero = np.zeros(d, dtype=dtype)
        tanh_c = np.tanh(cs)
        for pos in range(T - 1, -1, -1):
            t = order[pos]
            c_p = cs[order[pos - 1]] if pos > 0 else zero
            g = gates[t]
            i, f, gg, o = g[:d], g[d: 2 * d], g[2 * d: 3 * d], g[3 * d:]
            tc = tanh_c[t]
            dh = grad_h[t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = d_pre[t]
            da[:d] = dc * gg * i * (1.0 - i)
            da[d: 2 * d] = dc * c_p * f * (1.0 - f)
            da[2 * d: 3 * d] = dc * i * (1.0 - gg * gg)
            da[3 * d:] = dh * tc * o * (1.0 - o)
            dh_next = w_h @ da
            dc_next = dc * f
        h_prev_rows = np.zeros_like(hs)
        idx = np.asarray(order)
        h_prev_rows[idx[1:]] = hs[idx[:-1]]
        dwh = h_prev_rows.T @ d_pre
        dx = d_pre @ wx.data.T if x.requires_grad else None
        dwx = x.data.T @ d_pre if wx.requires_grad else None
        db = d_pre.sum(axis=0) if b.requires_grad else None
        return dx, dwx, dwh, db

    return make_result(hs, (x, wx, wh, b), backward, "lstm")


class Linear:
    def __init__(self, params: ParameterSet, name: str, d_in: int, d_out: int, bias: bool = True):
        self.weight = params.add(f"{name}.weight", (d_in, d_out))
        self.bias = params.add(f"{name}.bias", (d_out,), init="zeros") if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class GRUCell:
    def __init__(self, params: ParameterSet, name: str, d_in: int, d: int):
        self.w = params.add(f"{name}.w", (d_in, 3 * d))
        self.u = params.add(f"{name}.u", (d, 3 * d))
        self.b = params.add(f"{name}.b", (3 * d,), init="zeros")

    def __call__(self, m, h):
        return gru_cell(m, h, self.w, self.u, self.b)


class LSTM:
    def __init__(self, params: ParameterSet, name: str, d_in: int, d: int):
        self.wx = params.add(f"{name}.wx", (d_in, 4 * d))
        self.wh = params.add(f"{name}.wh", (d, 4 * d))
        self.b = params.add(f"{name}.b", (4 * d,), init="zeros")

    def __call__(self, x, reverse=False):
        return lstm(x, self.wx, self.wh, self.b, reverse=reverse)


class BiLSTM:
    """Forward and backward LSTMs; output row t is ``[h_fwd_t; h_bwd_t]`` of width 2d."""

    def __init__(self, params: ParameterSet, name: str, d_in: int, d: int):
        self.hidden = d
        self.fwd = LSTM(params, f"{name}.fwd", d_in, d)
        self.bwd = LSTM(params, f"{name}.bwd", d_in, d)

    def __call__(self, x):
        return bilstm(x, self.fwd, self.bwd)


def bilstm(x, fwd: LSTM, bwd: LSTM) -> Tensor:
    return ops.concat([fwd(x), bwd(x, reverse=True)], axis=-1)
