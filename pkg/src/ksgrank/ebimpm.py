"""Bilateral multi-perspective matching with an attention and fusion layer.

Pipeline for a (question, sub-KSG) token-sequence pair:

1. shared BiLSTM context encoder -> q (l1, d), S (l2, d)
2. dot-product cross attention -> q~, S~
3. fusion  x^ = tanh([x; x~; x - x~; x * x~] W + b)
4. four matching strategies x two directions on the raw context states,
   each an l-perspective weighted cosine -> (l1, 8l), (l2, 8l)
5. shared BiLSTM aggregation over [matching; fused], max-pooled over tokens
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import BiLSTM, Linear, ParameterSet, Tensor, ops
from .numerics.tensor import as_tensor

STRATEGIES = ("full", "maxpool", "attentive", "max_attentive")


@dataclass
class EBiMPMConfig:
    input_dim: int = 300
    context_dim: int = 128        # d, width of the BiLSTM context output
    perspectives: int = 20        # l
    aggregation_dim: int = 128    # width of r', the pooled aggregation output

    def __post_init__(self):
        if self.perspectives < 1:
            raise ValueError("need at least one perspective")
        if self.context_dim % 2 or self.aggregation_dim % 2:
            raise ValueError("context_dim and aggregation_dim must be even (two LSTM directions)")


@dataclass
class MatchOutput:
    question: Tensor
    subgraph: Tensor


def cross_attention(q, s) -> tuple[Tensor, Tensor]:
    """Each row of q attends over the rows of s by softmaxed dot products, and vice versa."""
    q, s = as_tensor(q), as_tensor(s)
    if q.shape[-1] != s.shape[-1]:
        raise ops.ShapeError(f"cross_attention: widths {q.shape} and {s.shape}")
    scores = ops.matmul(q, ops.transpose(s))            # (l1, l2)
    q_att = ops.matmul(ops.softmax(scores, axis=1), s)
    s_att = ops.matmul(ops.softmax(ops.transpose(scores), axis=1), q)
    return q_att, s_att


def perspective_cosine(a, b, w) -> Tensor:
    """``out[..., k] = cos(w_k * a, w_k * b)``; a, b broadcast against each other, w is (l, h)."""
    return ops.perspective_cosine(a, b, w)


def _match_direction(x, y, last: int, weights: dict) -> list[Tensor]:
    """Match every row of x against y for one LSTM direction; four (len(x), l) blocks."""
    h = x.shape[1]
    full = perspective_cosine(x, y[last], weights["full"])
    pairwise = perspective_cosine(
        ops.reshape(x, (x.shape[0], 1, h)), ops.reshape(y, (1, y.shape[0], h)), weights["maxpool"])
    maxpool = ops.max(pairwise, axis=1)
    sim = ops.cosine(ops.reshape(x, (x.shape[0], 1, h)), ops.reshape(y, (1, y.shape[0], h)))
    attended = ops.matmul(ops.softmax(sim, axis=1), y)
    attentive = perspective_cosine(x, attended, weights["attentive"])
    best = np.argmax(sim.data, axis=1)
    max_attentive = perspective_cosine(x, ops.take_rows(y, best), weights["max_attentive"])
    return [full, maxpool, attentive, max_attentive]


class EBiMPM:
    def __init__(self, params: ParameterSet, name: str, config: EBiMPMConfig):
        self.config = config
        d, l = config.context_dim, config.perspectives
        self.context = BiLSTM(params, f"{name}.context", config.input_dim, d // 2)
        self.fuse = Linear(params, f"{name}.fuse", 4 * d, d)
        self.match_weights = {
            (direction, strategy): params.add(f"{name}.match.{direction}.{strategy}", (l, d // 2))
            for direction in ("fwd", "bwd")
            for strategy in STRATEGIES
        }
        self.aggregate = BiLSTM(params, f"{name}.aggregate", 8 * l + d, config.aggregation_dim // 2)

    def context_encode(self, q_seq, s_seq) -> tuple[Tensor, Tensor]:
        q_seq, s_seq = as_tensor(q_seq), as_tensor(s_seq)
        if q_seq.shape[0] == 0 or s_seq.shape[0] == 0:
            raise ValueError("context_encode needs non-empty sequences")
        return self.context(q_seq), self.context(s_seq)

    def enhance(self, x, x_att) -> Tensor:
        fused = ops.concat([x, x_att, ops.sub(x, x_att), ops.mul(x, x_att)], axis=-1)
        return ops.tanh(self.fuse(fused))

    def multi_perspective_match(self, q, s) -> tuple[Tensor, Tensor]:
        half = self.config.context_dim // 2
        qf, qb = q[:, :half], q[:, half:]
        sf, sb = s[:, :half], s[:, half:]
        wf = {k: self.match_weights[("fwd", k)] for k in STRATEGIES}
        wb = {k: self.match_weights[("bwd", k)] for k in STRATEGIES}
        # forward states summarise up to the last token, backward states from the first
        q_bar = ops.concat(_match_direction(qf, sf, -1, wf) + _match_direction(qb, sb, 0, wb), axis=-1)
        s_bar = ops.concat(_match_direction(sf, qf, -1, wf) + _match_direction(sb, qb, 0, wb), axis=-1)
        return q_bar, s_bar

    def aggregate_final(self, q_bar, q_hat, s_bar, s_hat) -> MatchOutput:
        rq = ops.max(self.aggregate(ops.concat([q_bar, q_hat], axis=-1)), axis=0)
        rs = ops.max(self.aggregate(ops.concat([s_bar, s_hat], axis=-1)), axis=0)
        return MatchOutput(rq, rs)

    def __call__(self, q_seq, s_seq) -> MatchOutput:
        q, s = self.context_encode(q_seq, s_seq)
        q_att, s_att = cross_attention(q, s)
        q_hat = self.enhance(q, q_att)
        s_hat = self.enhance(s, s_att)
        q_bar, s_bar = self.multi_perspective_match(q, s)
        return self.aggregate_final(q_bar, q_hat, s_bar, s_hat)
