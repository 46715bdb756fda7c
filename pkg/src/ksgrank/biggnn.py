"""Bidirectional gated graph encoder.

Each layer sums transformed neighbour states along outgoing edges and,
separately, along incoming edges, then updates each direction's node states
with its own GRU.  The graph embedding is the column-wise max over the
final ``[h_out; h_in]`` node rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import GRUCell, Linear, ParameterSet, Tensor, ops
from .numerics.tensor import as_tensor

OUT, IN = "out", "in"


@dataclass
class BiGGNNConfig:
    hidden: int = 128
    layers: int = 2
    input_dim: int = 300

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("BiGGNN needs layers >= 1 and hidden >= 1")


@dataclass
class GraphEncoding:
    nodes: Tensor      # (N, 2D)
    graph: Tensor      # (2D,)


def aggregate(states, adjacency: np.ndarray, weight, direction: str) -> Tensor:
    """Row v is the sum of ``h_u @ weight`` over u adjacent to v in ``direction``.

    ``adjacency[v, u]`` counts edges v -> u, so outgoing neighbours are the
    row of v and incoming neighbours the column.
    """
    a = adjacency if direction == OUT else adjacency.T
    return ops.matmul(ops.matmul(Tensor(a), states), weight)


class BiGGNN:
    def __init__(self, params: ParameterSet, name: str, config: BiGGNNConfig):
        self.config = config
        d = config.hidden
        self.project = Linear(params, f"{name}.project", config.input_dim, d)
        self.weights = {
            (layer, direction): params.add(f"{name}.W{layer}.{direction}", (d, d))
            for layer in range(config.layers)
            for direction in (OUT, IN)
        }
        self.gru = {direction: GRUCell(params, f"{name}.gru.{direction}", d, d) for direction in (OUT, IN)}

    def layer_update(self, messages, states, direction: str) -> Tensor:
        return self.gru[direction](messages, states)

    def encode(self, features, adjacency: np.ndarray) -> GraphEncoding:
        features = as_tensor(features)
        if features.shape[0] == 0:
            raise ValueError("cannot encode an empty graph")
        if adjacency.shape != (features.shape[0], features.shape[0]):
            raise ops.ShapeError(f"encode: adjacency {adjacency.shape} for {features.shape[0]} nodes")
        h0 = self.project(features)
        h = {OUT: h0, IN: h0}
        for layer in range(self.config.layers):
            h = {
                direction: self.layer_update(
                    aggregate(h[direction], adjacency, self.weights[(layer, direction)], direction),
                    h[direction],
                    direction,
                )
                for direction in (OUT, IN)
            }
        nodes = ops.concat([h[OUT], h[IN]], axis=-1)
        return GraphEncoding(nodes, ops.max(nodes, axis=0))
