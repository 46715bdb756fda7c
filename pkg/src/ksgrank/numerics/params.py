"""Named trainable parameters and their seeded initialisation."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import Tensor, get_default_dtype


class ParameterSet:
    """Ordered ``name -> Tensor`` map.

    Parameters are drawn from one ``numpy.random.Generator`` seeded at
    construction, in creation order, so the same seed and the same sequence of
    ``add`` calls reproduce the same values bit for bit.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, shape, init: str = "glorot") -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            values = np.zeros(shape)
        elif init == "glorot":
            fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            values = self._rng.uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown initialiser {init!r}")
        tensor = Tensor(values.astype(get_default_dtype()), requires_grad=True)
        self._params[name] = tensor
        return tensor

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list:
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict:
        """Copy of the current values, keyed by name."""
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state: dict):
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, t in self._params.items():
            values = np.asarray(state[k], dtype=t.data.dtype)
            if values.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {values.shape} vs {t.data.shape}")
            t.data = values.copy()

    def num_values(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))
