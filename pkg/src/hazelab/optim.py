"""Trainable parameter registry and the Adam optimizer."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import FLOAT, Tensor


class Param:
    __slots__ = ("value", "m", "v")

    def __init__(self, value: Tensor):
        self.value = value
        self.m = np.zeros_like(value.data)
        self.v = np.zeros_like(value.data)


class ParamSet:
    """Ordered map name -> (value tensor, Adam moments); iteration order is insertion."""

    def __init__(self):
        self._params: dict[str, Param] = {}
        self.step_count = 0

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        t = Tensor(array, requires_grad=True)
        self._params[name] = Param(t)
        return t

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].value

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self):
        for p in self._params.values():
            p.value.grad = None

    def load_values(self, arrays: dict[str, np.ndarray]):
        for name, param in self._params.items():
            param.value.data = np.asarray(arrays[name], dtype=FLOAT).reshape(
                param.value.data.shape
            )

    def export_state(self) -> dict[str, np.ndarray]:
        """Adam moments keyed by '<name>.m' / '<name>.v' for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name, p in self._params.items():
            out[name + ".m"] = p.m
            out[name + ".v"] = p.v
        return out

    def import_state(self, arrays: dict[str, np.ndarray], step_count: int):
        for name, p in self._params.items():
            p.m = np.asarray(arrays[name + ".m"], dtype=FLOAT).reshape(p.m.shape)
            p.v = np.asarray(arrays[name + ".v"], dtype=FLOAT).reshape(p.v.shape)
        self.step_count = step_count


def adam_step(
    params: ParamSet,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update; gradients are zeroed afterward.

    Parameters with no accumulated gradient are treated as having zero
    gradient (their moments still decay).
    """
    params.step_count += 1
    t = params.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for _, p in params.items():
        g = p.value.grad
        if g is None:
            g = np.zeros_like(p.value.data)
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        mhat = p.m / bc1
        vhat = p.v / bc2
        p.value.data = p.value.data - (lr * mhat / (np.sqrt(vhat) + eps)).astype(FLOAT)
        p.value.grad = None
