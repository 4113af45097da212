"""Dense float32 tensors with reverse-mode gradients.

This is deliberately not a general autodiff system: it supports exactly the
operations the dehazing network needs (see ops.py) plus same-shape/scalar
arithmetic for the K-model output head.  Activations are 4-D NCHW arrays;
conv biases are 1-D.  The backward pass walks graph nodes in exact reverse
topological order of forward construction.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeError

FLOAT = np.float32


def as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=FLOAT)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = as_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph -------------------------------------------------------------

    def backward(self, grad: Optional[np.ndarray] = None):
        """Accumulate gradients into every reachable tensor with requires_grad.

        `grad` seeds the output gradient; it defaults to ones (the usual call
        is on a scalar loss).
        """
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = as_array(grad)
            if grad.shape != self.data.shape:
                raise ShapeError(
                    f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}"
                )

        order = _toposort(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, pgrad in zip(node._parents, parent_grads):
                if pgrad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pgrad
                else:
                    parent.grad = parent.grad + pgrad

    # -- arithmetic (same-shape tensors or python scalars) -------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape("add", self, other)
            return make_node(
                self.data + other.data, (self, other), lambda g: (g, g)
            )
        c = FLOAT(other)
        return make_node(self.data + c, (self,), lambda g: (g,))

    __radd__ = __add__

    def __neg__(self):
        return make_node(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape("sub", self, other)
            return make_node(
                self.data - other.data, (self, other), lambda g: (g, -g)
            )
        c = FLOAT(other)
        return make_node(self.data - c, (self,), lambda g: (g,))

    def __rsub__(self, other):
        c = FLOAT(other)
        return make_node(c - self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape("mul", self, other)
            a, b = self, other
            return make_node(
                a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data)
            )
        c = FLOAT(other)
        return make_node(self.data * c, (self,), lambda g: (g * c,))

    __rmul__ = __mul__


def make_node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op result; the node records parents only when gradients flow."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ")
