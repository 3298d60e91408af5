"""Reverse-mode autodiff over numpy arrays.

Every op records its parents and a closure mapping the output gradient to
parent gradients. Gradients are only computed for tensors that (transitively)
require them, which is how frozen parameter groups skip work.
"""
from __future__ import annotations

import numpy as np


class PoisonedGradientError(FloatingPointError):
    """Raised when backward is asked to differentiate a NaN/Inf loss."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "_scratch")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), name: str | None = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.name = name
        self._scratch = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def scratch(self) -> np.ndarray:
        """Reusable gradient buffer shaped like ``data``.

        Large weight gradients are written here instead of freshly allocated
        each step; a ``.grad`` taken from it is only valid until the next
        backward pass.
        """
        if self._scratch is None or self._scratch.shape != self.data.shape:
            self._scratch = np.empty_like(self.data)
        return self._scratch

    def _accumulate(self, g: np.ndarray):
        # never mutate in place: the same array may be handed to several parents
        self.grad = g if self.grad is None else self.grad + g

    # arithmetic -------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.data.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)

    def square(self):
        return square(self)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x, dtype=np.float64) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Create an op output; ``backward(g)`` returns one gradient (or None) per parent."""
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else ())
    if needs:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # python scalars take the dtype of the tensor operand (keeps float32 graphs float32)
    dtype = a.data.dtype if isinstance(a, Tensor) else b.data.dtype
    return as_tensor(a, dtype), as_tensor(b, dtype)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make(a.data * b.data, (a, b), backward)


def square(a: Tensor) -> Tensor:
    return make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def total(a: Tensor) -> Tensor:
    return make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return make(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.shape),))


def reshape(a: Tensor, shape) -> Tensor:
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return make(a.data[idx], (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    edges = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(edges[i], edges[i + 1]), axis=axis) for i in range(len(tensors)))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def topological_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children order; depends only on graph structure."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every node requiring grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise PoisonedGradientError(f"loss is {float(loss.data.reshape(()))}; refusing to backpropagate")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if parent.requires_grad and g is not None:
                parent._accumulate(g)
