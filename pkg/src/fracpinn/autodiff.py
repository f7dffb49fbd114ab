"""Reverse-mode automatic differentiation over numpy arrays.

Tensors record elementary operations as they are evaluated; the recorded
graph is the tape, and a reverse sweep accumulates exact gradients for any
subset of leaves.  Values are float64 arrays of any shape (training batches
live in trailing axes), with numpy broadcasting supported and un-broadcast
in the backward pass.
"""

from __future__ import annotations

import numpy as np


class GradientError(ValueError):
    """Gradient requested for a leaf the tape never recorded."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce grad back to shape after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward")

    # keep numpy from absorbing Tensors into object arrays; reflected
    # operators then dispatch here
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    # -- elementary operations ------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value + other.value, (self, other))

        def backward(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        out._backward = backward
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value - other.value, (self, other))

        def backward(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        out._backward = backward
        return out

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value * other.value, (self, other))

        def backward(g):
            return (
                _unbroadcast(g * other.value, self.shape),
                _unbroadcast(g * self.value, other.shape),
            )

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value / other.value, (self, other))

        def backward(g):
            return (
                _unbroadcast(g / other.value, self.shape),
                _unbroadcast(-g * self.value / other.value**2, other.shape),
            )

        out._backward = backward
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        out = Tensor(-self.value, (self,))
        out._backward = lambda g: (-g,)
        return out

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant exponents are supported")
        out = Tensor(self.value**exponent, (self,))

        def backward(g):
            return (g * exponent * self.value ** (exponent - 1),)

        out._backward = backward
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value @ other.value, (self, other))
        a, b = self.value, other.value

        def backward(g):
            if a.ndim == 1 and b.ndim == 2:  # (n,) @ (n,p)
                return g @ b.T, np.outer(a, g)
            if a.ndim == 2 and b.ndim == 1:  # (m,n) @ (n,)
                return np.outer(g, b), a.T @ g
            if a.ndim == 1 and b.ndim == 1:  # inner product
                return g * b, g * a
            return g @ b.T, a.T @ g

        out._backward = backward
        return out

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    def __getitem__(self, key):
        out = Tensor(self.value[key], (self,))
        shape = self.value.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, key, g)
            return (full,)

        out._backward = backward
        return out

    def reshape(self, *shape):
        out = Tensor(self.value.reshape(*shape), (self,))
        orig = self.value.shape
        out._backward = lambda g: (g.reshape(orig),)
        return out

    def exp(self):
        out = Tensor(np.exp(self.value), (self,))
        out._backward = lambda g: (g * out.value,)
        return out

    def log(self):
        out = Tensor(np.log(self.value), (self,))
        out._backward = lambda g: (g / self.value,)
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.value), (self,))
        out._backward = lambda g: (g * (1.0 - out.value**2),)
        return out

    def sin(self):
        out = Tensor(np.sin(self.value), (self,))
        out._backward = lambda g: (g * np.cos(self.value),)
        return out

    def cos(self):
        out = Tensor(np.cos(self.value), (self,))
        out._backward = lambda g: (-g * np.sin(self.value),)
        return out

    def sum(self, axis=None):
        out = Tensor(self.value.sum(axis=axis), (self,))
        shape = self.value.shape

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

        out._backward = backward
        return out

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) / float(n)

    def item(self) -> float:
        return float(self.value)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def where(mask, a, b) -> Tensor:
    """Select a where mask else b; mask is a constant boolean array."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, a.value, b.value), (a, b))

    def backward(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        )

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    """max(0, x) with subgradient 0 at the kink."""
    return where(x.value > 0, x, Tensor(np.zeros_like(x.value)))


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


def jacobian(output: Tensor, leaves: list[Tensor]) -> np.ndarray:
    """Dense Jacobian of a 1-d recorded output w.r.t. flattened leaves.

    Runs one reverse sweep per output entry over the already-recorded tape;
    rows follow the output order, columns the leaves' flattened order.
    """
    if output.value.ndim != 1:
        raise ValueError("jacobian expects a 1-d output tensor")
    order = _toposort(output)
    m = output.value.size
    cols = int(sum(leaf.value.size for leaf in leaves))
    jac = np.empty((m, cols))
    for i in range(m):
        for node in order:
            node.grad = None
        seed = np.zeros(m)
        seed[i] = 1.0
        output.grad = seed
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if parent.grad is None:
                    parent.grad = np.zeros(parent.value.shape)
                parent.grad = parent.grad + g
        pos = 0
        for leaf in leaves:
            n = leaf.value.size
            jac[i, pos : pos + n] = (
                leaf.grad.ravel() if leaf.grad is not None else 0.0
            )
            pos += n
    return jac


def grad_params(loss: Tensor, leaves: list[Tensor]) -> list[np.ndarray]:
    """Exact reverse-mode gradient of a recorded scalar w.r.t. each leaf.

    Raises GradientError if a requested leaf never entered the recorded
    computation.
    """
    if loss.value.ndim != 0:
        raise ValueError("loss must be a scalar tensor")
    order = _toposort(loss)
    recorded = {id(node) for node in order}
    for i, leaf in enumerate(leaves):
        if id(leaf) not in recorded:
            raise GradientError(f"leaf {i} was never recorded on the tape")
    for node in order:
        node.grad = None
    loss.grad = np.ones(())
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if parent.grad is None:
                parent.grad = np.zeros(parent.value.shape)
            parent.grad = parent.grad + g
    return [
        leaf.grad if leaf.grad is not None else np.zeros(leaf.value.shape) for leaf in leaves
    ]
