"""Small define-by-run reverse-mode autodiff over float64 numpy arrays.

Every op returns a new :class:`Node` holding its forward value and a closure
that pushes the upstream gradient back into its inputs. The graph is rebuilt
on every training step, so there is no graph caching or optimisation.

``stop_gradient`` is the one op with special semantics: its forward value is
the input value, its backward contributes nothing. Attention scores that must
act as constants during back-propagation go through it.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "Node",
    "as_node",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "matvec",
    "relu",
    "exp",
    "log",
    "square",
    "sqrt",
    "clip_min",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "softmax",
    "log_softmax",
    "gather_rows",
    "l2_norm",
    "stop_gradient",
    "backward",
    "zero_grad",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Node:
    """A value in the computation graph plus its accumulated gradient."""

    __slots__ = ("value", "_grad", "parents", "_backward", "requires_grad", "name")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        requires_grad: bool = True,
        name: str | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self._grad = None
        self.parents = tuple(parents)
        self._backward = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        # allocated on first touch; most interior nodes are written exactly once
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node{label}(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(x, requires_grad=False)


def constant(x) -> Node:
    return Node(x, requires_grad=False)


def _needs_grad(*nodes: Node) -> bool:
    return any(n.requires_grad for n in nodes)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out the axes numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _result(value, parents, backward_fn) -> Node:
    needs = _needs_grad(*parents)
    return Node(value, parents if needs else (), backward_fn if needs else None, needs)


def _broadcast_shape(a: Node, b: Node, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.shape)

    return _result(a.value + b.value, (a, b), bw)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.shape)

    return _result(a.value - b.value, (a, b), bw)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.value, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.value, b.shape)

    return _result(a.value * b.value, (a, b), bw)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "div")
    out = a.value / b.value

    def bw(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g / b.value, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g * out / b.value, b.shape)

    return _result(out, (a, b), bw)


def neg(a) -> Node:
    a = as_node(a)

    def bw(g):
        if a.requires_grad:
            a.grad -= g

    return _result(-a.value, (a,), bw)


def matmul(a, b) -> Node:
    """Matrix product of two 2-D nodes."""
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a.grad += g @ b.value.T
        if b.requires_grad:
            b.grad += a.value.T @ g

    return _result(a.value @ b.value, (a, b), bw)


def matvec(w, x) -> Node:
    """``W @ x`` for a matrix ``W`` (r, c) and vector ``x`` (c,)."""
    w, x = as_node(w), as_node(x)
    if w.value.ndim != 2 or x.value.ndim != 1 or w.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec: {w.shape} @ {x.shape}")

    def bw(g):
        if w.requires_grad:
            w.grad += np.outer(g, x.value)
        if x.requires_grad:
            x.grad += w.value.T @ g

    return _result(w.value @ x.value, (w, x), bw)


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0

    def bw(g):
        if a.requires_grad:
            a.grad += g * mask

    return _result(np.maximum(a.value, 0.0), (a,), bw)  # maximum keeps NaN visible


def exp(a) -> Node:
    a = as_node(a)
    out = np.exp(a.value)

    def bw(g):
        if a.requires_grad:
            a.grad += g * out

    return _result(out, (a,), bw)


def log(a) -> Node:
    a = as_node(a)

    def bw(g):
        if a.requires_grad:
            a.grad += g / a.value

    return _result(np.log(a.value), (a,), bw)


def square(a) -> Node:
    a = as_node(a)

    def bw(g):
        if a.requires_grad:
            a.grad += 2.0 * g * a.value

    return _result(a.value * a.value, (a,), bw)


def sqrt(a) -> Node:
    a = as_node(a)
    out = np.sqrt(a.value)

    def bw(g):
        # subgradient 0 at the origin
        safe = np.where(out > 0, out, 1.0)
        if a.requires_grad:
            a.grad += np.where(out > 0, 0.5 * g / safe, 0.0)

    return _result(out, (a,), bw)


def clip_min(a, floor: float) -> Node:
    """``max(a, floor)``; gradient passes only where ``a`` is above the floor."""
    a = as_node(a)
    mask = a.value > floor

    def bw(g):
        if a.requires_grad:
            a.grad += g * mask

    return _result(np.maximum(a.value, floor), (a,), bw)


def sum(a, axis: int | None = None) -> Node:  # noqa: A001 - mirrors numpy
    a = as_node(a)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        if a.requires_grad:
            a.grad += np.broadcast_to(g, a.shape)

    return _result(a.value.sum(axis=axis), (a,), bw)


def mean(a, axis: int | None = None) -> Node:
    a = as_node(a)
    if a.value.size == 0:
        raise DimensionError("mean of an empty array")
    count = a.value.size if axis is None else a.shape[axis]

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        if a.requires_grad:
            a.grad += np.broadcast_to(g, a.shape) / count

    return _result(a.value.mean(axis=axis), (a,), bw)


def transpose(a) -> Node:
    a = as_node(a)

    def bw(g):
        if a.requires_grad:
            a.grad += g.T

    return _result(a.value.T, (a,), bw)


def reshape(a, shape: tuple[int, ...]) -> Node:
    a = as_node(a)

    def bw(g):
        if a.requires_grad:
            a.grad += g.reshape(a.shape)

    return _result(a.value.reshape(shape), (a,), bw)


def softmax(a) -> Node:
    """Softmax over the last axis, computed with max-subtraction."""
    a = as_node(a)
    if a.value.size == 0 or a.shape[-1] == 0:
        raise DimensionError("softmax of an empty vector")
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        if a.requires_grad:
            a.grad += out * (g - (g * out).sum(axis=-1, keepdims=True))

    return _result(out, (a,), bw)


def log_softmax(a) -> Node:
    a = as_node(a)
    if a.value.size == 0 or a.shape[-1] == 0:
        raise DimensionError("log_softmax of an empty vector")
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def bw(g):
        if a.requires_grad:
            a.grad += g - probs * g.sum(axis=-1, keepdims=True)

    return _result(out, (a,), bw)


def gather_rows(a, index: Iterable[int]) -> Node:
    """Pick ``a[i, index[i]]`` for every row ``i`` of a 2-D node."""
    a = as_node(a)
    idx = np.asarray(index, dtype=np.intp)
    if a.value.ndim != 2 or idx.shape != (a.shape[0],):
        raise DimensionError(f"gather_rows: {a.shape} with index {idx.shape}")
    rows = np.arange(a.shape[0])

    def bw(g):
        np.add.at(a.grad, (rows, idx), g)

    return _result(a.value[rows, idx], (a,), bw)


def l2_norm(a, axis: int | None = None) -> Node:
    """Euclidean norm; the subgradient at the zero vector is 0."""
    return sqrt(sum(square(a), axis=axis))


def stop_gradient(a) -> Node:
    """Identity forward; blocks all gradient flow into ``a``."""
    a = as_node(a)
    return Node(a.value.copy(), requires_grad=False)


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate ``d loss / d node`` into ``.grad`` of every reachable node.

    Gradients accumulate across calls; zero them explicitly between steps.
    Interior nodes are fresh each step, so only leaves keep accumulating.
    """
    if loss.value.ndim != 0:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    for node in order:
        if node is not loss and node._backward is not None:
            node._grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grad(nodes: Iterable[Node]) -> None:
    for n in nodes:
        n._grad = None
