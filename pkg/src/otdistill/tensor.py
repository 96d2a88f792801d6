"""Dense float64 matrices with a minimal reverse-mode autodiff.

Every value is a 2-D ``numpy`` array (scalars are 1x1). A :class:`Node` wraps
one such array; operations on nodes record a closure that maps the upstream
gradient to gradients of the inputs. :func:`backward` walks the graph once in
reverse topological order and then frees it.

Broadcasting is limited to 1x1 scalars, 1xn row vectors and bx1 column
vectors against a full matrix.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, GraphError, NumericalError, ZeroRowError


def as_matrix(data, *, name: str | None = None) -> np.ndarray:
    """Validate ``data`` as a finite 2-D float64 array and freeze it."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        label = f" in {name}" if name else ""
        raise NumericalError(f"non-finite entries{label}")
    arr.flags.writeable = False
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    # Fast path for op outputs: already float64 2-D.
    if not np.isfinite(arr).all():
        raise NumericalError("operation produced non-finite values")
    arr.flags.writeable = False
    return arr


class Node:
    """A matrix value in a gradient graph."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        if (isinstance(value, np.ndarray) and value.ndim == 2 and value.dtype == np.float64
                and not value.flags.writeable):
            self.value = value
        else:
            self.value = as_matrix(value, name=name)
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(self.value) if requires_grad else None
        self._parents: tuple[Node, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def detach(self) -> "Node":
        return Node(self.value)

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise GraphError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Node":
        return transpose(self)


def parameter(value, name: str | None = None) -> Node:
    """A trainable leaf."""
    return Node(value, requires_grad=True, name=name)


def constant(value) -> Node:
    return value if isinstance(value, Node) else Node(value)


def _make(value: np.ndarray, parents: Sequence[Node], backward: Callable) -> Node:
    out = Node(_frozen(value))
    live = tuple(parents)
    if any(p.requires_grad for p in live):
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    return out


def custom(value: np.ndarray, parents: Sequence[Node], backward: Callable) -> Node:
    """Record an op defined outside this module.

    ``backward(g)`` must return one gradient per parent, in order.
    """
    return _make(np.array(value, dtype=np.float64), parents, backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a: Node, b: Node, op: str) -> None:
    (ra, ca), (rb, cb) = a.shape, b.shape
    if (ra == rb or ra == 1 or rb == 1) and (ca == cb or ca == 1 or cb == 1):
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# --- elementwise binary -------------------------------------------------

def add(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "add")
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "sub")
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Node:
    """Elementwise (Hadamard) product."""
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "mul")
    return _make(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "div")
    if np.any(b.value == 0.0):
        raise NumericalError(f"div: zero in denominator of shape {b.shape}")
    out = a.value / b.value
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.shape),
                            _unbroadcast(-g * out / b.value, b.shape)))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,))


# --- matrix ops -----------------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    a, b = constant(a), constant(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    return _make(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a: Node) -> Node:
    return _make(a.value.T, (a,), lambda g: (g.T,))


def concat_cols(nodes: Sequence[Node]) -> Node:
    nodes = [constant(n) for n in nodes]
    if not nodes:
        raise DimensionError("concat_cols: nothing to concatenate")
    rows = {n.shape[0] for n in nodes}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[n.shape for n in nodes]}")
    bounds = np.cumsum([0] + [n.shape[1] for n in nodes])
    value = np.concatenate([n.value for n in nodes], axis=1)
    return _make(value, nodes,
                 lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(nodes))))


def gather_cols(a: Node, indices: Sequence[int]) -> Node:
    """Columns of ``a`` at ``indices``; the gradient scatters back."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise DimensionError("gather_cols: indices must be a nonempty 1-D sequence")
    if idx.min() < 0 or idx.max() >= a.shape[1]:
        raise DimensionError(f"gather_cols: index out of range for {a.shape[1]} columns")

    def back(g):
        full = np.zeros(a.shape)
        np.add.at(full, (slice(None), idx), g)
        return (full,)

    return _make(a.value[:, idx], (a,), back)


def gather_rows(a: Node, indices: Sequence[int]) -> Node:
    idx = np.asarray(indices, dtype=np.intp)

    def back(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.value[idx, :], (a,), back)


# --- reductions -----------------------------------------------------------

def sum(a: Node, axis: int | None = None) -> Node:  # noqa: A001 - mirrors numpy
    """Sum all entries (1x1), down columns (axis=0, 1xn) or along rows (axis=1, bx1)."""
    if axis is None:
        value = np.array([[a.value.sum()]])
    else:
        value = a.value.sum(axis=axis, keepdims=True)
    return _make(value, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Node, axis: int | None = None) -> Node:
    count = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / count)


def rowwise_l2norm(a: Node) -> Node:
    """bx1 column of per-row Euclidean norms."""
    if a.value.size == 0:
        raise DimensionError("rowwise_l2norm: empty matrix")
    norms = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    zero = np.flatnonzero(norms[:, 0] == 0.0)
    if zero.size:
        raise ZeroRowError(int(zero[0]))
    return _make(norms, (a,), lambda g: (g * a.value / norms,))


# --- elementwise unary ----------------------------------------------------

def relu(a: Node) -> Node:
    mask = a.value > 0
    return _make(a.value * mask, (a,), lambda g: (g * mask,))


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Node) -> Node:
    x = a.value
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise NumericalError("log of a non-positive entry")
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a: Node) -> Node:
    if np.any(a.value < 0):
        raise NumericalError("sqrt of a negative entry")
    out = np.sqrt(a.value)

    def back(g):
        if np.any(out == 0):
            raise NumericalError("sqrt gradient undefined at 0")
        return (g * 0.5 / out,)

    return _make(out, (a,), back)


def square(a: Node) -> Node:
    return _make(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def log_softmax_rows(a: Node) -> Node:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


def softmax_rows(a: Node) -> Node:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return _make(out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=1, keepdims=True)),))


# --- backward -------------------------------------------------------------

def _topo_order(root: Node) -> list[Node]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> dict[Node, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into every reachable trainable leaf.

    Returns a map from leaf node to the gradient contributed by this call.
    The graph is released afterwards; calling again on the same loss raises.
    """
    if loss.shape != (1, 1):
        raise GraphError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if loss._consumed:
        raise GraphError("backward already called on this graph")
    if not loss.requires_grad:
        loss._consumed = True
        return {}
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    leaves: dict[Node, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g
            leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    for node in order:
        if not node.is_leaf:
            node._parents = ()
            node._backward = None
            node.requires_grad = False
            node._consumed = True
    loss._consumed = True
    return leaves


def zero_grads(params: Iterable[Node]) -> None:
    for p in params:
        p.zero_grad()


# --- CSV ------------------------------------------------------------------

def save_csv(path, matrix) -> None:
    """One row per line, ``,`` separator, round-trip precision."""
    value = matrix.value if isinstance(matrix, Node) else np.asarray(matrix, dtype=np.float64)
    if value.ndim == 1:
        value = value.reshape(1, -1)
    np.savetxt(path, value, delimiter=",", fmt="%.17g")


def load_csv(path) -> np.ndarray:
    return as_matrix(np.loadtxt(path, delimiter=",", ndmin=2))
