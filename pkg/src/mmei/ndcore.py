"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Tensors created through
:meth:`Tape.watch` are tracked: every operation applied to them appends a
node to the tape holding the input node ids and a vector-Jacobian product.
:func:`backward` walks the tape once in reverse id order.

Untracked tensors go through exactly the same operations without recording
anything, which is how evaluation and finite-difference checks run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ParameterError, ShapeError

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class _Node:
    inputs: tuple
    vjp: Callable | None
    shape: tuple


class Tape:
    """Append-only record of operations for one forward pass."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, value) -> "Tensor":
        """Register ``value`` as a leaf and return a tracked tensor."""
        data = np.array(value, dtype=np.float64)
        self.nodes.append(_Node((), None, data.shape))
        return Tensor(data, self, len(self.nodes) - 1)

    def record(self, value: np.ndarray, inputs: Sequence["Tensor"], vjp: Callable) -> "Tensor":
        ids = tuple(t.node_id if t.tape is self else None for t in inputs)
        self.nodes.append(_Node(ids, vjp, value.shape))
        return Tensor(value, self, len(self.nodes) - 1)


class Tensor:
    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data: np.ndarray, tape: Tape | None = None, node_id: int | None = None):
        self.data = data
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        flag = f", node={self.node_id}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def tensor(values) -> Tensor:
    """Build an untracked tensor from external data, rejecting NaN/Inf."""
    data = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NumericalError("tensor input contains NaN or Inf")
    return Tensor(data)


def _tape_of(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands are tracked on different tapes")
            tape = t.tape
    return tape


def _result(value: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    for t in inputs:
        if t.tape is not None:
            return _tape_of(inputs).record(value, inputs, vjp)
    return Tensor(value)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    sa, sb = a.shape, b.shape
    return _result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None
    sa, sb = a.shape, b.shape
    return _result(out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def log_sigmoid(x: Tensor) -> Tensor:
    """Elementwise ln(1/(1+e^-x)), stable for large |x|."""
    xd = x.data
    out = -np.logaddexp(0.0, -xd)
    return _result(out, (x,), lambda g: (g * _sigmoid(-xd),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


# --- linear algebra and reshaping ------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. One-dimensional operands act as row/column vectors."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2) or ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    out = ad @ bd

    def vjp(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2:
            return np.outer(g, bd), ad.T @ g
        if bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad

    return _result(np.asarray(out, dtype=np.float64), (a, b), vjp)


def matmul_t(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T for matrices without recording a separate transpose."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[1]:
        raise ShapeError(f"matmul_t: widths differ for shapes {a.shape} and {b.shape}")
    return _result(ad @ bd.T, (a, b), lambda g: (g @ bd, g.T @ ad))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return _result(x.data.T, (x,), lambda g: (g.T,))


def concat_rows(xs: Sequence[Tensor]) -> Tensor:
    """Stack matrices (or vectors, as single rows) vertically."""
    if not xs:
        raise ShapeError("concat_rows needs at least one tensor")
    parts = [np.atleast_2d(x.data) for x in xs]
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows: widths differ {[x.shape for x in xs]}")
    out = np.vstack(parts)
    shapes = [x.shape for x in xs]
    bounds = np.cumsum([p.shape[0] for p in parts])[:-1]

    def vjp(g):
        return tuple(piece.reshape(s) for piece, s in zip(np.split(g, bounds), shapes))

    return _result(out, tuple(xs), vjp)


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    idx = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(x.data[idx], (x,), vjp)


def mean_rows(x: Tensor) -> Tensor:
    """Average a [m x n] matrix over its rows, giving an n-vector."""
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"mean_rows needs a non-empty matrix, got shape {x.shape}")
    m, shape = x.shape[0], x.shape
    return _result(x.data.mean(axis=0), (x,), lambda g: (np.broadcast_to(g / m, shape),))


def row_sums(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(x.data.sum(axis=1), (x,), lambda g: (np.broadcast_to(g[:, None], shape),))


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape),))


def mean(x: Tensor) -> Tensor:
    n, shape = x.data.size, x.shape
    return _result(np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, shape),))


# --- probabilistic ---------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis with per-row max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def cross_entropy(probs: Tensor, labels: Sequence[int]) -> Tensor:
    """Batch mean of -ln p[label]; probabilities clamped at 1e-12 first."""
    if probs.ndim != 2:
        raise ShapeError(f"cross_entropy expects [m x C] probabilities, got {probs.shape}")
    m, c = probs.shape
    lab = np.asarray(labels, dtype=np.intp)
    if lab.shape != (m,):
        raise ShapeError(f"cross_entropy: {len(lab)} labels for {m} rows")
    if m and (lab.min() < 0 or lab.max() >= c):
        raise IndexError(f"label out of range [0, {c}): {lab.tolist()}")
    rows = np.arange(m)
    p = probs.data[rows, lab]
    safe = np.maximum(p, LOG_CLAMP)
    out = np.asarray(-np.log(safe).mean())

    def vjp(g):
        full = np.zeros((m, c))
        full[rows, lab] = np.where(p > LOG_CLAMP, -g / (m * safe), 0.0)
        return (full,)

    return _result(out, (probs,), vjp)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability p, rescale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


# --- reverse pass ----------------------------------------------------------

def backward(loss: Tensor) -> dict[int, Tensor]:
    """Gradients of a tracked scalar with respect to every leaf on its tape.

    Leaves the loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise ValueError("backward called on an untracked tensor")
    nodes = loss.tape.nodes
    adj: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
    grads: dict[int, Tensor] = {}
    for nid in range(len(nodes) - 1, -1, -1):
        node = nodes[nid]
        g = adj.pop(nid, None) if nid <= loss.node_id else None
        if node.vjp is None:
            grads[nid] = Tensor(np.zeros(node.shape) if g is None else np.array(g, dtype=np.float64).reshape(node.shape))
            continue
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if inp is None or gi is None:
                continue
            adj[inp] = adj[inp] + gi if inp in adj else gi
    return grads
