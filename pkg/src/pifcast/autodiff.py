"""Reverse-mode automatic differentiation on an append-only tape.

Values are float64 scalars, vectors ``(n,)`` or matrices ``(r, c)``.  Every
operation appends one node holding its forward value and a closure mapping
the node's output gradient to gradients for its inputs.  ``Tape.backward``
sweeps the node list in reverse, which is a valid reverse topological order
because a node's inputs always carry smaller ids.

Broadcasting is limited to scalar-with-anything and vector-with-matrix (the
vector spans the matrix columns).

A tape is meant to live for one training step; build a fresh one per step.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class AutodiffError(ValueError):
    pass


class ShapeError(AutodiffError):
    pass


class DomainError(AutodiffError):
    pass


class NonFiniteError(AutodiffError):
    pass


class TapeValue:
    """A node on a tape.  Arithmetic operators record new nodes."""

    __slots__ = ("tape", "id", "value", "parents", "vjp", "requires_grad")
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", value: np.ndarray, parents: tuple["TapeValue", ...], vjp: VJP | None,
                 requires_grad: bool):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.id = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self) -> str:
        return f"TapeValue(id={self.id}, shape={self.shape})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return pow(self, p)

    def __getitem__(self, key):
        return slice_(self, key)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Append-only list of nodes plus the reverse sweep."""

    def __init__(self) -> None:
        self.nodes: list[TapeValue] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: TapeValue) -> TapeValue:
        v = node.value
        if v.ndim > 2:
            raise ShapeError(f"values are limited to 2 dimensions, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite value produced at node {len(self.nodes)}")
        v.flags.writeable = False
        node.id = len(self.nodes)
        self.nodes.append(node)
        return node

    def leaf(self, value, requires_grad: bool = True) -> TapeValue:
        arr = np.array(value, dtype=np.float64)
        return self._append(TapeValue(self, arr, (), None, requires_grad))

    def const(self, value) -> TapeValue:
        return self.leaf(value, requires_grad=False)

    def record(self, value: np.ndarray, parents: Sequence[TapeValue], vjp: VJP) -> TapeValue:
        """Append a custom primitive.

        ``vjp`` receives the output gradient and returns one gradient per
        parent (``None`` for no contribution), each shaped like its parent.
        """
        for p in parents:
            if p.tape is not self:
                raise AutodiffError("cannot mix values from different tapes")
        value = np.asarray(value, dtype=np.float64)
        need = any(p.requires_grad for p in parents)
        return self._append(TapeValue(self, value, tuple(parents), vjp if need else None, need))

    def backward(self, root: TapeValue) -> list[np.ndarray | None]:
        """Gradient of scalar ``root`` w.r.t. every node, indexed by node id.

        Entries stay ``None`` for nodes the root does not depend on.
        """
        if root.tape is not self:
            raise AutodiffError("root belongs to a different tape")
        if root.value.ndim != 0:
            raise ShapeError(f"backward requires a scalar root, got shape {root.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[root.id] = np.ones((), dtype=np.float64)
        for node in reversed(self.nodes[: root.id + 1]):
            g = grads[node.id]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"vjp shape {pg.shape} != parent shape {parent.shape}")
                acc = grads[parent.id]
                grads[parent.id] = pg if acc is None else acc + pg
        return grads

    def grad(self, root: TapeValue, wrt: Iterable[TapeValue]) -> list[np.ndarray]:
        """Gradients of ``root`` for each value in ``wrt`` (zeros if unreachable)."""
        buf = self.backward(root)
        out = []
        for v in wrt:
            g = buf[v.id]
            out.append(np.zeros(v.shape) if g is None or not v.requires_grad else g)
        return out


def _lift(tape: Tape, x) -> TapeValue:
    if isinstance(x, TapeValue):
        return x
    return tape.const(x)


def _pair(a, b) -> tuple[TapeValue, TapeValue]:
    tape = a.tape if isinstance(a, TapeValue) else b.tape
    return _lift(tape, a), _lift(tape, b)


def _check_broadcast(sa: tuple, sb: tuple, op: str) -> None:
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # vector parent broadcast over matrix rows
    return g.sum(axis=0)


def add(a, b) -> TapeValue:
    a, b = _pair(a, b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return a.tape.record(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> TapeValue:
    a, b = _pair(a, b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return a.tape.record(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> TapeValue:
    a, b = _pair(a, b)
    _check_broadcast(a.shape, b.shape, "mul")
    av, bv = a.value, b.value
    return a.tape.record(
        av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def div(a, b) -> TapeValue:
    a, b = _pair(a, b)
    _check_broadcast(a.shape, b.shape, "div")
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise DomainError("div: division by zero")
    out = av / bv
    return a.tape.record(
        out, (a, b), lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape))
    )


def matmul(a, b) -> TapeValue:
    """Matrix-matrix, matrix-vector, vector-matrix or vector-vector product."""
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0:
        raise ShapeError("matmul: scalar operand")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")

    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:  # (r,c) @ (c,) -> (r,)
            return np.outer(g, bv), av.T @ g
        if bv.ndim == 2:  # (r,) @ (r,c) -> (c,)
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return a.tape.record(av @ bv, (a, b), vjp)


def _unary(x: TapeValue, out: np.ndarray, dfdx: np.ndarray) -> TapeValue:
    return x.tape.record(out, (x,), lambda g: (g * dfdx,))


def tanh(x: TapeValue) -> TapeValue:
    out = np.tanh(x.value)
    return _unary(x, out, 1.0 - out * out)


def sigmoid(x: TapeValue) -> TapeValue:
    v = x.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _unary(x, out, out * (1.0 - out))


def relu(x: TapeValue) -> TapeValue:
    """max(x, 0); the derivative at exactly 0 is taken as 0."""
    v = x.value
    return _unary(x, np.maximum(v, 0.0), (v > 0).astype(np.float64))


def exp(x: TapeValue) -> TapeValue:
    with np.errstate(over="ignore"):
        out = np.exp(x.value)
    return _unary(x, out, out)


def log(x: TapeValue) -> TapeValue:
    v = x.value
    if np.any(v <= 0):
        raise DomainError("log: non-positive argument")
    return _unary(x, np.log(v), 1.0 / v)


def pow(x: TapeValue, p: float) -> TapeValue:
    """Elementwise ``x ** p`` for a constant exponent."""
    if isinstance(p, TapeValue):
        raise AutodiffError("pow: exponent must be a constant")
    p = float(p)
    v = x.value
    if not p.is_integer() and np.any(v < 0):
        raise DomainError("pow: negative base with non-integer exponent")
    if p < 0 and np.any(v == 0):
        raise DomainError("pow: zero base with negative exponent")
    return _unary(x, v ** p, p * v ** (p - 1.0) if p != 0 else np.zeros_like(v))


def sum(x: TapeValue, axis: int | None = None) -> TapeValue:
    v = x.value
    shape = v.shape
    if axis is None:
        return x.tape.record(np.asarray(v.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = v.sum(axis=axis)
    return x.tape.record(out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(x: TapeValue, axis: int | None = None) -> TapeValue:
    n = x.value.size if axis is None else x.value.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def concat(values: Sequence[TapeValue], axis: int = 0) -> TapeValue:
    """Concatenate along ``axis``; a list of scalars stacks into a vector."""
    if not values:
        raise ShapeError("concat: empty input")
    tape = values[0].tape
    vals = [_lift(tape, v) for v in values]
    if all(v.ndim == 0 for v in vals):
        out = np.array([v.value for v in vals])
        return tape.record(out, vals, lambda g: tuple(np.asarray(gi) for gi in g))
    ndims = {v.ndim for v in vals}
    if len(ndims) != 1 or 0 in ndims:
        raise ShapeError("concat: operands must share rank")
    try:
        out = np.concatenate([v.value for v in vals], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tape.record(out, vals, lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_(x: TapeValue, key) -> TapeValue:
    out = np.array(x.value[key])
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return x.tape.record(out, (x,), vjp)


def transpose(x: TapeValue) -> TapeValue:
    if x.ndim != 2:
        raise ShapeError("transpose: matrix required")
    return x.tape.record(x.value.T.copy(), (x,), lambda g: (g.T,))


def reshape(x: TapeValue, shape: tuple[int, ...]) -> TapeValue:
    old = x.shape
    try:
        out = x.value.reshape(shape).copy()
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from exc
    return x.tape.record(out, (x,), lambda g: (g.reshape(old),))


def softmax(x: TapeValue) -> TapeValue:
    """Softmax over the last axis (row-wise for matrices)."""
    v = x.value
    if v.ndim == 0:
        raise ShapeError("softmax: vector or matrix required")
    z = np.exp(v - v.max(axis=-1, keepdims=True))
    s = z / z.sum(axis=-1, keepdims=True)
    return x.tape.record(s, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def square(x: TapeValue) -> TapeValue:
    v = x.value
    return _unary(x, v * v, 2.0 * v)

