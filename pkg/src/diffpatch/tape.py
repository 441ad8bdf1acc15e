"""Reverse-mode accumulation over numpy tensors.

A :class:`Tape` is an append-only list of nodes. Every traced value is a
:class:`Var` pointing at its node; each node keeps its parents together with
a vector-Jacobian closure. Because node ids are assigned in creation order,
walking the list backwards is already a valid reverse topological order.

Jet slots (see :mod:`diffpatch.jets`) may hold ``Var`` objects, so UV
derivatives of the decoder are themselves traced and ``backward`` returns
mixed quantities such as d(df/du)/dw without any special casing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Tape", "Var", "backward", "concat", "stack", "stable_sigmoid", "stable_softplus"]

SOFTPLUS_CUTOFF = 30.0


def stable_softplus(x):
    """ln(1 + e^x) without overflow; exact identity branches beyond +-30."""
    x = np.asarray(x, dtype=np.float64)
    mid = np.log1p(np.exp(np.clip(x, -SOFTPLUS_CUTOFF, SOFTPLUS_CUTOFF)))
    out = np.where(x > SOFTPLUS_CUTOFF, x, mid)
    out = np.where(x < -SOFTPLUS_CUTOFF, np.exp(np.minimum(x, 0.0)), out)
    return out if out.ndim else float(out)


def stable_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


@dataclass
class _Node:
    parents: tuple  # ((parent_id, vjp), ...)


@dataclass
class Tape:
    """Single-owner record of tensor operations.

    Parameters are registered with :meth:`param`; constants with
    :meth:`const`. A tape is meant to be rebuilt for every optimisation step.
    """

    nodes: list = field(default_factory=list)
    params: dict = field(default_factory=dict)  # name -> Var

    def _push(self, value, parents=()) -> "Var":
        self.nodes.append(_Node(tuple(parents)))
        requires = any(True for _ in parents)
        return Var(self, len(self.nodes) - 1, value, requires)

    def param(self, name: str, value) -> "Var":
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        v = self._push(np.array(value, dtype=np.float64))
        v.requires_grad = True
        self.params[name] = v
        return v

    def const(self, value) -> "Var":
        return self._push(np.asarray(value, dtype=np.float64))

    def lift(self, x) -> "Var":
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("cannot mix values from different tapes")
            return x
        return self.const(x)

    def record(self, value, inputs, vjps) -> "Var":
        """Push a node computed from ``inputs``; ``vjps[i]`` maps the output
        cotangent to the cotangent of ``inputs[i]``."""
        parents = [(x.index, f) for x, f in zip(inputs, vjps) if x.requires_grad]
        out = self._push(value, parents)
        return out

    def __len__(self) -> int:
        return len(self.nodes)


class Var:
    """A tensor value living on a :class:`Tape`."""

    __slots__ = ("tape", "index", "value", "requires_grad")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, tape: Tape, index: int, value, requires_grad: bool):
        self.tape = tape
        self.index = index
        self.value = value
        self.requires_grad = requires_grad

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={np.shape(self.value)})"

    @property
    def shape(self):
        return np.shape(self.value)

    # elementwise arithmetic -------------------------------------------------
    def __add__(self, other):
        other = self.tape.lift(other)
        a, b = self.shape, other.shape
        return self.tape.record(
            self.value + other.value,
            (self, other),
            (lambda g: _unbroadcast(g, a), lambda g: _unbroadcast(g, b)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = self.tape.lift(other)
        a, b = self.shape, other.shape
        return self.tape.record(
            self.value - other.value,
            (self, other),
            (lambda g: _unbroadcast(g, a), lambda g: -_unbroadcast(g, b)),
        )

    def __rsub__(self, other):
        return self.tape.lift(other) - self

    def __neg__(self):
        return self.tape.record(-self.value, (self,), (lambda g: -g,))

    def __mul__(self, other):
        other = self.tape.lift(other)
        x, y = self.value, other.value
        a, b = self.shape, other.shape
        return self.tape.record(
            x * y,
            (self, other),
            (lambda g: _unbroadcast(g * y, a), lambda g: _unbroadcast(g * x, b)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self.tape.lift(other)
        x, y = self.value, other.value
        if np.any(y == 0):
            raise ZeroDivisionError("division by a traced zero")
        a, b = self.shape, other.shape
        out = x / y
        return self.tape.record(
            out,
            (self, other),
            (
                lambda g: _unbroadcast(g / y, a),
                lambda g: _unbroadcast(-g * out / y, b),
            ),
        )

    def __rtruediv__(self, other):
        return self.tape.lift(other) / self

    def __pow__(self, p):
        if p != 2:
            raise NotImplementedError("only squaring is supported")
        return self * self

    # linear algebra and reductions -----------------------------------------
    def __matmul__(self, other):
        other = self.tape.lift(other)
        x, y = self.value, other.value
        a, b = self.shape, other.shape

        if np.ndim(y) != 2:
            raise NotImplementedError("traced matmul needs a 2-D right operand")

        def gx(g):
            return _unbroadcast(g @ y.T, a)

        def gy(g):
            if np.ndim(x) == 1:
                return np.outer(x, g)
            xt = np.swapaxes(x, -1, -2)
            return _unbroadcast(xt @ g, b)

        return self.tape.record(x @ y, (self, other), (gx, gy))

    def __rmatmul__(self, other):
        return self.tape.lift(other) @ self

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return self.tape.record(
            np.sum(self.value, axis=axis, keepdims=keepdims), (self,), (vjp,)
        )

    def mean(self, axis=None, keepdims=False):
        n = np.size(self.value) if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def __getitem__(self, idx):
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return out

        return self.tape.record(self.value[idx], (self,), (vjp,))

    def reshape(self, *shape):
        old = self.shape
        return self.tape.record(
            np.reshape(self.value, shape), (self,), (lambda g: np.reshape(g, old),)
        )

    def broadcast_to(self, shape):
        old = self.shape
        return self.tape.record(
            np.broadcast_to(self.value, shape).copy(),
            (self,),
            (lambda g: _unbroadcast(g, old),),
        )

    # nonlinearities ---------------------------------------------------------
    def softplus(self):
        x = self.value
        return self.tape.record(
            stable_softplus(x), (self,), (lambda g: g * stable_sigmoid(x),)
        )

    def sigmoid(self):
        s = stable_sigmoid(self.value)
        return self.tape.record(s, (self,), (lambda g: g * s * (1.0 - s),))

    def sqrt(self, floor: float = 0.0):
        """sqrt(max(x, floor)); the gradient is zero where the floor is active."""
        x = self.value
        r = np.sqrt(np.maximum(x, floor))
        active = x > floor

        def vjp(g):
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(active, g * 0.5 / r, 0.0)

        return self.tape.record(r, (self,), (vjp,))

    def relu(self):
        x = self.value
        return self.tape.record(
            np.maximum(x, 0.0), (self,), (lambda g: g * (x > 0),)
        )

    def detach(self):
        return self.tape.const(np.array(self.value, copy=True))


def concat(vars_, axis=-1) -> Var:
    tape = next(v.tape for v in vars_ if isinstance(v, Var))
    vars_ = [tape.lift(v) for v in vars_]
    sizes = [v.shape[axis] for v in vars_]
    splits = np.cumsum(sizes)[:-1]

    vjps = []
    for i in range(len(vars_)):
        vjps.append(lambda g, i=i: np.split(g, splits, axis=axis)[i])
    return tape.record(np.concatenate([v.value for v in vars_], axis=axis), vars_, vjps)


def stack(vars_, axis: int = 0) -> Var:
    """Stack same-shaped vars along a new axis."""
    tape = next(v.tape for v in vars_ if isinstance(v, Var))
    vars_ = [tape.lift(v) for v in vars_]
    vjps = [lambda g, i=i: np.take(g, i, axis=axis) for i in range(len(vars_))]
    return tape.record(np.stack([v.value for v in vars_], axis=axis), vars_, vjps)


def backward(tape: Tape, loss: Var) -> dict:
    """Gradient of the scalar ``loss`` w.r.t. every registered parameter.

    Returns ``{name: ndarray}`` with zeros for parameters the loss does not
    depend on.
    """
    if not isinstance(loss, Var) or loss.tape is not tape or loss.index >= len(tape.nodes):
        raise ValueError("loss node is not on this tape")
    if np.size(loss.value) != 1:
        raise ValueError("backward needs a scalar loss")

    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(np.asarray(loss.value))}
    param_ids = {v.index for v in tape.params.values()}
    nodes = tape.nodes
    for i in range(loss.index, -1, -1):
        g = grads.get(i) if i in param_ids else grads.pop(i, None)
        if g is None:
            continue
        for pid, vjp in nodes[i].parents:
            contrib = vjp(g)
            if pid in grads:
                grads[pid] = grads[pid] + contrib
            else:
                grads[pid] = contrib

    return {
        name: grads.get(v.index, np.zeros_like(v.value)).reshape(np.shape(v.value))
        for name, v in tape.params.items()
    }

