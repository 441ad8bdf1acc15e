"""Second-order jets in the two UV parameters.

A :class:`Jet2` carries a value and its partial derivatives up to order two
with respect to ``(u, v)``. Slots may be python floats, numpy arrays (one jet
per array element, broadcasting as usual) or :class:`~diffpatch.tape.Var`
objects, in which case every slot is recorded on a tape and can be
differentiated in reverse mode.

First-order jets are jets whose second-order slots are ``None``; arithmetic
then skips the second-order bookkeeping entirely. Training uses them because
no loss term involves curvature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .tape import Var, stable_sigmoid, stable_softplus

__all__ = [
    "Jet2",
    "constant",
    "seed_u",
    "seed_v",
    "jet_add",
    "jet_mul",
    "jet_div",
    "jet_softplus",
    "jet_matmul",
]


def _softplus(x):
    return x.softplus() if isinstance(x, Var) else stable_softplus(x)


def _sigmoid(x):
    return x.sigmoid() if isinstance(x, Var) else stable_sigmoid(x)


def _is_zero(x) -> bool:
    if isinstance(x, Var):
        return False
    return np.all(np.asarray(x) == 0)


@dataclass(frozen=True)
class Jet2:
    val: Any
    du: Any = 0.0
    dv: Any = 0.0
    duu: Any = 0.0
    duv: Any = 0.0
    dvv: Any = 0.0

    @property
    def order(self) -> int:
        return 1 if self.duu is None else 2

    def first_order(self) -> "Jet2":
        return Jet2(self.val, self.du, self.dv, None, None, None)

    def slots(self) -> tuple:
        return (self.val, self.du, self.dv, self.duu, self.duv, self.dvv)

    def __add__(self, other):
        return jet_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return jet_add(self, -_as_jet(other, self.order))

    def __rsub__(self, other):
        return jet_add(-self, other)

    def __neg__(self):
        return Jet2(*(None if s is None else -s for s in self.slots()))

    def __mul__(self, other):
        return jet_mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return jet_div(self, other)

    def __rtruediv__(self, other):
        return jet_div(_as_jet(other, self.order), self)

    def __getitem__(self, idx):
        return Jet2(*(None if s is None else s[idx] for s in self.slots()))


def constant(c, order: int = 2) -> Jet2:
    z = 0.0 if order == 2 else None
    return Jet2(c, 0.0, 0.0, z, z, z)


def seed_u(u, order: int = 2) -> Jet2:
    z = 0.0 if order == 2 else None
    return Jet2(u, 1.0, 0.0, z, z, z)


def seed_v(v, order: int = 2) -> Jet2:
    z = 0.0 if order == 2 else None
    return Jet2(v, 0.0, 1.0, z, z, z)


def _as_jet(x, order: int) -> Jet2:
    return x if isinstance(x, Jet2) else constant(x, order)


def jet_add(a, b) -> Jet2:
    if not isinstance(a, Jet2):
        a, b = b, a
    b = _as_jet(b, a.order)
    if a.order == 2 and b.order == 2:
        return Jet2(a.val + b.val, a.du + b.du, a.dv + b.dv,
                    a.duu + b.duu, a.duv + b.duv, a.dvv + b.dvv)
    return Jet2(a.val + b.val, a.du + b.du, a.dv + b.dv, None, None, None)


def jet_mul(a, b) -> Jet2:
    if not isinstance(a, Jet2):
        a, b = b, a
    if not isinstance(b, Jet2):
        # scaling by a plain constant (or a traced value with no UV dependence)
        return Jet2(*(None if s is None else s * b for s in a.slots()))
    val = a.val * b.val
    du = a.du * b.val + a.val * b.du
    dv = a.dv * b.val + a.val * b.dv
    if a.order == 1 or b.order == 1:
        return Jet2(val, du, dv, None, None, None)
    duu = a.duu * b.val + 2.0 * a.du * b.du + a.val * b.duu
    duv = a.duv * b.val + a.du * b.dv + a.dv * b.du + a.val * b.duv
    dvv = a.dvv * b.val + 2.0 * a.dv * b.dv + a.val * b.dvv
    return Jet2(val, du, dv, duu, duv, dvv)


def _reciprocal(b: Jet2) -> Jet2:
    bv = b.val
    if not isinstance(bv, Var) and np.any(np.asarray(bv) == 0):
        raise ZeroDivisionError("jet division by a zero value")
    r = 1.0 / bv
    r2 = r * r
    du, dv = -r2 * b.du, -r2 * b.dv
    if b.order == 1:
        return Jet2(r, du, dv, None, None, None)
    r3 = 2.0 * r2 * r
    duu = r3 * b.du * b.du - r2 * b.duu
    duv = r3 * b.du * b.dv - r2 * b.duv
    dvv = r3 * b.dv * b.dv - r2 * b.dvv
    return Jet2(r, du, dv, duu, duv, dvv)


def jet_div(a, b) -> Jet2:
    if not isinstance(b, Jet2):
        if _is_zero(b):
            raise ZeroDivisionError("jet division by a zero value")
        return jet_mul(a, 1.0 / b)
    return jet_mul(_as_jet(a, b.order), _reciprocal(b))


def compose(x: Jet2, f0, f1, f2=None) -> Jet2:
    """Push ``x`` through a scalar function given its value and derivatives
    ``f0 = f(x.val)``, ``f1 = f'(x.val)``, ``f2 = f''(x.val)``."""
    du, dv = f1 * x.du, f1 * x.dv
    if x.order == 1:
        return Jet2(f0, du, dv, None, None, None)
    return Jet2(
        f0,
        du,
        dv,
        f2 * x.du * x.du + f1 * x.duu,
        f2 * x.du * x.dv + f1 * x.duv,
        f2 * x.dv * x.dv + f1 * x.dvv,
    )


def jet_softplus(x: Jet2) -> Jet2:
    s = _sigmoid(x.val)
    f2 = None if x.order == 1 else s * (1.0 - s)
    return compose(x, _softplus(x.val), s, f2)


def jet_exp(x: Jet2) -> Jet2:
    e = np.exp(x.val)
    return compose(x, e, e, e)


def jet_sin(x: Jet2) -> Jet2:
    return compose(x, np.sin(x.val), np.cos(x.val), -np.sin(x.val))


def jet_cos(x: Jet2) -> Jet2:
    return compose(x, np.cos(x.val), -np.sin(x.val), -np.cos(x.val))


def jet_matmul(x: Jet2, w, bias=None) -> Jet2:
    """Affine map ``x @ w + bias`` applied slot-wise (derivatives skip the bias)."""

    def linear(s):
        if s is None:
            return None
        if _is_zero(s):
            return 0.0
        return s @ w

    val = x.val @ w
    if bias is not None:
        val = val + bias
    return Jet2(val, *(linear(s) for s in x.slots()[1:]))


def jet_stack(jets) -> Jet2:
    """Stack scalar jets along a new trailing axis (numpy slots only)."""
    order = min(j.order for j in jets)
    cols = []
    for i in range(6 if order == 2 else 3):
        parts = np.broadcast_arrays(*(np.asarray(j.slots()[i], dtype=float) for j in jets))
        cols.append(np.stack(parts, axis=-1))
    if order == 1:
        cols += [None, None, None]
    return Jet2(*cols)
