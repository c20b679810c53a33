"""Second-order forward-mode jets over batches of points.

A :class:`Jet` carries the value, gradient and Hessian of a scalar quantity
at ``n`` points simultaneously (arrays of shape ``(n,)``, ``(n, 3)`` and
``(n, 3, 3)``). Gradient or Hessian may be ``None`` when the evaluation was
requested at lower order, or when a derived quantity (e.g. the partial
derivative of another jet-valued field) cannot supply them; arithmetic
propagates the missing pieces. Products, quotients and elementary functions
follow the exact chain rules, so second derivatives are exact to round-off.
"""

from __future__ import annotations

import numpy as np


class DomainError(ValueError):
    """Evaluation left the domain of an elementary function."""


def _outer(a, b):
    return np.einsum("ni,nj->nij", a, b)


def _sym_outer(a, b):
    return _outer(a, b) + _outer(b, a)


class Jet:
    __slots__ = ("v", "g", "h")

    def __init__(self, v, g=None, h=None):
        self.v = v
        self.g = g
        self.h = h

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @staticmethod
    def const(value: float, n: int, order: int) -> "Jet":
        v = np.full(n, float(value))
        g = np.zeros((n, 3)) if order >= 1 else None
        h = np.zeros((n, 3, 3)) if order >= 2 else None
        return Jet(v, g, h)

    @staticmethod
    def coord(pts: np.ndarray, i: int, order: int) -> "Jet":
        n = pts.shape[0]
        v = pts[:, i].copy()
        g = h = None
        if order >= 1:
            g = np.zeros((n, 3))
            g[:, i] = 1.0
        if order >= 2:
            h = np.zeros((n, 3, 3))
        return Jet(v, g, h)

    # -- ring operations ---------------------------------------------------

    def __neg__(self):
        return Jet(
            -self.v,
            None if self.g is None else -self.g,
            None if self.h is None else -self.h,
        )

    def __add__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.v + other, self.g, self.h)
        g = None if (self.g is None or other.g is None) else self.g + other.g
        h = None if (self.h is None or other.h is None) else self.h + other.h
        return Jet(self.v + other.v, g, h)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(
                self.v * other,
                None if self.g is None else self.g * other,
                None if self.h is None else self.h * other,
            )
        a, b = self, other
        v = a.v * b.v
        g = h = None
        if a.g is not None and b.g is not None:
            g = a.g * b.v[:, None] + b.g * a.v[:, None]
            if a.h is not None and b.h is not None:
                h = (
                    a.h * b.v[:, None, None]
                    + b.h * a.v[:, None, None]
                    + _sym_outer(a.g, b.g)
                )
        return Jet(v, g, h)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / other)
        a, b = self, other
        if np.any(b.v == 0.0):
            raise DomainError("division by zero")
        v = a.v / b.v
        g = h = None
        if a.g is not None and b.g is not None:
            g = (a.g - v[:, None] * b.g) / b.v[:, None]
            if a.h is not None and b.h is not None:
                h = (
                    a.h - v[:, None, None] * b.h - _sym_outer(g, b.g)
                ) / b.v[:, None, None]
        return Jet(v, g, h)

    def __rtruediv__(self, other):
        return Jet.const(other, self.n, _order_of(self)) / self

    # -- elementary functions ----------------------------------------------

    def _lift(self, f, f1, f2):
        """Apply scalar function with first/second derivative callables."""
        v = f(self.v)
        g = h = None
        if self.g is not None:
            d1 = f1(self.v)
            g = d1[:, None] * self.g
            if self.h is not None:
                d2 = f2(self.v)
                h = d1[:, None, None] * self.h + d2[:, None, None] * _outer(
                    self.g, self.g
                )
        return Jet(v, g, h)

    def sin(self):
        return self._lift(np.sin, np.cos, lambda v: -np.sin(v))

    def cos(self):
        return self._lift(np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v))

    def tan(self):
        sec2 = lambda v: 1.0 / np.cos(v) ** 2
        return self._lift(np.tan, sec2, lambda v: 2.0 * np.tan(v) / np.cos(v) ** 2)

    def exp(self):
        return self._lift(np.exp, np.exp, np.exp)

    def log(self):
        if np.any(self.v <= 0.0):
            raise DomainError("log of non-positive argument")
        return self._lift(np.log, lambda v: 1.0 / v, lambda v: -1.0 / v**2)

    def sqrt(self):
        if np.any(self.v < 0.0):
            raise DomainError("sqrt of negative argument")
        return self._lift(
            np.sqrt,
            lambda v: 0.5 / np.sqrt(v),
            lambda v: -0.25 / np.sqrt(v) ** 3,
        )

    def absolute(self):
        s = np.sign(self.v)
        return Jet(
            np.abs(self.v),
            None if self.g is None else s[:, None] * self.g,
            None if self.h is None else s[:, None, None] * self.h,
        )

    def powi(self, k: int):
        """Integer power by repeated multiplication."""
        if k == 0:
            return Jet.const(1.0, self.n, _order_of(self))
        if k < 0:
            return 1.0 / self.powi(-k)
        out = self
        for _ in range(k - 1):
            out = out * self
        return out

    def powf(self, r: float):
        """Real power, base must be positive."""
        if np.any(self.v <= 0.0):
            raise DomainError("non-integer power of non-positive base")
        return self._lift(
            lambda v: v**r,
            lambda v: r * v ** (r - 1.0),
            lambda v: r * (r - 1.0) * v ** (r - 2.0),
        )


def _order_of(j: Jet) -> int:
    if j.h is not None:
        return 2
    if j.g is not None:
        return 1
    return 0


def jet_atan2(y: Jet, x: Jet) -> Jet:
    """atan2 of two jets via its exact first/second partials."""
    v = np.arctan2(y.v, x.v)
    g = h = None
    if y.g is not None and x.g is not None:
        d = x.v**2 + y.v**2
        if np.any(d == 0.0):
            raise DomainError("atan2 at the origin")
        fy = x.v / d
        fx = -y.v / d
        g = fy[:, None] * y.g + fx[:, None] * x.g
        if y.h is not None and x.h is not None:
            fyy = -2.0 * x.v * y.v / d**2
            fxx = 2.0 * x.v * y.v / d**2
            fxy = (y.v**2 - x.v**2) / d**2
            h = (
                fy[:, None, None] * y.h
                + fx[:, None, None] * x.h
                + fyy[:, None, None] * _outer(y.g, y.g)
                + fxx[:, None, None] * _outer(x.g, x.g)
                + fxy[:, None, None] * _sym_outer(y.g, x.g)
            )
    return Jet(v, g, h)


def _select(mask, a: Jet, b: Jet) -> Jet:
    """Pointwise branch select: a where mask, else b."""
    m1 = mask[:, None]
    m2 = mask[:, None, None]
    v = np.where(mask, a.v, b.v)
    g = None if (a.g is None or b.g is None) else np.where(m1, a.g, b.g)
    h = None if (a.h is None or b.h is None) else np.where(m2, a.h, b.h)
    return Jet(v, g, h)


def jet_min(a: Jet, b: Jet) -> Jet:
    return _select(a.v <= b.v, a, b)


def jet_max(a: Jet, b: Jet) -> Jet:
    return _select(a.v >= b.v, a, b)
