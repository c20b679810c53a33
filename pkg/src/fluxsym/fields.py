"""Scalar fields on a chart, closed under arithmetic and AD partials.

Parsed expressions (:class:`fluxsym.expr.ScalarGraph`) are the leaves.
Arithmetic nodes combine jets exactly, and :class:`PartialField` exposes a
partial derivative of another field as a field in its own right (its value
and gradient come from the gradient and Hessian of the parent jet, so no
finite differencing enters anywhere). Requesting derivatives beyond what a
node can supply raises :class:`DerivativeDepthError` rather than silently
degrading.
"""

from __future__ import annotations

import numpy as np

from .jets import Jet


class DerivativeDepthError(RuntimeError):
    """A derived field was asked for derivatives it cannot provide."""


class Field:
    """Base class: anything with jets over batches of points."""

    chart = None

    def jet(self, pts: np.ndarray, order: int) -> Jet:
        raise NotImplementedError

    def values(self, pts: np.ndarray) -> np.ndarray:
        return self.jet(pts, 0).v

    def compile(self):
        """Return a fast float-valued closure f(x, y, z)."""
        raise NotImplementedError

    # operators build derived fields; scalars are lifted to constants
    def __add__(self, other):
        return SumField([self, as_field(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return SumField([self, NegField(as_field(other))])

    def __rsub__(self, other):
        return SumField([as_field(other), NegField(self)])

    def __neg__(self):
        return NegField(self)

    def __mul__(self, other):
        return ProdField(self, as_field(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return QuotField(self, as_field(other))

    def __rtruediv__(self, other):
        return QuotField(as_field(other), self)


class ConstField(Field):
    def __init__(self, value: float):
        self.value = float(value)

    def jet(self, pts, order):
        return Jet.const(self.value, pts.shape[0], order)

    def compile(self):
        v = self.value
        return lambda x, y, z: v


def as_field(obj) -> Field:
    if isinstance(obj, Field):
        return obj
    return ConstField(float(obj))


class NegField(Field):
    def __init__(self, f: Field):
        self.f = f
        self.chart = f.chart

    def jet(self, pts, order):
        return -self.f.jet(pts, order)

    def compile(self):
        cf = self.f.compile()
        return lambda x, y, z: -cf(x, y, z)


class SumField(Field):
    def __init__(self, terms):
        flat = []
        for t in terms:
            if isinstance(t, SumField):
                flat.extend(t.terms)
            else:
                flat.append(t)
        self.terms = flat
        self.chart = next((t.chart for t in flat if t.chart is not None), None)

    def jet(self, pts, order):
        out = self.terms[0].jet(pts, order)
        for t in self.terms[1:]:
            out = out + t.jet(pts, order)
        return out

    def compile(self):
        fns = [t.compile() for t in self.terms]
        return lambda x, y, z: sum(f(x, y, z) for f in fns)


class ProdField(Field):
    def __init__(self, a: Field, b: Field):
        self.a = a
        self.b = b
        self.chart = a.chart or b.chart

    def jet(self, pts, order):
        return self.a.jet(pts, order) * self.b.jet(pts, order)

    def compile(self):
        ca, cb = self.a.compile(), self.b.compile()
        return lambda x, y, z: ca(x, y, z) * cb(x, y, z)


class QuotField(Field):
    def __init__(self, a: Field, b: Field):
        self.a = a
        self.b = b
        self.chart = a.chart or b.chart

    def jet(self, pts, order):
        return self.a.jet(pts, order) / self.b.jet(pts, order)

    def compile(self):
        ca, cb = self.a.compile(), self.b.compile()
        return lambda x, y, z: ca(x, y, z) / cb(x, y, z)


class PartialField(Field):
    """The i-th coordinate partial of another field.

    Value and gradient are read off the parent's gradient and Hessian, so
    this node supports evaluation up to order 1. Asking for its Hessian
    would need third derivatives of the parent and raises.
    """

    def __init__(self, f: Field, i: int):
        self.f = f
        self.i = int(i)
        self.chart = f.chart

    def jet(self, pts, order):
        if order >= 2:
            raise DerivativeDepthError(
                "second derivatives of a partial-derivative field are unavailable"
            )
        inner = self.f.jet(pts, order + 1)
        if inner.g is None:
            raise DerivativeDepthError(
                "parent field cannot supply the requested derivative order"
            )
        v = inner.g[:, self.i].copy()
        g = None
        if order >= 1:
            if inner.h is None:
                raise DerivativeDepthError(
                    "parent field cannot supply the requested derivative order"
                )
            g = inner.h[:, self.i, :].copy()
        return Jet(v, g, None)

    def compile(self):
        raise NotImplementedError("partial-derivative fields have no fast scalar path")


class Profile:
    """A smooth function of one variable with exact first two derivatives."""

    def __call__(self, t):
        raise NotImplementedError

    def d1(self, t):
        raise NotImplementedError

    def d2(self, t):
        raise NotImplementedError


class BumpProfile(Profile):
    """C-infinity bump on (lo, hi): exp(-1/(u(1-u))) in the rescaled variable,
    identically 0 outside. Positive on the open interval."""

    def __init__(self, lo: float, hi: float):
        if not hi > lo:
            raise ValueError("bump needs lo < hi")
        self.lo = float(lo)
        self.hi = float(hi)

    def _u(self, t):
        return (np.asarray(t, dtype=float) - self.lo) / (self.hi - self.lo)

    def __call__(self, t):
        u = self._u(t)
        out = np.zeros_like(u)
        m = (u > 0.0) & (u < 1.0)
        w = u[m] * (1.0 - u[m])
        out[m] = np.exp(-1.0 / w)
        return out

    def d1(self, t):
        u = self._u(t)
        out = np.zeros_like(u)
        m = (u > 0.0) & (u < 1.0)
        um = u[m]
        w = um * (1.0 - um)
        # d/du exp(-1/w) = exp(-1/w) * w' / w^2, w' = 1 - 2u
        out[m] = np.exp(-1.0 / w) * (1.0 - 2.0 * um) / w**2
        return out / (self.hi - self.lo)

    def d2(self, t):
        u = self._u(t)
        out = np.zeros_like(u)
        m = (u > 0.0) & (u < 1.0)
        um = u[m]
        w = um * (1.0 - um)
        wp = 1.0 - 2.0 * um
        # second derivative of exp(-1/w) in u
        out[m] = np.exp(-1.0 / w) * ((wp / w**2) ** 2 + (-2.0 / w - 2.0 * wp**2 / w**3))
        return out / (self.hi - self.lo) ** 2


class ComposeField(Field):
    """profile(f) for a 1D profile with exact derivatives."""

    def __init__(self, profile: Profile, f: Field):
        self.profile = profile
        self.f = f
        self.chart = f.chart

    def jet(self, pts, order):
        inner = self.f.jet(pts, order)
        v = self.profile(inner.v)
        g = h = None
        if order >= 1 and inner.g is not None:
            d1 = self.profile.d1(inner.v)
            g = d1[:, None] * inner.g
            if order >= 2 and inner.h is not None:
                d2 = self.profile.d2(inner.v)
                h = d1[:, None, None] * inner.h + d2[:, None, None] * np.einsum(
                    "ni,nj->nij", inner.g, inner.g
                )
        return Jet(v, g, h)

    def compile(self):
        cf = self.f.compile()
        prof = self.profile

        def fn(x, y, z):
            return float(prof(np.array([cf(x, y, z)]))[0])

        return fn
