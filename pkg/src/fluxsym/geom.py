"""Exterior calculus on a 3D chart.

Forms are stored componentwise in the fixed coordinate bases

    degree 0: (1,)
    degree 1: (dx, dy, dz)
    degree 2: (dy^dz, dz^dx, dx^dy)
    degree 3: (dx^dy^dz,)

for chart coordinates named (x, y, z) here in basis order. With this
ordering the operations reduce to the familiar vector-calculus forms:
exterior derivative is grad/curl/div, the (1,1) wedge is the cross product,
the (1,2) wedge and the degree-1 interior product are dot products, and the
degree-2 interior product ``i_X w`` has components ``w x X``. All sign
conventions follow from this ordering and are unit-tested against
hand-computed tables.

Derivative components are exact AD partials of the operand fields; no
finite differences appear in any operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .chart import ChartDomain
from .fields import Field, PartialField, SumField, as_field
from .expr import ScalarGraph

__all__ = [
    "DegreeError",
    "Grid",
    "KForm",
    "NonPositiveDensity",
    "VecField",
    "bracket",
    "d",
    "divergence",
    "grid_residual",
    "interior",
    "lie_derivative",
    "vector_from_two_form",
    "wedge",
]

_COMP_COUNT = {0: 1, 1: 3, 2: 3, 3: 1}


class DegreeError(ValueError):
    """Operation applied to a form of unsupported degree."""


class NonPositiveDensity(ValueError):
    """A volume-form density failed to be strictly positive."""


def _same_chart(a: ChartDomain, b: ChartDomain):
    if a is b:
        return
    if (a.names, a.periodic, a.period, a.bounds) != (
        b.names,
        b.periodic,
        b.period,
        b.bounds,
    ):
        raise ValueError("operands live on different charts")


@dataclass(frozen=True)
class KForm:
    degree: int
    comps: tuple
    chart: ChartDomain

    def __post_init__(self):
        if self.degree not in _COMP_COUNT:
            raise DegreeError(f"degree must be 0..3, got {self.degree}")
        if len(self.comps) != _COMP_COUNT[self.degree]:
            raise ValueError(
                f"degree {self.degree} needs {_COMP_COUNT[self.degree]} components"
            )
        object.__setattr__(self, "comps", tuple(as_field(c) for c in self.comps))

    def __add__(self, other: "KForm") -> "KForm":
        if self.degree != other.degree:
            raise DegreeError("cannot add forms of different degree")
        _same_chart(self.chart, other.chart)
        return KForm(
            self.degree,
            tuple(a + b for a, b in zip(self.comps, other.comps)),
            self.chart,
        )

    def __sub__(self, other: "KForm") -> "KForm":
        return self + (-1.0) * other

    def __mul__(self, s) -> "KForm":
        s = as_field(s)
        return KForm(self.degree, tuple(c * s for c in self.comps), self.chart)

    __rmul__ = __mul__

    def __truediv__(self, s) -> "KForm":
        s = as_field(s)
        return KForm(self.degree, tuple(c / s for c in self.comps), self.chart)

    def comp_values(self, pts: np.ndarray) -> np.ndarray:
        """Component values at points, shape (n_comps, n_points)."""
        return np.stack([c.jet(pts, 0).v for c in self.comps])


@dataclass(frozen=True)
class VecField:
    comps: tuple
    chart: ChartDomain

    def __post_init__(self):
        if len(self.comps) != 3:
            raise ValueError("vector field needs 3 components")
        object.__setattr__(self, "comps", tuple(as_field(c) for c in self.comps))

    def __add__(self, other: "VecField") -> "VecField":
        _same_chart(self.chart, other.chart)
        return VecField(
            tuple(a + b for a, b in zip(self.comps, other.comps)), self.chart
        )

    def __sub__(self, other: "VecField") -> "VecField":
        return self + (-1.0) * other

    def __mul__(self, s) -> "VecField":
        s = as_field(s)
        return VecField(tuple(c * s for c in self.comps), self.chart)

    __rmul__ = __mul__

    def __truediv__(self, s) -> "VecField":
        s = as_field(s)
        return VecField(tuple(c / s for c in self.comps), self.chart)

    def comp_values(self, pts: np.ndarray) -> np.ndarray:
        return np.stack([c.jet(pts, 0).v for c in self.comps])

    def compiled_rhs(self):
        """Fast (x, y, z) -> (3,) float evaluation for integrators."""
        fns = [c.compile() for c in self.comps]
        chart = self.chart
        wraps = [(i, chart.period[i]) for i in range(3) if chart.periodic[i]]

        def rhs(p):
            x, y, z = p
            for i, per in wraps:
                if i == 0:
                    x = x % per
                elif i == 1:
                    y = y % per
                else:
                    z = z % per
            return (fns[0](x, y, z), fns[1](x, y, z), fns[2](x, y, z))

        return rhs


@dataclass(frozen=True)
class Grid:
    """Deterministic sample grid; residuals are sup-norms over its points."""

    counts: tuple = (33, 33, 33)
    offsets: tuple = (0.0, 0.0, 0.0)
    margin: float = 1e-3

    def __post_init__(self):
        if any(c < 2 for c in self.counts):
            raise ValueError("grid counts must be >= 2")

    def points(self, chart: ChartDomain, inside=None) -> np.ndarray:
        axes = []
        for i in range(3):
            n = self.counts[i]
            if chart.periodic[i]:
                step = chart.period[i] / n
                axes.append(step * (np.arange(n) + self.offsets[i] % 1.0))
            else:
                lo, hi = chart.bounds[i]
                pad = self.margin * (hi - lo)
                axes.append(np.linspace(lo + pad, hi - pad, n))
        xs, ys, zs = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])
        if inside is not None:
            pts = pts[inside(pts)]
        return pts

    def to_dict(self) -> dict:
        return {
            "counts": list(self.counts),
            "offsets": list(self.offsets),
            "margin": self.margin,
        }


# -- operators ----------------------------------------------------------------


def _partial(f: Field, i: int) -> Field:
    if isinstance(f, ScalarGraph) or not hasattr(f, "f"):
        return PartialField(f, i)
    return PartialField(f, i)


def d(omega: KForm) -> KForm:
    """Exterior derivative; components are exact AD partials."""
    if omega.degree == 3:
        raise DegreeError("d of a 3-form on a 3-manifold is not defined here")
    c = omega.comps
    if omega.degree == 0:
        f = c[0]
        return KForm(1, tuple(PartialField(f, i) for i in range(3)), omega.chart)
    if omega.degree == 1:
        return KForm(
            2,
            (
                PartialField(c[2], 1) - PartialField(c[1], 2),
                PartialField(c[0], 2) - PartialField(c[2], 0),
                PartialField(c[1], 0) - PartialField(c[0], 1),
            ),
            omega.chart,
        )
    return KForm(
        3,
        (SumField([PartialField(c[i], i) for i in range(3)]),),
        omega.chart,
    )


def wedge(alpha: KForm, beta: KForm) -> KForm:
    """Graded-antisymmetric product in the coordinate bases."""
    _same_chart(alpha.chart, beta.chart)
    ka, kb = alpha.degree, beta.degree
    if ka + kb > 3:
        raise DegreeError(f"wedge of degrees {ka} and {kb} exceeds 3")
    if ka == 0:
        return KForm(kb, tuple(alpha.comps[0] * c for c in beta.comps), beta.chart)
    if kb == 0:
        return KForm(ka, tuple(c * beta.comps[0] for c in alpha.comps), alpha.chart)
    a, b = alpha.comps, beta.comps
    if ka == 1 and kb == 1:
        return KForm(
            2,
            (
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ),
            alpha.chart,
        )
    # (1,2) and (2,1): dot product into the volume component
    dot = SumField([a[i] * b[i] for i in range(3)])
    return KForm(3, (dot,), alpha.chart)


def interior(X: VecField, omega: KForm) -> KForm:
    """Contraction of the first slot with X."""
    _same_chart(X.chart, omega.chart)
    if omega.degree == 0:
        raise DegreeError("interior product of a 0-form is not defined")
    u = X.comps
    c = omega.comps
    if omega.degree == 1:
        return KForm(0, (SumField([c[i] * u[i] for i in range(3)]),), omega.chart)
    if omega.degree == 2:
        # i_X w has 1-form components w x X
        return KForm(
            1,
            (
                c[1] * u[2] - c[2] * u[1],
                c[2] * u[0] - c[0] * u[2],
                c[0] * u[1] - c[1] * u[0],
            ),
            omega.chart,
        )
    rho = c[0]
    return KForm(2, (rho * u[0], rho * u[1], rho * u[2]), omega.chart)


def lie_derivative(X: VecField, omega: KForm) -> KForm:
    """Cartan formula L_X w = d i_X w + i_X d w (degree edge cases included)."""
    if omega.degree == 0:
        return interior(X, d(omega))
    if omega.degree == 3:
        return d(interior(X, omega))
    return d(interior(X, omega)) + interior(X, d(omega))


def bracket(X: VecField, Y: VecField) -> VecField:
    """Lie bracket [X, Y], components X(Y^i) - Y(X^i) from AD gradients."""
    _same_chart(X.chart, Y.chart)
    comps = []
    for i in range(3):
        terms = [X.comps[j] * PartialField(Y.comps[i], j) for j in range(3)]
        terms += [(-1.0) * Y.comps[j] * PartialField(X.comps[i], j) for j in range(3)]
        comps.append(SumField(terms))
    return VecField(tuple(comps), X.chart)


def divergence(X: VecField, mu: KForm) -> Field:
    """Divergence of X with respect to the volume form mu = rho dx^dy^dz."""
    if mu.degree != 3:
        raise DegreeError("divergence needs a degree-3 volume form")
    _same_chart(X.chart, mu.chart)
    rho = mu.comps[0]
    return (
        SumField([PartialField(rho * X.comps[i], i) for i in range(3)]) / rho
    )


def vector_from_two_form(
    omega: KForm, mu: KForm, check_grid: Grid | None = None
) -> VecField:
    """Solve i_u mu = omega for u (componentwise division by the density).

    With ``check_grid`` the density is verified strictly positive first.
    """
    if omega.degree != 2:
        raise DegreeError("need a 2-form")
    if mu.degree != 3:
        raise DegreeError("need a degree-3 volume form")
    _same_chart(omega.chart, mu.chart)
    rho = mu.comps[0]
    if check_grid is not None:
        vals = rho.jet(check_grid.points(mu.chart), 0).v
        if np.any(vals <= 0.0):
            raise NonPositiveDensity(
                f"volume density reaches {vals.min():.3e} on the check grid"
            )
    return VecField(tuple(c / rho for c in omega.comps), omega.chart)


def grid_residual(obj, grid: Grid, chart: ChartDomain | None = None, inside=None) -> float:
    """Sup-norm of all components over the grid samples."""
    if isinstance(obj, (KForm, VecField)):
        pts = grid.points(obj.chart, inside=inside)
        return float(np.max(np.abs(obj.comp_values(pts))))
    if chart is None:
        chart = obj.chart
    pts = grid.points(chart, inside=inside)
    return float(np.max(np.abs(obj.jet(pts, 0).v)))
