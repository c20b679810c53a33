"""Coordinate chart domains for 3D fields.

A chart is three named axes, each either periodic (with a period) or bounded
(with a closed interval). All fields, forms and grids in this package live on
such a chart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ChartDomain:
    """Three named coordinate axes, each periodic or bounded.

    ``period[i]`` is used when ``periodic[i]`` is true, ``bounds[i]``
    otherwise. Bounds are closed intervals ``(lo, hi)`` with ``lo < hi``.
    """

    names: tuple[str, str, str]
    periodic: tuple[bool, bool, bool] = (False, False, False)
    period: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounds: tuple[tuple[float, float], ...] = field(
        default=((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0))
    )

    def __post_init__(self):
        if len(self.names) != 3:
            raise ValueError("chart needs exactly 3 axis names")
        if len(set(self.names)) != 3:
            raise ValueError("axis names must be distinct")
        if len(self.periodic) != 3 or len(self.period) != 3 or len(self.bounds) != 3:
            raise ValueError("periodic/period/bounds must each have 3 entries")
        for i in range(3):
            if self.periodic[i]:
                if not self.period[i] > 0:
                    raise ValueError(f"axis {self.names[i]}: period must be > 0")
            else:
                lo, hi = self.bounds[i]
                if not lo < hi:
                    raise ValueError(f"axis {self.names[i]}: bounds need lo < hi")

    def axis_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown axis {name!r}") from None

    def span(self, i: int) -> float:
        """Length of axis i (period for periodic axes)."""
        if self.periodic[i]:
            return self.period[i]
        lo, hi = self.bounds[i]
        return hi - lo

    def wrap(self, p):
        """Reduce periodic coordinates to the fundamental domain [0, period).

        Accepts a single point ``(3,)`` or a batch ``(n, 3)``.
        """
        q = np.array(p, dtype=float, copy=True)
        for i in range(3):
            if self.periodic[i]:
                q[..., i] = np.mod(q[..., i], self.period[i])
        return q

    def contains(self, p, margin: float = 0.0) -> bool:
        """True if the (wrapped) point lies inside all bounded axes."""
        q = np.asarray(p, dtype=float)
        for i in range(3):
            if not self.periodic[i]:
                lo, hi = self.bounds[i]
                pad = margin * (hi - lo)
                if np.any(q[..., i] < lo + pad) or np.any(q[..., i] > hi - pad):
                    return False
        return True

    def random_interior_points(self, n: int, rng, margin: float = 1e-3):
        """Deterministic sample of n interior points, shape (n, 3)."""
        pts = np.empty((n, 3))
        for i in range(3):
            if self.periodic[i]:
                pts[:, i] = rng.uniform(0.0, self.period[i], size=n)
            else:
                lo, hi = self.bounds[i]
                pad = margin * (hi - lo)
                pts[:, i] = rng.uniform(lo + pad, hi - pad, size=n)
        return pts

    def to_config(self) -> dict:
        cfg = {
            "names": list(self.names),
            "periodic": list(self.periodic),
            "period": [self.period[i] if self.periodic[i] else None for i in range(3)],
            "bounds": [
                None if self.periodic[i] else list(self.bounds[i]) for i in range(3)
            ],
        }
        return cfg

    @staticmethod
    def from_config(cfg: dict) -> "ChartDomain":
        names = tuple(cfg["names"])
        periodic = tuple(bool(b) for b in cfg["periodic"])
        period = tuple(
            float(cfg["period"][i]) if periodic[i] else 0.0 for i in range(3)
        )
        bounds = tuple(
            (-1.0, 1.0) if periodic[i] else tuple(float(v) for v in cfg["bounds"][i])
            for i in range(3)
        )
        return ChartDomain(names=names, periodic=periodic, period=period, bounds=bounds)
