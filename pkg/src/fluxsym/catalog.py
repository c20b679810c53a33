"""Built-in example systems with known auxiliaries and expected verdicts.

Each entry is constructed from expression strings alone (no stored numeric
fixtures) and validated on load. Entries round-trip through the same JSON
config format the CLI accepts for inline systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .chart import ChartDomain
from .expr import ScalarGraph, parse
from .geom import Grid, KForm, VecField
from .flux import FluxSystem, validate_flux_system
from .trace import PeriodicOrbit, Section

__all__ = [
    "CatalogEntry",
    "UnknownId",
    "catalog_ids",
    "expected_verdicts",
    "load",
    "load_system_config",
    "random_one_form",
    "random_scalar",
    "random_vecfield",
]


class UnknownId(KeyError):
    pass


@dataclass
class CatalogEntry:
    id: str
    fs: FluxSystem
    config: dict
    eta_candidates: dict = dc_field(default_factory=dict)
    u_candidates: dict = dc_field(default_factory=dict)
    orbits: dict = dc_field(default_factory=dict)
    sections: dict = dc_field(default_factory=dict)
    expected: dict = dc_field(default_factory=dict)
    notes: str = ""

    @property
    def chart(self) -> ChartDomain:
        return self.fs.chart

    def eta(self, name: str = "builtin") -> KForm:
        return self.eta_candidates[name]

    def u(self, name: str = "builtin") -> VecField:
        return self.u_candidates[name]


def _one_form(chart, exprs, params):
    return KForm(1, tuple(parse(e, chart, params) for e in exprs), chart)


def _vec(chart, exprs, params):
    return VecField(tuple(parse(e, chart, params) for e in exprs), chart)


def load_system_config(cfg: dict, grid: Grid | None = None,
                       system_id: str = "") -> FluxSystem:
    """Build and validate a flux system from the inline JSON config format."""
    chart = ChartDomain.from_config(cfg["chart"])
    params = {k: float(v) for k, v in cfg.get("params", {}).items()}
    B = _vec(chart, cfg["B"], params)
    psi = None
    if "psi" in cfg and cfg["psi"] is not None:
        psi = parse(cfg["psi"], chart, params)
    if "nu" in cfg and cfg["nu"] is not None:
        nu = _one_form(chart, cfg["nu"], params)
    elif psi is not None:
        from .geom import d

        nu = d(KForm(0, (psi,), chart))
    else:
        raise ValueError("config needs either nu or psi")
    mu = KForm(3, (parse(cfg["mu"], chart, params),), chart)
    boundary = tuple(parse(b, chart, params) for b in cfg.get("boundary", []))
    return validate_flux_system(
        B, nu, mu, chart,
        grid=grid,
        psi=psi,
        boundary=boundary,
        boundary_margin=float(cfg.get("boundary_margin", 1e-3)),
        system_id=system_id or cfg.get("id", ""),
    )


def _duffing_t() -> CatalogEntry:
    cfg = {
        "id": "duffing_t",
        "chart": {
            "names": ["x", "y", "t"],
            "periodic": [False, False, True],
            "period": [None, None, 1.0],
            "bounds": [[-1.3, 1.3], [-1.2, 1.2], None],
        },
        "B": ["y", "2*x - 4*x^3", "1"],
        "nu": ["4*x^3 - 2*x", "y", "0"],
        "psi": "y^2/2 - x^2*(1 - x^2)",
        "mu": "1",
        "params": {},
    }
    fs = load_system_config(cfg, system_id="duffing_t")
    chart = fs.chart
    eta = _one_form(chart, ["0", "0", "1"], {})
    u = _vec(chart, ["y", "2*x - 4*x^3", "0"], {})
    sections = {"default": Section(axis=2, value=0.0, direction=+1)}
    expected = {
        "validate": "PASS",
        "check_adapted": {"builtin": "PASS"},
        "construct_symmetry": {"builtin": "PASS"},
        "probe": {-0.2: "REGULAR_TORUS", -0.1: "REGULAR_TORUS",
                  0.1: "REGULAR_TORUS", 0.3: "REGULAR_TORUS",
                  0.0: "CRITICAL_NONAXIS"},
    }
    return CatalogEntry(
        id="duffing_t", fs=fs, config=cfg,
        eta_candidates={"builtin": eta},
        u_candidates={"builtin": u},
        sections=sections,
        expected=expected,
        notes="Non-autonomous double-well planar Hamiltonian flow driven "
              "around a period-1 circle; the zero level of the integral is "
              "a figure-eight separatrix.",
    )


def _t3_twist() -> CatalogEntry:
    two_pi = 2.0 * math.pi
    cfg = {
        "id": "t3_twist",
        "chart": {
            "names": ["x", "y", "z"],
            "periodic": [True, True, True],
            "period": [two_pi, two_pi, two_pi],
            "bounds": [None, None, None],
        },
        "B": ["sin(z)", "cos(z)", "0"],
        "nu": ["0", "0", "1"],
        "psi": "z",
        "mu": "1",
        "params": {},
    }
    fs = load_system_config(cfg, system_id="t3_twist")
    chart = fs.chart
    eta = _one_form(chart, ["sin(z)", "cos(z)", "0"], {})
    u = _vec(chart, ["-cos(z)", "sin(z)", "0"], {})
    orbits = {
        # closed field lines on the resonant levels z = pi/2 and z = 0
        "x_circle": PeriodicOrbit(point=np.array([0.0, 0.0, 0.5 * math.pi]),
                                  period=two_pi),
        "y_circle": PeriodicOrbit(point=np.array([0.0, 0.0, 0.0]),
                                  period=two_pi),
    }
    sections = {"default": Section(axis=0, value=0.0, direction=+1)}
    expected = {
        "validate": "PASS",
        "check_adapted": {"builtin": "PASS"},
        "check_preadapted": {"builtin": "PASS"},
        "construct_symmetry": {"builtin": "PASS"},
        "reeb_obstruction": {"builtin": "NO_OBSTRUCTION"},
    }
    return CatalogEntry(
        id="t3_twist", fs=fs, config=cfg,
        eta_candidates={"builtin": eta},
        u_candidates={"builtin": u},
        orbits=orbits,
        sections=sections,
        expected=expected,
        notes="Constant-magnitude twist field on the 3-torus; the builtin "
              "1-form is a contact form whose Reeb field this is. The "
              "first integral z is single-valued only per fundamental "
              "domain, which suffices for level probing.",
    )


def _reeb_solid_torus() -> CatalogEntry:
    h_x = "2*x*(2*y^4 + (2*x^2 - 3)*y^2 + 1)"
    h_y = "2*y*(x^4 + (4*y^2 - 3)*x^2 + 3*(y^2 - 1)^2)"
    cfg = {
        "id": "reeb_solid_torus",
        "chart": {
            "names": ["x", "y", "phi"],
            "periodic": [False, False, True],
            "period": [None, None, 1.0],
            "bounds": [[-1.45, 1.45], [-1.45, 1.45], None],
        },
        "B": ["-(" + h_y + ")", h_x, "y + x^2 + y^2 - 1"],
        "nu": [h_x, h_y, "0"],
        "psi": "(x^2 + y^2 - 1)*(1 + y^2*(x^2 + y^2 - 2))",
        "mu": "1",
        "params": {},
        "boundary": ["x^2 + y^2 - 2"],
        "boundary_margin": 1e-3,
    }
    fs = load_system_config(cfg, system_id="reeb_solid_torus")
    chart = fs.chart
    eta_dphi = _one_form(chart, ["0", "0", "1"], {})
    u = _vec(chart, ["0", "0", "1"], {})
    orbits = {
        "top": PeriodicOrbit(point=np.array([0.0, 1.0, 0.0]), period=1.0),
        "bottom": PeriodicOrbit(point=np.array([0.0, -1.0, 0.0]), period=1.0),
    }
    sections = {"default": Section(axis=2, value=0.0, direction=-1)}
    expected = {
        "validate": "PASS",
        "check_adapted": {"dphi": "FAIL_nonpositive"},
        "reeb_obstruction": {"dphi": "OBSTRUCTED"},
        "forward_noether": {"builtin": "PASS"},
        "probe": {-1.0: "AXIS_CANDIDATE", 0.0: "CRITICAL_NONAXIS"},
    }
    return CatalogEntry(
        id="reeb_solid_torus", fs=fs, config=cfg,
        eta_candidates={"dphi": eta_dphi},
        u_candidates={"builtin": u},
        orbits=orbits,
        sections=sections,
        expected=expected,
        notes="Solid-torus field whose invariant unit-radius torus splits "
              "into two invariant cylinders carrying boundary orbits of "
              "opposite toroidal orientation, so no 1-form can pair "
              "positively with the field along both.",
    )


_LIOUVILLE_B = sum(10.0 ** (-math.factorial(k)) for k in range(1, 7))


def _liouville_torus() -> CatalogEntry:
    fexpr = "exp(0.3*sin(2*pi*x) + 0.2*cos(2*pi*(x - y)))"
    cfg = {
        "id": "liouville_torus",
        "chart": {
            "names": ["x", "y", "z"],
            "periodic": [True, True, False],
            "period": [1.0, 1.0, None],
            "bounds": [None, None, [-1.0, 1.0]],
        },
        "B": [f"a*{fexpr}", f"b*{fexpr}", "0"],
        "nu": ["0", "0", "1"],
        "psi": "z",
        "mu": f"1/({fexpr})",
        "params": {"a": 1.0, "b": _LIOUVILLE_B},
    }
    fs = load_system_config(cfg, system_id="liouville_torus")
    chart = fs.chart
    params = {"a": 1.0, "b": _LIOUVILLE_B}
    eta = _one_form(chart, ["a", "b", "0"], params)
    ab2 = 1.0 + _LIOUVILLE_B**2
    u = _vec(chart, [f"-b/{ab2!r}", f"a/{ab2!r}", "0"], params)
    expected = {
        "validate": "PASS",
        "check_adapted": {"builtin": "PASS"},
        "construct_symmetry": {"builtin": "PASS"},
    }
    return CatalogEntry(
        id="liouville_torus", fs=fs, config=cfg,
        eta_candidates={"builtin": eta},
        u_candidates={"builtin": u},
        expected=expected,
        notes="Rescaled constant-slope flow on T^2 x I. The slope is a "
              "truncated Liouville-type constant and the positive rescaling "
              "is a stand-in profile; at double precision and modest mode "
              "counts its resonances are invisible, so no non-rectifiability "
              "claim is attached to this entry.",
    )


def _modded_symmetry() -> CatalogEntry:
    cfg = {
        "id": "modded_symmetry",
        "chart": {
            "names": ["x", "y", "z"],
            "periodic": [False, False, False],
            "period": [None, None, None],
            "bounds": [[-1.2, 1.2], [-1.2, 1.2], [-1.2, 1.2]],
        },
        "B": ["1", "0", "0"],
        "nu": ["0", "y*(y^2 + z^2)", "z*(y^2 + z^2)"],
        "psi": "(y^2 + z^2)^2/4",
        "mu": "1",
        "params": {},
    }
    fs = load_system_config(cfg, system_id="modded_symmetry")
    chart = fs.chart
    eta_dx = _one_form(chart, ["1", "0", "0"], {})
    u = _vec(chart, ["y^2 + z^2", "(y^2 + z^2)*z", "-(y^2 + z^2)*y"], {})
    u_mod = _vec(chart, ["0", "(y^2 + z^2)*z", "-(y^2 + z^2)*y"], {})
    expected = {
        "validate": "PASS",
        "check_adapted": {"builtin": "PASS"},
        "construct_symmetry": {"builtin": "PASS"},
        "forward_noether": {"builtin": "PASS"},
    }
    return CatalogEntry(
        id="modded_symmetry", fs=fs, config=cfg,
        eta_candidates={"builtin": eta_dx},
        u_candidates={"builtin": u, "modded": u_mod},
        expected=expected,
        notes="Unit translation field with a rotational conformal symmetry; "
              "subtracting its streamwise part yields the symmetry "
              "annihilated by dx.",
    )


_BUILDERS = {
    "duffing_t": _duffing_t,
    "t3_twist": _t3_twist,
    "reeb_solid_torus": _reeb_solid_torus,
    "liouville_torus": _liouville_torus,
    "modded_symmetry": _modded_symmetry,
}

_CACHE: dict = {}


def catalog_ids() -> list[str]:
    return sorted(_BUILDERS)


def load(entry_id: str) -> CatalogEntry:
    if entry_id not in _BUILDERS:
        raise UnknownId(entry_id)
    if entry_id not in _CACHE:
        _CACHE[entry_id] = _BUILDERS[entry_id]()
    return _CACHE[entry_id]


def expected_verdicts(entry_id: str) -> dict:
    return load(entry_id).expected


# -- random smooth fields for property suites --------------------------------------


def _axis_terms(chart: ChartDomain, i: int) -> list[str]:
    c = chart.names[i]
    if chart.periodic[i]:
        w = 2.0 * math.pi / chart.period[i]
        if abs(w - 1.0) < 1e-15:
            return ["1", f"sin({c})", f"cos({c})", f"sin(2*{c})", f"cos(2*{c})"]
        return ["1", f"sin({w!r}*{c})", f"cos({w!r}*{c})", f"sin({2 * w!r}*{c})"]
    return ["1", c, f"{c}^2", f"sin({c})"]


def random_scalar(chart: ChartDomain, rng, n_terms: int = 3) -> ScalarGraph:
    """A random smooth expression respecting the chart's periodicities."""
    bases = [_axis_terms(chart, i) for i in range(3)]
    terms = []
    for _ in range(n_terms):
        coeff = float(np.round(rng.uniform(-1.0, 1.0), 3))
        if coeff == 0.0:
            coeff = 0.5
        factors = [bases[i][rng.integers(0, len(bases[i]))] for i in range(3)]
        parts = [f for f in factors if f != "1"]
        term = "*".join([repr(coeff)] + parts) if parts else repr(coeff)
        terms.append(term)
    return parse(" + ".join(terms), chart)


def random_vecfield(chart: ChartDomain, rng, n_terms: int = 2) -> VecField:
    return VecField(tuple(random_scalar(chart, rng, n_terms) for _ in range(3)), chart)


def random_one_form(chart: ChartDomain, rng, n_terms: int = 2) -> KForm:
    return KForm(1, tuple(random_scalar(chart, rng, n_terms) for _ in range(3)), chart)
