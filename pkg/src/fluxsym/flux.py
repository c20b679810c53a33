"""Flux systems, adapted 1-forms, and certified symmetry construction.

A flux system is a triple (B, nu, mu) with nu closed, nu(B) = 0 and B
preserving the volume form mu. Given a 1-form eta with eta(B) > 0 and
d eta ^ nu = 0, the vector field u solving

    i_u mu = (nu ^ eta) / eta(B)

is the unique field with i_u i_B mu = nu and eta(u) = 0; it commutes with
the rescaled field B/eta(B) and preserves eta(B) mu. Every claim is checked
as a grid residual and packaged into certificates.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .chart import ChartDomain
from .fields import BumpProfile, ComposeField, Field, SumField, as_field
from .geom import (
    Grid,
    KForm,
    NonPositiveDensity,
    VecField,
    bracket,
    d,
    divergence,
    grid_residual,
    interior,
    lie_derivative,
    vector_from_two_form,
    wedge,
)

__all__ = [
    "AdaptedForm",
    "AxiomViolation",
    "BlendReport",
    "CoverageGap",
    "FluxSystem",
    "NoetherReport",
    "NotAdapted",
    "ObstructionReport",
    "OrbitNotClosed",
    "PieceNotAdapted",
    "SymmetryCertificate",
    "bundle_iso",
    "bundle_iso_inv",
    "blend_adapted",
    "check_adapted",
    "check_preadapted",
    "conformal_identity_residual",
    "construct_symmetry",
    "forward_noether",
    "reeb_obstruction",
    "validate_flux_system",
]

DEFAULT_TOL = 1e-9
NU_FLOOR = 1e-6


class AxiomViolation(ValueError):
    def __init__(self, which: str, worst_point, value: float):
        self.which = which
        self.worst_point = np.asarray(worst_point, dtype=float)
        self.value = float(value)
        super().__init__(
            f"flux-system axiom {which} fails: residual {value:.3e} "
            f"at {self.worst_point.tolist()}"
        )


class NotAdapted(ValueError):
    def __init__(self, reason: str, worst_point, value: float):
        self.reason = reason  # "nonpositive" | "not_closed_mod_nu"
        self.worst_point = np.asarray(worst_point, dtype=float)
        self.value = float(value)
        super().__init__(
            f"1-form not adapted ({reason}): value {value:.3e} "
            f"at {self.worst_point.tolist()}"
        )


class CoverageGap(ValueError):
    def __init__(self, psi_value: float):
        self.psi_value = float(psi_value)
        super().__init__(f"blending pieces leave a gap near psi = {psi_value}")


class PieceNotAdapted(ValueError):
    def __init__(self, index: int, cause: Exception):
        self.index = index
        self.cause = cause
        super().__init__(f"piece {index} is not adapted on its band: {cause}")


class OrbitNotClosed(ValueError):
    def __init__(self, gap: float):
        self.gap = float(gap)
        super().__init__(f"orbit closure gap {gap:.3e}")


def _sup_and_point(obj, pts: np.ndarray):
    if isinstance(obj, (KForm, VecField)):
        vals = np.abs(obj.comp_values(pts))
        flat = int(np.argmax(vals))
        comp_idx, pt_idx = np.unravel_index(flat, vals.shape)
        return float(vals[comp_idx, pt_idx]), pts[pt_idx]
    vals = np.abs(obj.jet(pts, 0).v)
    i = int(np.argmax(vals))
    return float(vals[i]), pts[i]


@dataclass
class FluxSystem:
    """A validated flux-system triple with optional first integral."""

    B: VecField
    nu: KForm
    mu: KForm
    chart: ChartDomain
    psi: object | None = None
    boundary: tuple = ()
    boundary_margin: float = 1e-3
    tangential: bool = True
    residuals: dict = dc_field(default_factory=dict)
    grid: Grid = dc_field(default_factory=Grid)
    system_id: str = ""

    @property
    def inside_fn(self):
        """Pointwise interior test from the boundary level sets, or None."""
        if not self.boundary:
            return None
        fns = [b.compile() for b in self.boundary]

        def inside(p):
            return all(f(p[0], p[1], p[2]) <= 0.0 for f in fns)

        return inside

    def inside_mask(self, pts: np.ndarray) -> np.ndarray:
        """Grid mask: strictly interior by the declared boundary margin."""
        keep = np.ones(pts.shape[0], dtype=bool)
        for b in self.boundary:
            j = b.jet(pts, 1)
            gn = np.linalg.norm(j.g, axis=1)
            dist = -j.v / np.maximum(gn, 1e-300)
            keep &= (j.v < 0.0) & (dist >= self.boundary_margin)
        return keep

    def grid_points(self, grid: Grid | None = None) -> np.ndarray:
        grid = grid or self.grid
        pts = grid.points(self.chart)
        if self.boundary:
            pts = pts[self.inside_mask(pts)]
        return pts

    def beta(self) -> KForm:
        """The flux form i_B mu."""
        return interior(self.B, self.mu)


def _shell_points(fs_boundary, chart: ChartDomain, distance: float, base_pts):
    """Project sample points onto the shell at the given interior distance."""
    out = []
    for b in fs_boundary:
        j0 = b.jet(base_pts, 1)
        pts = base_pts[np.linalg.norm(j0.g, axis=1) > 1e-8].copy()
        for _ in range(40):
            j = b.jet(pts, 1)
            gn2 = np.sum(j.g**2, axis=1)
            target = -distance * np.sqrt(gn2)
            r = j.v - target
            if np.max(np.abs(r)) < 1e-12:
                break
            pts = pts - j.g * (r / np.maximum(gn2, 1e-300))[:, None]
        out.append((b, pts))
    return out


def _tangency_residual(B: VecField, nu: KForm, boundary, chart, distance, base_pts):
    worst = 0.0
    for b, pts in _shell_points(boundary, chart, distance, base_pts):
        j = b.jet(pts, 1)
        n = j.g / np.maximum(np.linalg.norm(j.g, axis=1), 1e-300)[:, None]
        Bv = B.comp_values(pts).T
        worst = max(worst, float(np.max(np.abs(np.sum(Bv * n, axis=1)))))
        # two tangent directions per point
        ref = np.zeros_like(n)
        ref[:, 0] = 1.0
        swap = np.abs(n[:, 0]) > 0.9
        ref[swap] = np.array([0.0, 1.0, 0.0])
        t1 = np.cross(n, ref)
        t1 /= np.linalg.norm(t1, axis=1)[:, None]
        t2 = np.cross(n, t1)
        nuv = nu.comp_values(pts).T
        worst = max(worst, float(np.max(np.abs(np.sum(nuv * t1, axis=1)))))
        worst = max(worst, float(np.max(np.abs(np.sum(nuv * t2, axis=1)))))
    return worst


def validate_flux_system(
    B: VecField,
    nu: KForm,
    mu: KForm,
    chart: ChartDomain,
    grid: Grid | None = None,
    psi=None,
    boundary=(),
    boundary_margin: float = 1e-3,
    tol: float = DEFAULT_TOL,
    system_id: str = "",
) -> FluxSystem:
    """Check the flux-system axioms as grid residuals; raises AxiomViolation."""
    grid = grid or Grid()
    fs = FluxSystem(
        B=B, nu=nu, mu=mu, chart=chart, psi=psi,
        boundary=tuple(boundary), boundary_margin=boundary_margin,
        grid=grid, system_id=system_id,
    )
    pts = fs.grid_points()
    rho = mu.comps[0].jet(pts, 0).v
    if np.any(rho <= 0.0):
        i = int(np.argmin(rho))
        raise AxiomViolation("mu_positive", pts[i], float(rho[i]))
    res = {}
    val, pt = _sup_and_point(d(nu), pts)
    res["d_nu"] = val
    if val > tol:
        raise AxiomViolation("d_nu", pt, val)
    val, pt = _sup_and_point(interior(B, nu).comps[0], pts)
    res["nu_B"] = val
    if val > tol:
        raise AxiomViolation("nu_B", pt, val)
    val, pt = _sup_and_point(divergence(B, mu), pts)
    res["div_mu_B"] = val
    if val > tol:
        raise AxiomViolation("div_mu_B", pt, val)
    if psi is not None:
        dpsi = d(KForm(0, (psi,), chart))
        val, pt = _sup_and_point(dpsi - nu, pts)
        res["d_psi_minus_nu"] = val
        if val > tol:
            raise AxiomViolation("d_psi_minus_nu", pt, val)
    if fs.boundary:
        span = max(chart.span(i) for i in range(3))
        base = Grid(counts=(9, 9, 9), margin=0.05).points(chart)
        d1, d2 = 1e-3 * span, 1e-4 * span
        r1 = _tangency_residual(B, nu, fs.boundary, chart, d1, base)
        r2 = _tangency_residual(B, nu, fs.boundary, chart, d2, base)
        r0 = (r2 * d1 - r1 * d2) / (d1 - d2)
        scale = float(np.max(np.abs(B.comp_values(pts)))) or 1.0
        fs.tangential = abs(r0) < 1e-6 * scale
        res["tangency_extrapolated"] = abs(r0)
    fs.residuals = res
    return fs


@dataclass
class AdaptedForm:
    eta: KForm
    etaB_min: float
    adapt_residual: float
    tol: float = DEFAULT_TOL


def eta_of_B(eta: KForm, B: VecField) -> Field:
    return interior(B, eta).comps[0]


def check_adapted(
    fs: FluxSystem, eta: KForm, grid: Grid | None = None,
    tol: float = DEFAULT_TOL, inside=None,
) -> AdaptedForm:
    """Verify eta(B) > 0 and d eta ^ nu = 0 on the grid."""
    grid = grid or fs.grid
    pts = grid.points(fs.chart)
    if fs.boundary:
        pts = pts[fs.inside_mask(pts)]
    if inside is not None:
        pts = pts[inside(pts)]
    etaB = eta_of_B(eta, fs.B).jet(pts, 0).v
    i = int(np.argmin(etaB))
    if etaB[i] <= 0.0:
        raise NotAdapted("nonpositive", pts[i], float(etaB[i]))
    resid_field = wedge(d(eta), fs.nu).comps[0]
    vals = np.abs(resid_field.jet(pts, 0).v)
    j = int(np.argmax(vals))
    if vals[j] > tol:
        raise NotAdapted("not_closed_mod_nu", pts[j], float(vals[j]))
    return AdaptedForm(eta=eta, etaB_min=float(etaB[i]),
                       adapt_residual=float(vals[j]), tol=tol)


def check_preadapted(
    fs: FluxSystem, eta: KForm, grid: Grid | None = None, tol: float = DEFAULT_TOL
) -> dict:
    """Check i_B d eta = 0 and eta(B) > 0; passing implies adaptedness."""
    grid = grid or fs.grid
    pts = grid.points(fs.chart)
    if fs.boundary:
        pts = pts[fs.inside_mask(pts)]
    etaB = eta_of_B(eta, fs.B).jet(pts, 0).v
    etaB_min = float(etaB.min())
    resid, _ = _sup_and_point(interior(fs.B, d(eta)), pts)
    ok = etaB_min > 0.0 and resid < tol
    report = {
        "pass": ok,
        "etaB_min": etaB_min,
        "iota_B_deta_residual": resid,
        "tol": tol,
    }
    if ok:
        # pre-adapted implies adapted; asserted numerically
        adapted = check_adapted(fs, eta, grid=grid, tol=max(tol, 10 * resid + 1e-12))
        report["adapt_residual"] = adapted.adapt_residual
    return report


@dataclass
class SymmetryCertificate:
    u: VecField
    Btilde: VecField
    mutilde: KForm
    residuals: dict
    independence_margin: float
    nu_floor: float
    tol: float
    grid: Grid
    verdict: str

    def to_dict(self) -> dict:
        return {
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "independence_margin": float(self.independence_margin),
            "nu_floor": self.nu_floor,
            "tol": self.tol,
            "grid": self.grid.to_dict(),
            "verdict": self.verdict,
        }


def construct_symmetry(
    fs: FluxSystem, af: AdaptedForm, grid: Grid | None = None,
    tol: float = DEFAULT_TOL, nu_floor: float = NU_FLOOR,
) -> SymmetryCertificate:
    """Build the conformal symmetry u from an adapted 1-form, with residuals
    for each certified property."""
    grid = grid or fs.grid
    eta = af.eta
    etaB = eta_of_B(eta, fs.B)
    u = vector_from_two_form(wedge(fs.nu, eta) / etaB, fs.mu)
    Btilde = fs.B / etaB
    mutilde = fs.mu * etaB

    pts = fs.grid_points(grid)
    res = {}
    res["iu_iB_mu_minus_nu"], _ = _sup_and_point(
        interior(u, fs.beta()) - fs.nu, pts
    )
    res["eta_u"], _ = _sup_and_point(eta_of_B(eta, u), pts)
    res["bracket_u_Btilde"], _ = _sup_and_point(bracket(u, Btilde), pts)
    res["lie_u_mutilde"], _ = _sup_and_point(lie_derivative(u, mutilde), pts)
    res["div_mutilde_u"], _ = _sup_and_point(divergence(u, mutilde), pts)

    nuv = fs.nu.comp_values(pts).T
    mask = np.linalg.norm(nuv, axis=1) > nu_floor
    margin = float("nan")
    if np.any(mask):
        uv = u.comp_values(pts).T[mask]
        bv = Btilde.comp_values(pts).T[mask]
        margin = float(np.min(np.linalg.norm(np.cross(uv, bv), axis=1)))
    verdict = "PASS" if all(v < tol for v in res.values()) else "FAIL"
    return SymmetryCertificate(
        u=u, Btilde=Btilde, mutilde=mutilde, residuals=res,
        independence_margin=margin, nu_floor=nu_floor, tol=tol,
        grid=grid, verdict=verdict,
    )


def bundle_iso(fs: FluxSystem, eta: KForm, X: VecField) -> KForm:
    """The 1-form i_X i_B mu + eta(X) eta."""
    return interior(X, fs.beta()) + eta * eta_of_B(eta, X)


def bundle_iso_inv(fs: FluxSystem, eta: KForm, alpha: KForm) -> VecField:
    """Inverse of bundle_iso: solve i_X mu = alpha^eta/eta(B)
    + (alpha(B)/eta(B)^2) i_B mu."""
    etaB = eta_of_B(eta, fs.B)
    alphaB = interior(fs.B, alpha).comps[0]
    omega = wedge(alpha, eta) / etaB + fs.beta() * (alphaB / (etaB * etaB))
    return vector_from_two_form(omega, fs.mu)


@dataclass
class NoetherReport:
    nu: KForm
    residuals: dict
    hypotheses: dict
    hypothesis_ok: bool
    warnings: list

    def to_dict(self) -> dict:
        return {
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "hypotheses": {k: float(v) for k, v in self.hypotheses.items()},
            "hypothesis_ok": self.hypothesis_ok,
            "warnings": list(self.warnings),
        }


def forward_noether(
    mu: KForm, B: VecField, u: VecField, f,
    grid: Grid | None = None, tol: float = DEFAULT_TOL, inside=None,
) -> NoetherReport:
    """The 1-form nu = i_u i_B mu of a conformal symmetry, with closedness
    residuals and the commutation/divergence hypotheses reported.

    Hypothesis violations produce warnings; nu is returned regardless.
    """
    grid = grid or Grid()
    f = as_field(f)
    pts = grid.points(mu.chart, inside=inside)
    fv = f.jet(pts, 0).v
    if np.any(fv <= 0.0):
        raise NonPositiveDensity("rescaling function must be positive")
    nu = interior(u, interior(B, mu))
    res = {}
    res["d_nu"], _ = _sup_and_point(d(nu), pts)
    res["nu_B"], _ = _sup_and_point(interior(B, nu).comps[0], pts)
    res["nu_u"], _ = _sup_and_point(interior(u, nu).comps[0], pts)
    hyp = {}
    hyp["bracket_u_B_over_f"], _ = _sup_and_point(bracket(u, B / f), pts)
    hyp["div_fmu_u"], _ = _sup_and_point(divergence(u, mu * f), pts)
    warnings = []
    ok = True
    for k, v in hyp.items():
        if v > tol:
            ok = False
            warnings.append(f"hypothesis {k} residual {v:.3e} exceeds {tol:.1e}")
    return NoetherReport(nu=nu, residuals=res, hypotheses=hyp,
                         hypothesis_ok=ok, warnings=warnings)


@dataclass
class BlendReport:
    eta: KForm
    etaB_min: float
    adapt_residual: float
    psi_range: tuple
    n_pieces: int

    def to_dict(self) -> dict:
        return {
            "etaB_min": self.etaB_min,
            "adapt_residual": self.adapt_residual,
            "psi_range": list(self.psi_range),
            "n_pieces": self.n_pieces,
        }


def blend_adapted(
    fs: FluxSystem,
    pieces,
    grid: Grid | None = None,
    tol: float = DEFAULT_TOL,
    edge_margin: float = 1e-3,
) -> BlendReport:
    """Blend local adapted 1-forms with bump weights composed with psi.

    ``pieces`` is a list of ((lo, hi), eta). The weights depend on psi only,
    so d(weight) ^ nu vanishes identically and the blend stays adapted
    wherever the pieces are. Checked on the covered psi-range, shrunk by
    ``edge_margin`` of its width at both ends.
    """
    if fs.psi is None:
        raise ValueError("blending requires a flux system with psi")
    if not pieces:
        raise ValueError("no pieces given")
    grid = grid or fs.grid
    ivals = [tuple(map(float, iv)) for iv, _ in pieces]
    order = sorted(range(len(pieces)), key=lambda i: ivals[i][0])
    covered_hi = ivals[order[0]][1]
    for i in order[1:]:
        lo, hi = ivals[i]
        if lo > covered_hi:
            raise CoverageGap(0.5 * (covered_hi + lo))
        covered_hi = max(covered_hi, hi)
    lo_all = min(iv[0] for iv in ivals)
    hi_all = max(iv[1] for iv in ivals)
    shrink = edge_margin * (hi_all - lo_all)
    band = (lo_all + shrink, hi_all - shrink)

    def band_mask_for(lo, hi):
        def mask(pts):
            v = fs.psi.jet(pts, 0).v
            return (v >= lo) & (v <= hi)
        return mask

    for idx, ((lo, hi), eta_piece) in enumerate(pieces):
        m = band_mask_for(max(lo, band[0]), min(hi, band[1]))
        try:
            check_adapted(fs, eta_piece, grid=grid, tol=tol, inside=m)
        except NotAdapted as e:
            raise PieceNotAdapted(idx, e) from None
        except ValueError as e:
            raise PieceNotAdapted(idx, e) from None

    if len(pieces) == 1:
        eta = pieces[0][1]
    else:
        bumps = [ComposeField(BumpProfile(lo, hi), fs.psi) for (lo, hi), _ in pieces]
        denom = SumField(bumps)
        comps = []
        for k in range(3):
            comps.append(
                SumField([b * pieces[i][1].comps[k] for i, b in enumerate(bumps)])
                / denom
            )
        eta = KForm(1, tuple(comps), fs.chart)

    adapted = check_adapted(fs, eta, grid=grid, tol=tol, inside=band_mask_for(*band))
    return BlendReport(
        eta=eta,
        etaB_min=adapted.etaB_min,
        adapt_residual=adapted.adapt_residual,
        psi_range=band,
        n_pieces=len(pieces),
    )


@dataclass
class ObstructionReport:
    I0: float
    I1: float
    verdict: str  # OBSTRUCTED | NO_OBSTRUCTION | VACUOUS
    deta_residual: float
    closure_gaps: tuple

    def to_dict(self) -> dict:
        return {
            "I0": self.I0,
            "I1": self.I1,
            "verdict": self.verdict,
            "deta_residual": self.deta_residual,
            "closure_gaps": list(self.closure_gaps),
        }


def _closure_gap(fs: FluxSystem, orbit, rtol, atol) -> float:
    from . import trace

    traj = trace.integrate(fs.B, orbit.point, orbit.period, rtol=rtol, atol=atol,
                           h_max=abs(orbit.period) / 8)
    end = traj.eval(orbit.period)
    diff = end - np.asarray(orbit.point, dtype=float)
    for i in range(3):
        if fs.chart.periodic[i]:
            per = fs.chart.period[i]
            diff[i] = np.remainder(diff[i] + per / 2, per) - per / 2
    return float(np.max(np.abs(diff)))


def reeb_obstruction(
    fs: FluxSystem,
    eta: KForm,
    orbit0,
    orbit1,
    grid: Grid | None = None,
    closure_tol: float = 1e-8,
    zero_tol: float = 1e-12,
    rtol: float = 1e-12,
    atol: float = 1e-14,
) -> ObstructionReport:
    """Circulations of eta along two B-oriented periodic orbits and the
    Stokes sign verdict.

    If eta is closed on a cylinder spanning the orbits, the circulations
    must be equal; opposite nonzero signs therefore rule out eta(B) > 0
    along both orbits.
    """
    from . import trace

    gaps = []
    for orbit in (orbit0, orbit1):
        gap = _closure_gap(fs, orbit, rtol, atol)
        if gap > closure_tol:
            raise OrbitNotClosed(gap)
        gaps.append(gap)
    etaB = eta_of_B(eta, fs.B)
    I0 = trace.line_integral(fs.B, etaB, orbit0.point, orbit0.period, rtol, atol)
    I1 = trace.line_integral(fs.B, etaB, orbit1.point, orbit1.period, rtol, atol)
    grid = grid or fs.grid
    pts = fs.grid_points(grid)
    deta_res, _ = _sup_and_point(d(eta), pts)
    scale = max(abs(I0), abs(I1))
    if scale <= zero_tol:
        verdict = "VACUOUS"
    elif I0 * I1 < 0 and min(abs(I0), abs(I1)) > zero_tol:
        verdict = "OBSTRUCTED"
    else:
        verdict = "NO_OBSTRUCTION"
    return ObstructionReport(
        I0=float(I0), I1=float(I1), verdict=verdict,
        deta_residual=deta_res, closure_gaps=tuple(gaps),
    )


def conformal_identity_residual(
    fs: FluxSystem, u: VecField, f, grid: Grid | None = None
) -> float:
    """Residual of i_[u, B/f] (f mu) + div_{f mu}(u) i_B mu - d(i_u i_B mu),
    which vanishes identically for any u and positive f."""
    grid = grid or fs.grid
    f = as_field(f)
    Btilde = fs.B / f
    mutilde = fs.mu * f
    nu_u = interior(u, fs.beta())
    form = (
        interior(bracket(u, Btilde), mutilde)
        + fs.beta() * divergence(u, mutilde)
        - d(nu_u)
    )
    pts = fs.grid_points(grid)
    val, _ = _sup_and_point(form, pts)
    return val
