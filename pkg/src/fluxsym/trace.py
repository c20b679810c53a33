"""Field-line integration, Poincare sections, rotation numbers and probing.

The integrator is an embedded Dormand-Prince 5(4) pair with the classic
continuous extension, so section crossings can be root-polished on the dense
output to well below the integration tolerance. Crossings, lifts and
rotation-number estimates feed the coordinate construction in
:mod:`fluxsym.coords`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .chart import ChartDomain
from .geom import VecField

__all__ = [
    "AxisReport",
    "BudgetExceeded",
    "InsufficientCrossings",
    "LeftDomain",
    "LostTransversality",
    "MaxTimeExceeded",
    "NewtonDiverged",
    "NotCritical",
    "PeriodicOrbit",
    "RegionReport",
    "Section",
    "SectionOrbit",
    "StepFailure",
    "Trajectory",
    "integrate",
    "line_integral",
    "poincare",
    "probe_toroidal_region",
    "refine_axis",
    "rotation_number",
]


class StepFailure(RuntimeError):
    pass


class LeftDomain(RuntimeError):
    def __init__(self, exit_point):
        self.exit_point = np.asarray(exit_point, dtype=float)
        super().__init__(f"trajectory left the domain near {self.exit_point}")


class LostTransversality(RuntimeError):
    pass


class MaxTimeExceeded(RuntimeError):
    pass


class InsufficientCrossings(ValueError):
    pass


class NewtonDiverged(RuntimeError):
    pass


class NotCritical(RuntimeError):
    pass


class BudgetExceeded(RuntimeError):
    pass


# -- Dormand-Prince 5(4) -------------------------------------------------------

_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)
_D = (
    -12715105075 / 11282082432,
    0.0,
    87487479700 / 32700410799,
    -10690763975 / 1880347072,
    701980252875 / 199316789632,
    -1453857185 / 822651844,
    69997945 / 29380423,
)


class OdeSolution:
    """Dense-output solution of one integration run."""

    __slots__ = ("t0", "t_end", "y_end", "ts", "hs", "rconts", "nsteps", "nrejected")

    def __init__(self, t0, t_end, y_end, ts, hs, rconts, nsteps, nrejected):
        self.t0 = t0
        self.t_end = t_end
        self.y_end = y_end
        self.ts = ts  # step start times, ascending in |t - t0|
        self.hs = hs
        self.rconts = rconts  # list of (5, n) arrays
        self.nsteps = nsteps
        self.nrejected = nrejected

    def eval(self, t: float) -> np.ndarray:
        ts, hs = self.ts, self.hs
        forward = self.t_end >= self.t0
        if forward:
            i = int(np.searchsorted(ts, t, side="right")) - 1
        else:
            i = int(np.searchsorted(-ts, -t, side="right")) - 1
        i = min(max(i, 0), len(hs) - 1)
        th = (t - ts[i]) / hs[i]
        r = self.rconts[i]
        return r[0] + th * (r[1] + (1.0 - th) * (r[2] + th * (r[3] + (1.0 - th) * r[4])))

    def step_times(self) -> np.ndarray:
        return np.append(self.ts, self.t_end)


def _integrate_raw(
    rhs,
    y0,
    T,
    rtol=1e-10,
    atol=1e-12,
    h_max=None,
    inside=None,
):
    """Adaptive DP54 from t=0 to t=T (T may be negative)."""
    y = np.asarray(y0, dtype=float).copy()
    n = y.size
    t = 0.0
    direction = 1.0 if T >= 0 else -1.0
    span = abs(T)
    if span == 0.0:
        sol = OdeSolution(0.0, 0.0, y.copy(), np.array([0.0]), np.array([1.0]),
                          [np.vstack([y, np.zeros((4, n))])], 0, 0)
        return sol
    if h_max is None:
        h_max = span / 10.0
    h_max = min(h_max, span)

    k = [None] * 7
    k[0] = np.asarray(rhs(t, y), dtype=float)
    # initial step heuristic
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((k[0] / scale) ** 2))
    h = 0.01 * d0 / d1 if (d0 > 1e-5 and d1 > 1e-5) else 1e-6 * span
    h = min(max(h, 1e-8 * span), h_max)
    h_min = 1e-14 * span

    ts, hs, rconts = [], [], []
    nsteps = nrejected = 0
    max_steps = 5_000_000
    while direction * (T - t) > 1e-14 * span:
        if nsteps + nrejected > max_steps:
            raise StepFailure("step budget exhausted")
        h = min(h, direction * (T - t), h_max)
        if h < h_min:
            raise StepFailure(f"step size underflow at t={t}")
        hd = direction * h
        for i in range(1, 7):
            acc = k[0] * _A[i][0]
            for j in range(1, i):
                if _A[i][j] != 0.0:
                    acc = acc + k[j] * _A[i][j]
            k[i] = np.asarray(rhs(t + _C[i] * hd, y + hd * acc), dtype=float)
        y1 = y + hd * (
            k[0] * _A[6][0]
            + k[2] * _A[6][2]
            + k[3] * _A[6][3]
            + k[4] * _A[6][4]
            + k[5] * _A[6][5]
        )
        k[6] = np.asarray(rhs(t + hd, y1), dtype=float)
        err_vec = hd * (
            k[0] * _E[0]
            + k[2] * _E[2]
            + k[3] * _E[3]
            + k[4] * _E[4]
            + k[5] * _E[5]
            + k[6] * _E[6]
        )
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y1))
        err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))
        if err <= 1.0 or h <= h_min * 2.0:
            # accept; build dense output
            ydiff = y1 - y
            bspl = hd * k[0] - ydiff
            r = np.empty((5, n))
            r[0] = y
            r[1] = ydiff
            r[2] = bspl
            r[3] = ydiff - hd * k[6] - bspl
            r[4] = hd * (
                k[0] * _D[0]
                + k[2] * _D[2]
                + k[3] * _D[3]
                + k[4] * _D[4]
                + k[5] * _D[5]
                + k[6] * _D[6]
            )
            ts.append(t)
            hs.append(hd)
            rconts.append(r)
            t = t + hd
            y = y1
            k[0] = k[6]  # FSAL
            nsteps += 1
            if inside is not None and not inside(y):
                sol = OdeSolution(0.0, t, y.copy(), np.array(ts), np.array(hs),
                                  rconts, nsteps, nrejected)
                raise _ExitedDomain(sol, y.copy())
        else:
            nrejected += 1
        fac = 0.9 * err ** (-0.2) if err > 0.0 else 5.0
        h = h * min(5.0, max(0.2, fac))
    return OdeSolution(0.0, t, y.copy(), np.array(ts), np.array(hs), rconts,
                       nsteps, nrejected)


class _ExitedDomain(Exception):
    def __init__(self, partial_solution, point):
        self.partial_solution = partial_solution
        self.point = point


@dataclass
class Trajectory:
    """Integral curve of a vector field with dense output.

    Points are kept unwrapped so lifts and wrap counts are trivially
    available; :meth:`points_wrapped` reduces to the fundamental domain.
    """

    chart: ChartDomain
    solution: OdeSolution
    field_id: str = ""
    tol: tuple = (1e-10, 1e-12)
    psi_drift: float | None = None

    @property
    def times(self) -> np.ndarray:
        return self.solution.step_times()

    @property
    def points(self) -> np.ndarray:
        sol = self.solution
        pts = [sol.rconts[i][0] for i in range(len(sol.hs))]
        pts.append(sol.y_end)
        return np.asarray(pts)

    def points_wrapped(self) -> np.ndarray:
        return self.chart.wrap(self.points)

    def wrap_counts(self) -> np.ndarray:
        pts = self.points
        out = np.zeros_like(pts, dtype=int)
        for i in range(3):
            if self.chart.periodic[i]:
                out[:, i] = np.floor(pts[:, i] / self.chart.period[i]).astype(int)
        return out

    def eval(self, t: float) -> np.ndarray:
        return self.solution.eval(t)

    @property
    def stats(self) -> dict:
        return {
            "steps": self.solution.nsteps,
            "rejected": self.solution.nrejected,
            "tol": list(self.tol),
        }


def _domain_inside(chart: ChartDomain, extra=None):
    axes = [i for i in range(3) if not chart.periodic[i]]

    def inside(y):
        for i in axes:
            lo, hi = chart.bounds[i]
            if y[i] < lo or y[i] > hi:
                return False
        if extra is not None and not extra(y):
            return False
        return True

    return inside


def integrate(
    B: VecField,
    p0,
    T: float,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    psi=None,
    h_max: float | None = None,
    inside=None,
    field_id: str = "",
) -> Trajectory:
    """Trace the integral curve of B from p0 for time T."""
    f = B.compiled_rhs()
    rhs = lambda t, y: f(y)
    chk = _domain_inside(B.chart, inside)
    try:
        sol = _integrate_raw(rhs, np.asarray(p0, float), T, rtol, atol, h_max, chk)
    except _ExitedDomain as e:
        raise LeftDomain(e.point) from None
    traj = Trajectory(chart=B.chart, solution=sol, field_id=field_id, tol=(rtol, atol))
    if psi is not None:
        cpsi = psi.compile()
        ref = cpsi(*np.asarray(p0, float))
        drift = 0.0
        for i in range(len(sol.hs)):
            q = sol.rconts[i][0]
            drift = max(drift, abs(cpsi(q[0], q[1], q[2]) - ref))
        q = sol.y_end
        drift = max(drift, abs(cpsi(q[0], q[1], q[2]) - ref))
        traj.psi_drift = drift
    return traj


def line_integral(B: VecField, g, p0, T: float, rtol=1e-12, atol=1e-14) -> float:
    """Integral of the scalar field g along the B-flow from p0 over time T."""
    f = B.compiled_rhs()
    cg = g.compile()

    def rhs(t, y):
        v = f(y[:3])
        return (v[0], v[1], v[2], cg(y[0], y[1], y[2]))

    y0 = np.append(np.asarray(p0, float), 0.0)
    sol = _integrate_raw(rhs, y0, T, rtol, atol, None, None)
    return float(sol.y_end[3])


# -- Poincare sections ----------------------------------------------------------


@dataclass(frozen=True)
class Section:
    """Coordinate section {axis = value}, crossed in the given direction."""

    axis: int
    value: float
    direction: int = +1


@dataclass
class SectionOrbit:
    section: Section
    chart: ChartDomain
    times: np.ndarray
    points: np.ndarray  # (n, 3) unwrapped crossing points
    coords2: np.ndarray  # (n, 2) the two non-section coordinates, unwrapped
    axes2: tuple
    lift: np.ndarray  # unwrapped angle sequence (radians)
    center: np.ndarray
    residual: float
    angle_mode: tuple = ("planar",)
    rho_estimate: float | None = None
    rho_error: float | None = None

    @property
    def n_crossings(self) -> int:
        return len(self.times)


def _dense_coord(sol: OdeSolution, i: int):
    return lambda t: float(sol.eval(t)[i])


def _bisect_root(f, ta, tb, iters=90):
    fa = f(ta)
    for _ in range(iters):
        tm = 0.5 * (ta + tb)
        fm = f(tm)
        if (fa <= 0.0) == (fm <= 0.0):
            ta, fa = tm, fm
        else:
            tb = tm
        if abs(tb - ta) < 1e-16 * max(1.0, abs(tb)):
            break
    return 0.5 * (ta + tb)


def _crossing_times(sol: OdeSolution, chart: ChartDomain, section: Section,
                    t_from: float, t_to: float):
    """Times in (t_from, t_to] where the (unwrapped) section coordinate passes
    a target value in the prescribed direction."""
    i = section.axis
    per = chart.period[i] if chart.periodic[i] else None
    coord = _dense_coord(sol, i)
    out = []
    for sidx in range(len(sol.hs)):
        ta = sol.ts[sidx]
        tb = ta + sol.hs[sidx]
        lo_t, hi_t = (ta, tb) if tb >= ta else (tb, ta)
        if hi_t <= t_from or lo_t > t_to:
            continue
        lo_t = max(lo_t, t_from)
        hi_t = min(hi_t, t_to)
        ca, cb = coord(lo_t), coord(hi_t)
        if per is None:
            targets = [section.value]
        else:
            kmin = math.floor((min(ca, cb) - section.value) / per) - 1
            kmax = math.floor((max(ca, cb) - section.value) / per) + 1
            targets = [section.value + kk * per for kk in range(kmin, kmax + 1)]
        for target in targets:
            fa, fb = ca - target, cb - target
            if fa == 0.0:
                continue
            if (fa < 0.0) != (fb < 0.0):
                t_star = _bisect_root(lambda t: coord(t) - target, lo_t, hi_t)
                dt = 1e-7 * max(1.0, abs(hi_t - lo_t))
                slope = (coord(min(t_star + dt, hi_t)) - coord(max(t_star - dt, lo_t)))
                if slope * section.direction > 0.0:
                    out.append((t_star, target))
    out.sort(key=lambda p: p[0])
    return out


def _winding_axis(chart: ChartDomain, axes2, coords2):
    """Index (pos, axis) of a periodic coordinate the crossing set winds
    around, detected by coverage of the fundamental domain."""
    n = coords2.shape[0]
    if n < 8:
        return None
    for pos, j in enumerate(axes2):
        if not chart.periodic[j]:
            continue
        per = chart.period[j]
        vals = np.sort(np.mod(coords2[:, pos], per))
        gaps = np.diff(np.append(vals, vals[0] + per))
        if np.max(gaps) < 0.35 * per:
            return pos, j
    return None


def _angle_lift(sol: OdeSolution, chart: ChartDomain, axes2, times, coords2, center):
    """Unwrapped crossing angles with the extraction convention used.

    If the crossings wind a periodic coordinate, that coordinate (rescaled
    to radians) is the angle; otherwise atan2 around the center, unwrapped
    along the densely sampled path.
    """
    n = len(times)
    winding = _winding_axis(chart, axes2, coords2)
    if winding is not None:
        pos, j = winding
        scale = 2.0 * math.pi / chart.period[j]
        mode = ("periodic", j, scale)
        return coords2[:, pos] * scale, np.asarray(center), mode
    # planar angle, unwrapped by sampling the path densely between crossings
    i1, i2 = axes2
    lift = np.empty(n)
    ang = math.atan2(coords2[0, 1] - center[1], coords2[0, 0] - center[0])
    lift[0] = ang
    for k in range(n - 1):
        samples = np.linspace(times[k], times[k + 1], 33)
        prev = lift[k]
        for t in samples[1:]:
            q = sol.eval(t)
            a = math.atan2(q[i2] - center[1], q[i1] - center[0])
            a = prev + math.remainder(a - prev, 2.0 * math.pi)
            prev = a
        lift[k + 1] = prev
    mode = ("planar", np.asarray(center, dtype=float), axes2)
    return lift, np.asarray(center), mode


def poincare(
    B: VecField,
    section: Section,
    p0,
    n_crossings: int,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    max_time: float = 5000.0,
    chunk: float = 50.0,
    center=None,
    inside=None,
    estimate_rho: bool = True,
) -> SectionOrbit:
    """Collect section crossings by dense-output root finding."""
    chart = B.chart
    f = B.compiled_rhs()
    rhs = lambda t, y: f(y)
    chk = _domain_inside(chart, inside)
    axes2 = tuple(j for j in range(3) if j != section.axis)

    crossings = []  # (global time, point)
    sols = []
    t_base = 0.0
    y = np.asarray(p0, dtype=float)
    coord_min = coord_max = float(y[section.axis])
    while t_base < max_time and len(crossings) < n_crossings:
        try:
            sol = _integrate_raw(rhs, y, min(chunk, max_time - t_base),
                                 rtol, atol, None, chk)
        except _ExitedDomain as e:
            raise LeftDomain(e.point) from None
        for t_star, _target in _crossing_times(sol, chart, section, 0.0, sol.t_end):
            if len(crossings) < n_crossings:
                crossings.append((t_base + t_star, sol.eval(t_star)))
        sols.append((t_base, sol))
        cvals = [sol.rconts[i][0][section.axis] for i in range(len(sol.hs))]
        cvals.append(sol.y_end[section.axis])
        coord_min = min(coord_min, min(cvals))
        coord_max = max(coord_max, max(cvals))
        t_base += sol.t_end
        y = sol.y_end
    if len(crossings) < n_crossings:
        span = chart.span(section.axis)
        if coord_max - coord_min < 1e-3 * span:
            raise LostTransversality(
                f"section coordinate varies by {coord_max - coord_min:.2e} only"
            )
        raise MaxTimeExceeded(
            f"{len(crossings)} of {n_crossings} crossings within t={max_time}"
        )

    times = np.array([c[0] for c in crossings])
    pts = np.array([c[1] for c in crossings])
    coords2 = pts[:, list(axes2)]
    if center is None:
        center = coords2.mean(axis=0)
    center = np.asarray(center, dtype=float)

    # residual of the section constraint (wrapped for periodic axes)
    cvals = pts[:, section.axis]
    if chart.periodic[section.axis]:
        per = chart.period[section.axis]
        res = np.abs(np.remainder(cvals - section.value + per / 2, per) - per / 2)
    else:
        res = np.abs(cvals - section.value)
    residual = float(res.max())

    # stitch a combined dense solution view for lifting
    class _Stitched:
        def eval(self, t):
            for tb, sol in reversed(sols):
                if t >= tb - 1e-15:
                    return sol.eval(t - tb)
            return sols[0][1].eval(t - sols[0][0])

    lift, center, angle_mode = _angle_lift(
        _Stitched(), chart, axes2, times, coords2, center
    )
    orbit = SectionOrbit(
        section=section,
        chart=chart,
        times=times,
        points=pts,
        coords2=coords2,
        axes2=axes2,
        lift=lift,
        center=center,
        residual=residual,
        angle_mode=angle_mode,
    )
    if estimate_rho and len(times) >= 65:
        rho, err = rotation_number(orbit)
        orbit.rho_estimate = rho
        orbit.rho_error = err
    return orbit


# -- rotation numbers -----------------------------------------------------------


def _birkhoff_weights(n: int) -> np.ndarray:
    s = (np.arange(1, n + 1)) / (n + 1.0)
    return np.exp(-1.0 / (s * (1.0 - s)))


def _weighted_average(incs: np.ndarray) -> float:
    w = _birkhoff_weights(len(incs))
    return float(np.sum(w * incs) / np.sum(w))


def rotation_number(orbit: SectionOrbit | np.ndarray) -> tuple[float, float]:
    """Weighted Birkhoff average of lifted angle increments (in turns).

    Returns (rho, error estimate from half-sequence agreement).
    """
    lift = orbit.lift if isinstance(orbit, SectionOrbit) else np.asarray(orbit)
    incs = np.diff(lift) / (2.0 * math.pi)
    if len(incs) < 64:
        raise InsufficientCrossings(f"{len(incs) + 1} crossings < 65")
    rho = _weighted_average(incs)
    half = len(incs) // 2
    r1 = _weighted_average(incs[:half])
    r2 = _weighted_average(incs[half:])
    return rho, abs(r1 - r2)


# -- periodic orbits / axes ------------------------------------------------------


@dataclass
class PeriodicOrbit:
    """A closed field line: base point and period (flow time)."""

    point: np.ndarray
    period: float
    gap: float | None = None


@dataclass
class AxisReport:
    orbit: PeriodicOrbit
    section: Section
    newton_residual: float
    dpsi_sup: float
    transverse_hessian: np.ndarray
    eigenvalues: np.ndarray
    classification: str  # "elliptic" | "hyperbolic" | "degenerate"

    def is_elliptic(self) -> bool:
        return self.classification == "elliptic"


def _return_map(B, section, axes2, rtol, atol, max_time=200.0):
    """q (2,) on the section -> (F(q), return time)."""
    chart = B.chart
    f = B.compiled_rhs()
    rhs = lambda t, y: f(y)
    chk = _domain_inside(chart, None)

    def F(q, direction):
        y = np.empty(3)
        y[section.axis] = section.value
        y[axes2[0]] = q[0]
        y[axes2[1]] = q[1]
        t_base = 0.0
        while t_base < max_time:
            try:
                sol = _integrate_raw(rhs, y, 20.0, rtol, atol, None, chk)
            except _ExitedDomain as e:
                raise LeftDomain(e.point) from None
            sec = Section(section.axis, section.value, direction)
            found = _crossing_times(sol, chart, sec, 1e-9, sol.t_end)
            if found:
                t_star, _ = found[0]
                p = sol.eval(t_star)
                return np.array([p[axes2[0]], p[axes2[1]]]), t_base + t_star
            t_base += sol.t_end
            y = sol.y_end
        raise MaxTimeExceeded("no section return found")

    return F


def refine_axis(
    B: VecField,
    psi,
    guess,
    section: Section,
    rtol: float = 1e-12,
    atol: float = 1e-13,
    newton_tol: float = 1e-11,
    fd_step: float = 1e-6,
    max_iter: int = 30,
    dpsi_tol: float = 1e-8,
    drift_cap: float = 0.2,
    hessian_floor: float = 1e-4,
) -> AxisReport:
    """Newton-refine a periodic orbit from a return-map fixed-point guess and
    report first-integral criticality and the transverse Hessian of psi.

    The iteration must stay within ``drift_cap`` of the guess; converging to
    a fixed point far away means the guess was not near an axis and raises
    NotCritical. Transverse Hessian eigenvalues below ``hessian_floor`` in
    magnitude classify the orbit as degenerate.
    """
    chart = B.chart
    axes2 = tuple(j for j in range(3) if j != section.axis)
    rhs3 = B.compiled_rhs()
    p_guess = np.asarray(guess, dtype=float)
    v = rhs3(p_guess)[section.axis]
    direction = 1 if v >= 0 else -1
    F = _return_map(B, section, axes2, rtol, atol)

    q0 = np.array([p_guess[axes2[0]], p_guess[axes2[1]]])
    q = q0.copy()
    period = None
    res = np.inf
    for _ in range(max_iter):
        Fq, period = F(q, direction)
        r = Fq - q
        res = float(np.max(np.abs(r)))
        if res < newton_tol:
            break
        J = np.empty((2, 2))
        for j in range(2):
            dq = np.zeros(2)
            dq[j] = fd_step
            J[:, j] = (F(q + dq, direction)[0] - F(q - dq, direction)[0]) / (2 * fd_step)
        try:
            delta = np.linalg.solve(J - np.eye(2), -r)
        except np.linalg.LinAlgError:
            raise NewtonDiverged("singular return-map Jacobian") from None
        if not np.all(np.isfinite(delta)) or np.max(np.abs(delta)) > 1.0:
            raise NewtonDiverged(f"step {delta} out of trust region")
        q = q + delta
        if np.max(np.abs(q - q0)) > drift_cap:
            raise NotCritical(
                f"iteration drifted {np.max(np.abs(q - q0)):.3f} from the guess"
            )
    else:
        raise NewtonDiverged(f"residual {res:.2e} after {max_iter} iterations")

    point = np.empty(3)
    point[section.axis] = section.value
    point[axes2[0]] = q[0]
    point[axes2[1]] = q[1]

    # first-integral criticality along the orbit
    traj = integrate(B, point, period * 1.0, rtol=rtol, atol=atol, h_max=period / 8)
    tsamp = np.linspace(0.0, period, 65)
    samp = np.array([traj.eval(t) for t in tsamp])
    jets = psi.jet(samp, 1)
    dpsi_sup = float(np.max(np.linalg.norm(jets.g, axis=1)))
    if dpsi_sup > dpsi_tol:
        raise NotCritical(f"sup |dpsi| = {dpsi_sup:.2e} on the refined orbit")

    hess = psi.jet(point.reshape(1, 3), 2).h[0]
    tr = hess[np.ix_(axes2, axes2)]
    tr = 0.5 * (tr + tr.T)
    eigs = np.linalg.eigvalsh(tr)
    if np.all(np.abs(eigs) > hessian_floor):
        cls = "elliptic" if eigs[0] * eigs[1] > 0 else "hyperbolic"
    else:
        cls = "degenerate"
    end = traj.eval(period)
    diff = end - point
    for i in range(3):
        if chart.periodic[i]:
            per = chart.period[i]
            diff[i] = np.remainder(diff[i] + per / 2, per) - per / 2
    gap = float(np.max(np.abs(diff)))
    return AxisReport(
        orbit=PeriodicOrbit(point=point, period=float(period), gap=gap),
        section=section,
        newton_residual=res,
        dpsi_sup=dpsi_sup,
        transverse_hessian=tr,
        eigenvalues=eigs,
        classification=cls,
    )


# -- toroidal region probe --------------------------------------------------------


@dataclass
class LevelReport:
    level: float
    classification: str  # REGULAR_TORUS | AXIS_CANDIDATE | CRITICAL_NONAXIS | BOUNDARY | UNRESOLVED
    component_label: str  # T2xI | SOLID_TORUS | OPEN_SOLID_TORUS | S2xS1 | COMPACT_NO_BOUNDARY | UNKNOWN
    details: dict = dc_field(default_factory=dict)


@dataclass
class RegionReport:
    levels: list
    critical_points: list
    budget_spent: int
    budget_exceeded: bool

    def classification(self, level: float) -> str:
        for entry in self.levels:
            if abs(entry.level - level) < 1e-12:
                return entry.classification
        raise KeyError(f"level {level} was not probed")


def _critical_points_2d(psi, chart, section: Section, n_scan: int = 9):
    """Critical points of psi in the section plane by damped 2D Newton."""
    axes2 = tuple(j for j in range(3) if j != section.axis)
    i1, i2 = axes2
    lo1, hi1 = chart.bounds[i1] if not chart.periodic[i1] else (0.0, chart.period[i1])
    lo2, hi2 = chart.bounds[i2] if not chart.periodic[i2] else (0.0, chart.period[i2])
    pad1 = 0.05 * (hi1 - lo1)
    pad2 = 0.05 * (hi2 - lo2)
    found = []
    for a in np.linspace(lo1 + pad1, hi1 - pad1, n_scan):
        for b in np.linspace(lo2 + pad2, hi2 - pad2, n_scan):
            p = np.empty(3)
            p[section.axis] = section.value
            p[i1], p[i2] = a, b
            ok = True
            for _ in range(60):
                j = psi.jet(p.reshape(1, 3), 2)
                g = j.g[0][list(axes2)]
                H = j.h[0][np.ix_(axes2, axes2)]
                if np.max(np.abs(g)) < 1e-13:
                    break
                try:
                    step = np.linalg.solve(H, -g)
                except np.linalg.LinAlgError:
                    ok = False
                    break
                if np.max(np.abs(step)) > 0.25 * max(hi1 - lo1, hi2 - lo2):
                    step = step * (0.25 * max(hi1 - lo1, hi2 - lo2) / np.max(np.abs(step)))
                p[i1] += step[0]
                p[i2] += step[1]
                if not (lo1 - pad1 <= p[i1] <= hi1 + pad1 and lo2 - pad2 <= p[i2] <= hi2 + pad2):
                    ok = False
                    break
            else:
                ok = False
            if not ok:
                continue
            if any(np.max(np.abs(p - q)) < 1e-6 for q, _ in found):
                continue
            val = float(psi.jet(p.reshape(1, 3), 0).v[0])
            found.append((p.copy(), val))
    return found


def _loop_closure(orbit: SectionOrbit, order: int = 24) -> float:
    """Normalized residual of a Fourier fit of the crossings vs lifted angle.

    Periodic coordinates may wind with the angle, so their fit includes a
    linear term; a small residual certifies a closed invariant curve.
    """
    th = np.mod(orbit.lift, 2.0 * math.pi)
    cols = [np.ones_like(th)]
    for m in range(1, order + 1):
        cols.append(np.cos(m * th))
        cols.append(np.sin(m * th))
    A_base = np.column_stack(cols)
    resid = 0.0
    for j in range(2):
        q = orbit.coords2[:, j]
        jax = orbit.axes2[j]
        if orbit.chart.periodic[jax]:
            A = np.column_stack([A_base, orbit.lift])
            scale = orbit.chart.period[jax]
        else:
            A = A_base
            spread = float(np.max(q) - np.min(q))
            scale = max(spread, 1e-3 * orbit.chart.span(jax))
        coef, *_ = np.linalg.lstsq(A, q, rcond=None)
        fit = A @ coef
        resid = max(resid, float(np.max(np.abs(fit - q))) / scale)
    return resid


def _point_in_loop(orbit: SectionOrbit, pt2) -> bool:
    order = np.argsort(np.mod(orbit.lift, 2.0 * math.pi))
    poly = orbit.coords2[order]
    x, y = pt2
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xint:
                inside = not inside
    return inside


def probe_toroidal_region(
    fs,
    psi_levels,
    seeds_per_level: int = 2,
    budget: int = 4000,
    section: Section | None = None,
    n_crossings: int = 96,
    closure_tol: float = 1e-3,
    closure_order: int = 24,
    level_tol: float = 1e-7,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    seed: int = 1234,
) -> RegionReport:
    """Classify first-integral levels into the toroidal-region vocabulary.

    The budget is a total crossing allowance; exhausting it marks the
    remaining levels UNRESOLVED (partial report, no exception).
    """
    psi = fs.psi
    if psi is None:
        raise ValueError("probe requires a flux system with a first integral")
    chart = fs.chart
    B = fs.B
    if section is None:
        section = _default_section(fs)
    axes2 = tuple(j for j in range(3) if j != section.axis)

    crit = _critical_points_2d(psi, chart, section)
    crit_reports = []
    for p, val in crit:
        entry = {"point": p.tolist(), "psi": val, "axis": None, "classification": None}
        try:
            rep = refine_axis(B, psi, p, section, rtol=rtol, atol=atol)
            entry["axis"] = rep
            entry["classification"] = rep.classification
        except (NewtonDiverged, NotCritical, MaxTimeExceeded, LeftDomain):
            entry["classification"] = "degenerate"
        crit_reports.append(entry)

    rng = np.random.default_rng(seed)
    spent = 0
    exceeded = False
    levels_out = []
    for level in psi_levels:
        near = [e for e in crit_reports if abs(e["psi"] - level) < max(level_tol, 1e-9)]
        if near:
            if all(e["classification"] == "elliptic" for e in near):
                cls = "AXIS_CANDIDATE"
                label = "SOLID_TORUS" if getattr(fs, "boundary", ()) else "OPEN_SOLID_TORUS"
            else:
                cls = "CRITICAL_NONAXIS"
                label = "UNKNOWN"
            levels_out.append(
                LevelReport(level, cls, label,
                            {"critical_points": [e["point"] for e in near]})
            )
            continue
        if exceeded or spent + n_crossings > budget:
            exceeded = True
            levels_out.append(LevelReport(level, "UNRESOLVED", "UNKNOWN",
                                          {"reason": "budget"}))
            continue
        seeds = _find_level_seeds(fs, level, section, seeds_per_level, rng)
        if not seeds:
            levels_out.append(LevelReport(level, "BOUNDARY", "UNKNOWN",
                                          {"reason": "no interior seed"}))
            continue
        details = {"seeds": [], "rho": [], "closure": []}
        verdicts = []
        loops = []
        rhs = B.compiled_rhs()
        for sp in seeds:
            if spent + n_crossings > budget:
                exceeded = True
                break
            v_sec = rhs(np.asarray(sp, float))[section.axis]
            sec_here = Section(section.axis, section.value, 1 if v_sec >= 0 else -1)
            try:
                orbit = poincare(B, sec_here, sp, n_crossings, rtol=rtol, atol=atol,
                                 inside=getattr(fs, "inside_fn", None))
                spent += n_crossings
            except LeftDomain:
                verdicts.append("BOUNDARY")
                continue
            except (LostTransversality, MaxTimeExceeded):
                verdicts.append("UNRESOLVED")
                continue
            closure = _loop_closure(orbit, closure_order)
            details["seeds"].append(list(map(float, sp)))
            details["closure"].append(closure)
            if orbit.rho_estimate is not None:
                details["rho"].append(orbit.rho_estimate)
            if closure < closure_tol:
                verdicts.append("REGULAR_TORUS")
                loops.append(orbit)
            else:
                verdicts.append("UNRESOLVED")
        if not verdicts:
            cls = "UNRESOLVED"
        elif all(v == "REGULAR_TORUS" for v in verdicts):
            cls = "REGULAR_TORUS"
        elif "BOUNDARY" in verdicts:
            cls = "BOUNDARY"
        else:
            cls = "UNRESOLVED"
        label = "UNKNOWN"
        if cls == "REGULAR_TORUS" and loops:
            n_axes = 0
            n_other = 0
            for e in crit_reports:
                pt2 = (e["point"][axes2[0]], e["point"][axes2[1]])
                if _point_in_loop(loops[0], pt2):
                    if e["classification"] == "elliptic":
                        n_axes += 1
                    else:
                        n_other += 1
            if n_other > 0:
                # separatrix material inside: an annular band of tori
                label = "T2xI"
            elif n_axes == 1:
                label = "SOLID_TORUS" if getattr(fs, "boundary", ()) else "OPEN_SOLID_TORUS"
            elif n_axes == 0:
                label = "T2xI"
            elif n_axes == 2:
                label = "S2xS1"
        levels_out.append(LevelReport(level, cls, label, details))
    return RegionReport(
        levels=levels_out,
        critical_points=crit_reports,
        budget_spent=spent,
        budget_exceeded=exceeded,
    )


def _default_section(fs) -> Section:
    """Pick the periodic axis with the largest mean |B component|."""
    chart = fs.chart
    rng = np.random.default_rng(0)
    pts = chart.random_interior_points(64, rng, margin=0.05)
    vals = np.abs(fs.B.comp_values(pts)).mean(axis=1)
    best, best_val = None, -1.0
    for i in range(3):
        if chart.periodic[i] and vals[i] > best_val:
            best, best_val = i, vals[i]
    if best is None:
        best = int(np.argmax(vals))
    return Section(axis=best, value=0.0, direction=+1)


def _find_level_seeds(fs, level, section: Section, count, rng, tries=200):
    """Points on the section plane with psi close to the level."""
    chart = fs.chart
    psi = fs.psi
    axes2 = tuple(j for j in range(3) if j != section.axis)
    inside_fn = getattr(fs, "inside_fn", None)
    seeds = []
    for _ in range(tries):
        if len(seeds) >= count:
            break
        p = chart.random_interior_points(1, rng, margin=0.05)[0]
        p[section.axis] = section.value
        ok = False
        for _ in range(80):
            j = psi.jet(p.reshape(1, 3), 1)
            r = float(j.v[0]) - level
            if abs(r) < 1e-12:
                ok = True
                break
            g = j.g[0].copy()
            g[section.axis] = 0.0
            gn = float(g @ g)
            if gn < 1e-16:
                break
            p = p - g * (r / gn)
            if not chart.contains(p, margin=0.01):
                break
        if not ok:
            continue
        if inside_fn is not None and not inside_fn(p):
            continue
        if any(np.max(np.abs(p - q)) < 1e-3 for q in seeds):
            continue
        seeds.append(p.copy())
    return seeds
