"""Small-divisor Fourier solvers and circle-map conjugacy on tori.

Torus functions use period-1 conventions (modes e^{2 pi i k.theta}) for the
2D cohomological solver; circle maps use 2 pi-periodic angles. Rational or
near-rational frequencies raise :class:`SmallDivisor` instead of producing a
regularized solve, since solvability is exactly the point of the equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

__all__ = [
    "ConjugacyResult",
    "FourierSeries1",
    "FourierSeries2",
    "FrequencyVector",
    "NonMonotoneLift",
    "SmallDivisor",
    "conjugate_circle_map",
    "diophantine_margin",
    "solve_circle_cohomological",
    "solve_cohomological",
]


class SmallDivisor(ArithmeticError):
    def __init__(self, k, value: float):
        self.k = tuple(int(v) for v in np.atleast_1d(k))
        self.value = float(value)
        super().__init__(f"small divisor at k={self.k}: |divisor| = {value:.3e}")


class NonMonotoneLift(ValueError):
    pass


# -- 2-torus series -------------------------------------------------------------


class FourierSeries2:
    """Truncated Fourier series on the unit 2-torus.

    Coefficients are stored as a complex (2K+1, 2K+1) array indexed by
    (k1 + K, k2 + K). Real-valued series have Hermitian symmetry
    c[-k] = conj(c[k]).
    """

    def __init__(self, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1] or coeffs.shape[0] % 2 == 0:
            raise ValueError("coefficient array must be square with odd size")
        self.coeffs = coeffs

    @property
    def K(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @staticmethod
    def zeros(K: int) -> "FourierSeries2":
        return FourierSeries2(np.zeros((2 * K + 1, 2 * K + 1), dtype=complex))

    @staticmethod
    def from_function(f, K: int, n: int | None = None) -> "FourierSeries2":
        """Sample f on an n x n grid of the unit torus and take the FFT."""
        n = n or max(4 * K, 32)
        xs = np.arange(n) / n
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        vals = f(X, Y)
        spec = np.fft.fft2(vals) / (n * n)
        out = np.zeros((2 * K + 1, 2 * K + 1), dtype=complex)
        for k1 in range(-K, K + 1):
            for k2 in range(-K, K + 1):
                out[k1 + K, k2 + K] = spec[k1 % n, k2 % n]
        return FourierSeries2(out)

    def modes(self):
        K = self.K
        k = np.arange(-K, K + 1)
        return np.meshgrid(k, k, indexing="ij")

    def eval_grid(self, n: int = 128) -> np.ndarray:
        """Values on an n x n uniform grid (real part)."""
        K = self.K
        big = np.zeros((n, n), dtype=complex)
        for k1 in range(-K, K + 1):
            for k2 in range(-K, K + 1):
                big[k1 % n, k2 % n] += self.coeffs[k1 + K, k2 + K]
        return np.real(np.fft.ifft2(big) * n * n)

    def eval(self, theta1, theta2):
        K = self.K
        t1 = np.asarray(theta1, dtype=float)
        t2 = np.asarray(theta2, dtype=float)
        k = np.arange(-K, K + 1)
        e1 = np.exp(2j * math.pi * np.multiply.outer(t1, k))
        e2 = np.exp(2j * math.pi * np.multiply.outer(t2, k))
        return np.real(np.einsum("...a,ab,...b->...", e1, self.coeffs, e2))

    def directional_derivative(self, omega) -> "FourierSeries2":
        """Apply the operator omega . grad (the flow derivative)."""
        K1, K2 = self.modes()
        fac = 2j * math.pi * (K1 * omega[0] + K2 * omega[1])
        return FourierSeries2(self.coeffs * fac)

    def sup_norm(self, n: int = 128) -> float:
        return float(np.max(np.abs(self.eval_grid(n))))

    def __add__(self, other):
        return FourierSeries2(self.coeffs + other.coeffs)

    def __sub__(self, other):
        return FourierSeries2(self.coeffs - other.coeffs)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "re": self.coeffs.real.tolist(),
            "im": self.coeffs.imag.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "FourierSeries2":
        return FourierSeries2(np.asarray(d["re"]) + 1j * np.asarray(d["im"]))


@dataclass
class FrequencyVector:
    """A 2D frequency with finite-truncation Diophantine diagnostics."""

    omega: tuple
    margins: dict = dc_field(default_factory=dict)

    def with_diagnostics(self, K: int, taus=(1.0, 2.0)) -> "FrequencyVector":
        margins = {tau: diophantine_margin(self.omega, K, tau) for tau in taus}
        return FrequencyVector(omega=tuple(self.omega), margins=margins)


def diophantine_margin(omega, K: int, tau: float) -> float:
    """min over 0 < |k| <= K of |k . omega| |k|^tau (Euclidean norm).

    A finite-K proxy for the Diophantine property, purely diagnostic.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    k = np.arange(-K, K + 1)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    mask = (K1 != 0) | (K2 != 0)
    dots = np.abs(K1 * omega[0] + K2 * omega[1])[mask]
    norms = np.sqrt(K1**2 + K2**2)[mask]
    return float(np.min(dots * norms**tau))


def solve_cohomological(
    omega, h: FourierSeries2, delta: float = 1e-6
) -> tuple[FourierSeries2, float, float]:
    """Solve (omega . grad) g = h - c on the unit 2-torus.

    Returns (g, c, residual) with the gauge g_hat(0) = 0 and c the mean of
    h. Any mode 0 < |k| <= K with |k . omega| < delta raises SmallDivisor.
    The residual is the grid sup-norm of (omega . grad) g - (h - c).
    """
    if isinstance(omega, FrequencyVector):
        omega = omega.omega
    K = h.K
    K1, K2 = h.modes()
    dots = K1 * omega[0] + K2 * omega[1]
    nonzero = (K1 != 0) | (K2 != 0)
    bad = nonzero & (np.abs(dots) < delta)
    if np.any(bad):
        idx = np.argwhere(bad)
        # deterministic report: smallest |k| first
        order = np.argsort(np.abs(idx - K).sum(axis=1))
        i, j = idx[order[0]]
        raise SmallDivisor((i - K, j - K), float(abs(dots[i, j])))
    g = np.zeros_like(h.coeffs)
    g[nonzero] = h.coeffs[nonzero] / (2j * math.pi * dots[nonzero])
    c = float(np.real(h.coeffs[K, K]))
    gs = FourierSeries2(g)
    resid_series = gs.directional_derivative(omega) - h
    resid_series.coeffs[K, K] += c
    residual = resid_series.sup_norm()
    return gs, c, residual


# -- circle series and conjugacy ---------------------------------------------


class FourierSeries1:
    """Real trigonometric polynomial of a 2 pi-periodic angle."""

    def __init__(self, a: np.ndarray, b: np.ndarray):
        self.a = np.asarray(a, dtype=float)  # a[0] + sum a[m] cos(m t)
        self.b = np.asarray(b, dtype=float)  # sum b[m-1] sin(m t)
        if len(self.a) != len(self.b) + 1:
            raise ValueError("need len(a) == len(b) + 1")

    @property
    def K(self) -> int:
        return len(self.b)

    @staticmethod
    def zeros(K: int) -> "FourierSeries1":
        return FourierSeries1(np.zeros(K + 1), np.zeros(K))

    @staticmethod
    def fit(theta: np.ndarray, values: np.ndarray, K: int) -> "FourierSeries1":
        """Least-squares trig fit at scattered sample angles."""
        theta = np.asarray(theta, dtype=float)
        K = min(K, (len(theta) - 1) // 2)
        cols = [np.ones_like(theta)]
        for m in range(1, K + 1):
            cols.append(np.cos(m * theta))
            cols.append(np.sin(m * theta))
        A = np.column_stack(cols)
        coef, *_ = np.linalg.lstsq(A, np.asarray(values, dtype=float), rcond=None)
        a = np.empty(K + 1)
        b = np.empty(K)
        a[0] = coef[0]
        for m in range(1, K + 1):
            a[m] = coef[2 * m - 1]
            b[m - 1] = coef[2 * m]
        return FourierSeries1(a, b)

    def eval(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, self.a[0])
        for m in range(1, self.K + 1):
            out = out + self.a[m] * np.cos(m * theta) + self.b[m - 1] * np.sin(m * theta)
        return out

    def mean(self) -> float:
        return float(self.a[0])

    def with_mean(self, value: float) -> "FourierSeries1":
        a = self.a.copy()
        a[0] = value
        return FourierSeries1(a, self.b)

    def scale(self, s: float) -> "FourierSeries1":
        return FourierSeries1(self.a * s, self.b * s)


def solve_circle_cohomological(
    q: FourierSeries1, omega: float, delta: float = 1e-6
) -> FourierSeries1:
    """Solve h(theta + omega) - h(theta) = q(theta) for zero-mean q.

    The divisors are e^{i m omega} - 1; any |divisor| < delta raises
    SmallDivisor at that mode. The returned h has zero mean.
    """
    K = q.K
    a = np.zeros(K + 1)
    b = np.zeros(K)
    for m in range(1, K + 1):
        div = np.exp(1j * m * omega) - 1.0
        if abs(div) < delta:
            raise SmallDivisor((m,), abs(div))
        cm = 0.5 * (q.a[m] - 1j * q.b[m - 1])
        hm = cm / div
        a[m] = 2.0 * hm.real
        b[m - 1] = -2.0 * hm.imag
    return FourierSeries1(a, b)


@dataclass
class ConjugacyResult:
    h: FourierSeries1  # straightening: theta* = theta + h(theta)
    omega: float  # rotation angle per return (radians)
    theta_star: np.ndarray  # straightened sample angles
    residual: float  # sup |theta*(F) - theta* - omega| over samples
    iterations: int

    def straighten(self, theta):
        return np.asarray(theta, dtype=float) + self.h.eval(theta)


def conjugate_circle_map(
    samples,
    rho: float,
    K: int = 64,
    delta: float = 1e-6,
    max_iter: int = 8,
    tol: float = 1e-13,
) -> ConjugacyResult:
    """Straighten a circle map given lifted samples theta -> F(theta).

    ``samples`` is an (n, 2) array of (angle, image) lift values in radians.
    Each sweep solves the cohomological equation for the current deviation
    from the rigid rotation by 2 pi rho and composes the correction, so the
    returned theta* = theta + h(theta) satisfies
    theta*(F(theta)) = theta*(theta) + 2 pi rho up to the reported residual.

    When the samples chain into an orbit (each image is the next angle) the
    straightening is first seeded from the rigid target sequence, which
    keeps the sweeps convergent even far from a rigid rotation.
    """
    samples = np.asarray(samples, dtype=float)
    theta0 = samples[:, 0]
    F0 = samples[:, 1]
    omega = 2.0 * math.pi * rho

    # monotone degree-1 lift check on the fundamental domain
    base = np.mod(theta0, 2.0 * math.pi)
    shift = F0 - (theta0 - base)
    order = np.argsort(base)
    Fs = shift[order]
    if np.any(np.diff(Fs) <= 0.0):
        raise NonMonotoneLift("return-map samples are not monotone in the angle")

    for m in range(1, K + 1):
        div = abs(np.exp(1j * m * omega) - 1.0)
        if div < delta:
            raise SmallDivisor((m,), div)

    th = theta0.copy()
    F = F0.copy()
    n = len(th)
    Kfit = min(K, (n - 1) // 2)

    if n >= 3 and np.max(np.abs(F0[:-1] - theta0[1:])) < 1e-9:
        targets = theta0[0] + omega * np.arange(n)
        hvals = targets - theta0
        hvals = hvals - np.mean(hvals)
        h_seed = FourierSeries1.fit(base, hvals, Kfit)
        th = theta0 + h_seed.eval(theta0)
        F = F0 + h_seed.eval(F0)
    best_res = np.inf
    iterations = 0
    for it in range(max_iter):
        P = F - th - omega
        res = float(np.max(np.abs(P)))
        if res < best_res:
            best_res = res
        if res < tol:
            break
        q = FourierSeries1.fit(np.mod(th, 2.0 * math.pi), -P, Kfit).with_mean(0.0)
        h_step = solve_circle_cohomological(q, omega, delta)
        th = th + h_step.eval(th)
        F = F + h_step.eval(F)
        iterations = it + 1
    residual = float(np.max(np.abs(F - th - omega)))
    h_total = FourierSeries1.fit(np.mod(theta0, 2.0 * math.pi), th - theta0, Kfit)
    return ConjugacyResult(
        h=h_total, omega=omega, theta_star=th, residual=residual,
        iterations=iterations,
    )
