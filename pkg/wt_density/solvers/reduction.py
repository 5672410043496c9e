"""
Reduction of the perturbed equation to a Levinson-form system.

Layout:
    WvNTerm / OperatorSpec      the model (periodic q, WvN term, q1, alpha)
    validate_frequency          2 a omega / pi must not be an integer
    critical_points             lambda_n^- and lambda_n^+ of every resolved band
    epsilon_gap                 distance to the resonance lattice
    in_neighbourhood            membership in U(beta, mu)
    HarrisLutzQ / build_Q       the anti-diagonal transform Q with exact Q', e^Q
    LevinsonSystem              phase nu, remainders R1 / R2, their L1 bookkeeping

With v the coefficients of (psi, psi') in the Bloch basis (p_-, p_+)
(see ``LevinsonSystem``), the perturbed equation reads

    v' = [D + (s(x) + q1(x)/W) P(x)] v,     D = diag(-ik/a, ik/a),
    P = [[-p+ p-, -p+^2], [p-^2, p+ p-]],   s(x) = c sin(2 omega x + delta) / ((x+1)^gamma W),

and v = e^Q v~ turns it into v~' = (diag(nu, -nu) + R2) v~ with R2 summable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import quad
from scipy.optimize import brentq

from wt_density.solvers.levinson import DiagonalSystem, RemainderIntegral, integrate_norm
from wt_density.solvers.oscillatory import mode_tail, oscillatory_beginning
from wt_density.solvers.periodic import (
    BandStructure,
    BlochData,
    CELL_TOL,
    FourierTable,
    PeriodicPotential,
    band_k,
    discriminant,
)
from wt_density.solvers.potentials import (
    PotentialEvaluator,
    WignerVonNeumannPotential,
    ZeroPotential,
    sum_potentials,
)
from wt_density.solvers.ode_engine import ToleranceSpec
from wt_density.utils.debugging import setup_logging
from wt_density.utils.errors import (
    CriticalPointError,
    FrequencyConditionError,
    InvalidArgumentError,
    NeighbourhoodError,
    ResonanceProximityError,
)

logger = setup_logging()

FREQUENCY_TOL = 1e-9
RESONANCE_TOL = 1e-9
SERIES_SWITCH = 1e-3


@dataclass(frozen=True)
class WvNTerm:
    """c sin(2 omega x + delta) / (x + 1)^gamma with gamma in (1/2, 1]."""

    c: float
    omega: float
    delta: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.gamma <= 1.0:
            raise InvalidArgumentError(f"gamma must lie in (1/2, 1], got {self.gamma}")

    @property
    def active(self) -> bool:
        return self.c != 0.0

    def potential(self) -> PotentialEvaluator:
        if not self.active:
            return ZeroPotential()
        return WignerVonNeumannPotential(c=self.c, omega=self.omega, delta=self.delta, gamma=self.gamma)

    def coupling(self, x: ArrayLike, wronskian: complex) -> NDArray[np.complex128]:
        """s(x) = c sin(2 omega x + delta) / ((x + 1)^gamma W)."""
        x = np.asarray(x, dtype=float)
        return self.c * np.sin(2.0 * self.omega * x + self.delta) / ((x + 1.0) ** self.gamma * wronskian)


@dataclass(frozen=True)
class FrequencyCheck:
    passed: bool
    value: float
    distance: float


def validate_frequency(a: float, omega: float) -> FrequencyCheck:
    """
    Check that 2 a omega / pi is not an integer.

    Returns:
        FrequencyCheck: ``passed`` is False iff 2 a omega / pi is within 1e-9
        of an integer; ``distance`` is the distance to the nearest integer.
    """
    if not a > 0:
        raise InvalidArgumentError(f"period must be positive, got {a}")
    value = 2.0 * a * omega / math.pi
    distance = abs(value - round(value))
    return FrequencyCheck(passed=distance > FREQUENCY_TOL, value=value, distance=distance)


@dataclass(frozen=True)
class OperatorSpec:
    """
    -psi'' + (q(x) + c sin(2 omega x + delta)/(x+1)^gamma + q1(x)) psi = lambda psi on x >= 0,
    psi(0) cos(alpha) - psi'(0) sin(alpha) = 0.
    """

    periodic: PeriodicPotential
    wvn: WvNTerm
    q1: PotentialEvaluator = field(default_factory=ZeroPotential)
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < math.pi:
            raise InvalidArgumentError(f"boundary angle must lie in [0, pi), got {self.alpha}")
        if self.q1.l1_bound is None:
            raise InvalidArgumentError(f"q1 ({type(self.q1).__name__}) must declare an L1 bound")
        if self.wvn.active and not validate_frequency(self.a, self.wvn.omega).passed:
            logger.warning(
                f"⚠️ frequency condition fails: 2 a omega / pi = {2 * self.a * self.wvn.omega / math.pi:.12g}"
            )

    @property
    def a(self) -> float:
        return self.periodic.a

    @property
    def unperturbed(self) -> bool:
        return not self.wvn.active and isinstance(self.q1, ZeroPotential)

    @cached_property
    def potential(self) -> PotentialEvaluator:
        """The full potential q + WvN + q1."""
        return sum_potentials([self.periodic, self.wvn.potential(), self.q1])

    def with_alpha(self, alpha: float) -> "OperatorSpec":
        return OperatorSpec(periodic=self.periodic, wvn=self.wvn, q1=self.q1, alpha=alpha % math.pi)


@dataclass(frozen=True)
class CriticalPoint:
    band: int
    sign: str
    lam: float
    target_k: float
    k_residual: float


@dataclass(frozen=True)
class ResonanceSet:
    """Per-band critical points lambda_n^-, lambda_n^+ and the fractional part {a omega / pi}."""

    omega: float
    fraction: float
    points: Tuple[CriticalPoint, ...]

    def band_points(self, n: int) -> Tuple[CriticalPoint, ...]:
        return tuple(p for p in self.points if p.band == n)

    @property
    def values(self) -> List[float]:
        return sorted(p.lam for p in self.points)

    def nearest(self, lam: float) -> CriticalPoint:
        if not self.points:
            raise CriticalPointError("no critical points resolved")
        return min(self.points, key=lambda p: abs(p.lam - lam))


def _in_band_k(P: PeriodicPotential, lam: float, n: int, tol: ToleranceSpec) -> float:
    return band_k(float(discriminant(P, lam, tol)), n)


def critical_points(
    P: PeriodicPotential,
    bands: BandStructure,
    omega: float,
    tol: ToleranceSpec = CELL_TOL,
) -> ResonanceSet:
    """
    Solve k(lambda) = pi (n + {a omega/pi}) and k(lambda) = pi (n + 1 - {a omega/pi}) on every band.

    Args:
        P: Periodic potential.
        bands: Resolved band structure.
        omega: WvN frequency.
        tol: Error control of the cell integrations.

    Returns:
        ResonanceSet: Two interior points per band.

    Raises:
        FrequencyConditionError: 2 a omega / pi is an integer.
        CriticalPointError: A target falls outside the band's k-range.
    """
    check = validate_frequency(P.a, omega)
    if not check.passed:
        raise FrequencyConditionError(f"2 a omega / pi = {check.value:.12g} is an integer")
    fraction = (P.a * omega / math.pi) % 1.0
    points: List[CriticalPoint] = []
    for n, (lo, hi) in enumerate(bands.bands):
        for sign, target in (("-", math.pi * (n + fraction)), ("+", math.pi * (n + 1 - fraction))):
            if not n * math.pi < target < (n + 1) * math.pi:
                raise CriticalPointError(f"target k={target:.10g} outside band {n} range")

            def residual(lam: float, target=target, n=n) -> float:
                return _in_band_k(P, lam, n, tol) - target

            f_lo, f_hi = residual(lo), residual(hi)
            if f_lo * f_hi > 0:
                raise CriticalPointError(
                    f"k - target does not change sign on band {n} [{lo:.10g}, {hi:.10g}] (target {target:.10g})"
                )
            lam = brentq(residual, lo, hi, xtol=1e-15 * max(1.0, abs(hi)), rtol=4 * np.finfo(float).eps)
            points.append(CriticalPoint(band=n, sign=sign, lam=float(lam), target_k=target,
                                        k_residual=abs(residual(lam))))
    logger.info(f"✅ resolved {len(points)} critical points ({{a omega/pi}} = {fraction:.6f})")
    return ResonanceSet(omega=omega, fraction=fraction, points=tuple(points))


def _epsilon(k: complex, a: float, omega: float) -> Tuple[float, int]:
    """(1/a) min_n min |k +- a omega + pi n| and the minimizing n."""
    best, best_n = math.inf, 0
    for shift in (a * omega, -a * omega):
        centre = -(k + shift).real / math.pi
        for n in (math.floor(centre), math.ceil(centre)):
            value = abs(k + shift + math.pi * n) / a
            if value < best:
                best, best_n = value, n
    return best, best_n


@dataclass(frozen=True)
class ResonanceGap:
    mu: float
    epsilon: float
    nearest_n: int


def epsilon_gap(mu: float, k_mu: float, a: float, omega: float, strict: bool = True) -> ResonanceGap:
    """
    epsilon(mu) = 1/2 min_n { |2k/a + 2 omega + 2 pi n / a|, |2k/a - 2 omega + 2 pi n / a| }.

    Raises:
        ResonanceProximityError: epsilon below 1e-9 (only when ``strict``).
    """
    eps, n = _epsilon(complex(k_mu), a, omega)
    if eps < RESONANCE_TOL and strict:
        raise ResonanceProximityError(f"epsilon({mu:.10g}) = {eps:.3e}: resonance point")
    return ResonanceGap(mu=float(mu), epsilon=eps, nearest_n=n)


@dataclass(frozen=True)
class NeighbourhoodCheck:
    inside: bool
    conditions: Dict[str, bool]
    epsilon_lambda: float
    epsilon_mu: float


def in_neighbourhood(
    k_lam: complex,
    k_mu: float,
    a: float,
    omega: float,
    beta: float = 1.0,
) -> NeighbourhoodCheck:
    """
    lambda in U(beta, mu):
    2 eps(lambda) >= eps(mu), 0 <= Im 2k(lambda)/a <= 1, |Re k(lambda) - k(mu)| <= beta Im k(lambda).
    """
    eps_lam, _ = _epsilon(complex(k_lam), a, omega)
    eps_mu, _ = _epsilon(complex(k_mu), a, omega)
    slack = 1e-12
    conditions = {
        "epsilon": 2.0 * eps_lam >= eps_mu - slack,
        "strip": -slack <= 2.0 * complex(k_lam).imag / a <= 1.0 + slack,
        "sector": abs(complex(k_lam).real - k_mu) <= beta * complex(k_lam).imag + slack,
    }
    return NeighbourhoodCheck(all(conditions.values()), conditions, eps_lam, eps_mu)


def _matmul(A: NDArray, B: NDArray) -> NDArray:
    return np.einsum("ijn,jkn->ikn", A, B)


def _antidiagonal(upper: NDArray, lower: NDArray) -> NDArray[np.complex128]:
    out = np.zeros((2, 2) + upper.shape, dtype=complex)
    out[0, 1] = upper
    out[1, 0] = lower
    return out


def _cosh_sinhc(z: NDArray) -> Tuple[NDArray, NDArray, NDArray]:
    """cosh(sqrt z), sinh(sqrt z)/sqrt z and the z-derivative of the latter."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < SERIES_SWITCH
    root = np.sqrt(np.where(small, 1.0, z))
    C = np.where(small, 1 + z / 2 + z ** 2 / 24 + z ** 3 / 720, np.cosh(root))
    S = np.where(small, 1 + z / 6 + z ** 2 / 120 + z ** 3 / 5040, np.sinh(root) / root)
    safe = np.where(small, 1.0, z)
    dS = np.where(small, 1 / 6 + z / 60 + z ** 2 / 1680, (C - S) / (2 * safe))
    return C, S, dS


@dataclass
class HarrisLutzQ:
    """
    Q(x, lambda, mu) = [[0, Q12], [Q21, 0]] with Q21 = Q21_I + Q21_II.

    Q12 solves Q12' = -s p+^2 - (2ik/a) Q12 and decays; Q21 solves
    Q21' = s p-^2 + (2ik/a) Q21 with the integration constants anchored at
    the real point mu, so that Q21_I is a finite-interval integral that
    vanishes for lambda = mu.
    """

    bloch: BlochData
    anchor: BlochData
    wvn: WvNTerm
    c1: Optional[float] = None

    def __post_init__(self):
        self._b = self.bloch.tables.b
        self._b_hat = self.bloch.tables.b_hat
        self._same_point = self.bloch.lam == self.anchor.lam

    @property
    def lam(self) -> complex:
        return self.bloch.lam

    @property
    def mu(self) -> float:
        return self.anchor.lam.real

    @property
    def _scale(self) -> complex:
        return self.wvn.c / self.bloch.wronskian

    def _harmonic_sum(self, table: FourierTable, shift: complex, x: NDArray, kernel) -> NDArray[np.complex128]:
        """sum_n f_n/(2i) [e^{i delta} e^{i(2w + 2 pi n/a) x} K(2w + 2 pi n/a + shift)
        - e^{-i delta} e^{i(-2w + 2 pi n/a) x} K(-2w + 2 pi n/a + shift)]."""
        n, coef = table.modes()
        a, w, delta = self.bloch.period, self.wvn.omega, self.wvn.delta
        total = np.zeros(x.shape, dtype=complex)
        for nn, f in zip(n, coef):
            base = 2.0 * math.pi * nn / a
            up = np.exp(1j * delta) * np.exp(1j * (2 * w + base) * x) * kernel(2 * w + base + shift, x, self.wvn.gamma)
            down = np.exp(-1j * delta) * np.exp(1j * (-2 * w + base) * x) * kernel(-2 * w + base + shift, x, self.wvn.gamma)
            total += f / 2j * (up - down)
        return total

    def _drift(self, x: NDArray) -> NDArray[np.complex128]:
        a = self.bloch.period
        return np.exp(2j * (self.bloch.k - self.anchor.k) * x / a)

    def q12(self, x: ArrayLike) -> NDArray[np.complex128]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.wvn.active:
            return np.zeros(x.shape, dtype=complex)
        shift = 2.0 * self.bloch.k / self.bloch.period
        return self._scale * self._harmonic_sum(self._b, shift, x, mode_tail)

    def q21_ii(self, x: ArrayLike) -> NDArray[np.complex128]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.wvn.active:
            return np.zeros(x.shape, dtype=complex)
        shift = -2.0 * self.anchor.k.real / self.bloch.period
        return -self._scale * self._drift(x) * self._harmonic_sum(self._b_hat, shift, x, mode_tail)

    def q21_i(self, x: ArrayLike) -> NDArray[np.complex128]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.wvn.active or self._same_point:
            return np.zeros(x.shape, dtype=complex)
        a = self.bloch.period
        own = self._harmonic_sum(self._b_hat, -2.0 * self.bloch.k / a, x, oscillatory_beginning)
        anchored = self._harmonic_sum(self._b_hat, -2.0 * self.anchor.k.real / a, x, oscillatory_beginning)
        return self._scale * (own - self._drift(x) * anchored)

    def q21(self, x: ArrayLike) -> NDArray[np.complex128]:
        return self.q21_i(x) + self.q21_ii(x)

    def entries(self, x: ArrayLike) -> Tuple[NDArray, NDArray]:
        return self.q12(x), self.q21(x)

    def matrix(self, x: ArrayLike) -> NDArray[np.complex128]:
        """Q(x), shape (2, 2, n)."""
        return _antidiagonal(*self.entries(x))

    def _derivative_entries(self, x: NDArray, q12: NDArray, q21: NDArray) -> Tuple[NDArray, NDArray]:
        s = self.wvn.coupling(x, self.bloch.wronskian)
        twist = 2j * self.bloch.k / self.bloch.period
        d12 = -s * self.bloch.p_plus(x) ** 2 - twist * q12
        d21 = s * self.bloch.p_minus(x) ** 2 + twist * q21
        return d12, d21

    def derivative(self, x: ArrayLike) -> NDArray[np.complex128]:
        """Q'(x) from the defining equation, shape (2, 2, n)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        q12, q21 = self.entries(x)
        return _antidiagonal(*self._derivative_entries(x, q12, q21))

    @staticmethod
    def _exp_from(q12: NDArray, q21: NDArray, sign: int) -> NDArray[np.complex128]:
        C, S, _ = _cosh_sinhc(q12 * q21)
        out = _antidiagonal(sign * S * q12, sign * S * q21)
        out[0, 0] = C
        out[1, 1] = C
        return out

    def _exp_derivative_from(self, x: NDArray, q12: NDArray, q21: NDArray) -> NDArray[np.complex128]:
        d12, d21 = self._derivative_entries(x, q12, q21)
        z = q12 * q21
        dz = d12 * q21 + q12 * d21
        _, S, dS = _cosh_sinhc(z)
        out = _antidiagonal(dS * dz * q12 + S * d12, dS * dz * q21 + S * d21)
        out[0, 0] = S / 2 * dz
        out[1, 1] = S / 2 * dz
        return out

    def exp(self, x: ArrayLike, sign: int = 1) -> NDArray[np.complex128]:
        """e^{sign Q(x)} = cosh(sqrt z) I + sign sinh(sqrt z)/sqrt z Q, z = Q12 Q21."""
        return self._exp_from(*self.entries(x), sign)

    def transforms(self, x: ArrayLike, derivative: str = "exact") -> Tuple[NDArray, NDArray, NDArray]:
        """(e^Q, e^{-Q}, (e^Q)') at x from one evaluation of Q."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        q12, q21 = self.entries(x)
        E, E_inv = self._exp_from(q12, q21, +1), self._exp_from(q12, q21, -1)
        dE = self._exp_derivative_from(x, q12, q21) if derivative == "exact" else self.exp_derivative(x, derivative)
        return E, E_inv, dE

    def exp_derivative(self, x: ArrayLike, method: str = "exact") -> NDArray[np.complex128]:
        """
        (e^Q)'(x).

        Args:
            x: Points.
            method: "exact" uses (e^Q)' = (S/2) z' I + S_z z' Q + S Q';
                "fd" takes central differences of e^Q with h = 1e-4 (x + 1).
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if method == "fd":
            h = 1e-4 * (x + 1.0)
            lo = np.maximum(x - h, 0.0)
            hi = lo + 2.0 * h
            return (self.exp(hi) - self.exp(lo)) / (hi - lo)
        if method != "exact":
            raise InvalidArgumentError(f"unknown derivative method {method!r}")
        return self._exp_derivative_from(x, *self.entries(x))

    def norm(self, x: ArrayLike) -> NDArray[np.float64]:
        q12, q21 = self.entries(x)
        return np.maximum(np.abs(q12), np.abs(q21))

    def estimate_c1(self, x: ArrayLike) -> float:
        """max over the samples of max(||Q||, ||Q'||) (x+1)^gamma."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        dQ = self.derivative(x)
        size = np.maximum(self.norm(x), np.maximum(np.abs(dQ[0, 1]), np.abs(dQ[1, 0])))
        self.c1 = float(np.max(size * (x + 1.0) ** self.wvn.gamma))
        return self.c1


def build_Q(
    bloch: BlochData,
    anchor: Optional[BlochData],
    wvn: WvNTerm,
    beta: float = 1.0,
    strict: bool = True,
) -> HarrisLutzQ:
    """
    Harris-Lutz transform at lambda anchored at the real band point mu.

    Args:
        bloch: Bloch data at lambda.
        anchor: Bloch data at mu (real, in a band). None means mu = lambda.
        wvn: WvN term.
        beta: Aperture of U(beta, mu).
        strict: Raise on neighbourhood violations instead of logging them.

    Returns:
        HarrisLutzQ: Lazily evaluated Q with exact derivative and exponential.

    Raises:
        FrequencyConditionError: 2 a omega / pi is an integer.
        ResonanceProximityError: epsilon(mu) vanishes.
        NeighbourhoodError: lambda is outside U(beta, mu).
    """
    anchor = anchor if anchor is not None else bloch
    if anchor.lam.imag != 0 or anchor.k.imag != 0:
        raise InvalidArgumentError(f"anchor mu must be a real band point, got {anchor.lam}")
    a = bloch.period
    if wvn.active:
        check = validate_frequency(a, wvn.omega)
        if not check.passed:
            raise FrequencyConditionError(f"2 a omega / pi = {check.value:.12g} is an integer")
        epsilon_gap(anchor.lam.real, anchor.k.real, a, wvn.omega)
        membership = in_neighbourhood(bloch.k, anchor.k.real, a, wvn.omega, beta)
        if not membership.inside:
            failed = [name for name, ok in membership.conditions.items() if not ok]
            message = f"lambda={bloch.lam} outside U({beta}, {anchor.lam.real:.10g}): {', '.join(failed)}"
            if strict:
                raise NeighbourhoodError(message)
            logger.warning(f"⚠️ {message}")
    return HarrisLutzQ(bloch=bloch, anchor=anchor, wvn=wvn)


def verify_Q_equation(Q: HarrisLutzQ, xs: ArrayLike) -> float:
    """
    max_x || Q'(x) + [Q(x), D] - RHS(x) || with Q' from finite differences.

    RHS = [[0, -s p+^2], [s p-^2, 0]]; central differences with step
    1e-4 (x+1), one-sided three-point near x = 0.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if not Q.wvn.active:
        return 0.0
    h = 1e-4 * (xs + 1.0)
    central = xs >= h
    d12 = np.empty(xs.shape, dtype=complex)
    d21 = np.empty(xs.shape, dtype=complex)
    if central.any():
        x, hh = xs[central], h[central]
        up12, up21 = Q.entries(x + hh)
        dn12, dn21 = Q.entries(x - hh)
        d12[central] = (up12 - dn12) / (2 * hh)
        d21[central] = (up21 - dn21) / (2 * hh)
    if (~central).any():
        x, hh = xs[~central], h[~central]
        f0 = Q.entries(x)
        f1 = Q.entries(x + hh)
        f2 = Q.entries(x + 2 * hh)
        d12[~central] = (-3 * f0[0] + 4 * f1[0] - f2[0]) / (2 * hh)
        d21[~central] = (-3 * f0[1] + 4 * f1[1] - f2[1]) / (2 * hh)

    q12, q21 = Q.entries(xs)
    s = Q.wvn.coupling(xs, Q.bloch.wronskian)
    twist = 2j * Q.bloch.k / Q.bloch.period
    res12 = d12 + twist * q12 + s * Q.bloch.p_plus(xs) ** 2
    res21 = d21 - twist * q21 - s * Q.bloch.p_minus(xs) ** 2
    residual = float(np.max(np.maximum(np.abs(res12), np.abs(res21))))
    logger.debug(f"Q-equation residual {residual:.2e} over {xs.size} samples")
    return residual


def fit_decay_slope(x: ArrayLike, values: ArrayLike, bins: int = 12) -> float:
    """Log-log slope of the envelope (per-bin maxima on a log-spaced partition) of |values|."""
    x = np.asarray(x, dtype=float)
    values = np.abs(np.asarray(values))
    edges = np.geomspace(x.min() + 1.0, x.max() + 1.0, bins + 1)
    centres, peaks = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (x + 1.0 >= lo) & (x + 1.0 <= hi)
        if mask.any():
            centres.append(math.sqrt(lo * hi))
            peaks.append(values[mask].max())
    slope, _ = np.polyfit(np.log(centres), np.log(peaks), 1)
    return float(slope)


@dataclass(frozen=True)
class Q1Check:
    numeric: float
    declared: float
    passed: bool


def check_q1_l1(q1: PotentialEvaluator, horizon: float = 1e4) -> Q1Check:
    """int_0^inf |q1| (quadrature to ``horizon`` plus the analytic tail) against the declared bound."""
    declared = q1.l1_bound
    if declared is None:
        raise InvalidArgumentError(f"{type(q1).__name__} declares no L1 bound")
    if isinstance(q1, ZeroPotential):
        return Q1Check(0.0, 0.0, True)
    points = [p for p in q1.breakpoints_between(0.0, horizon)]
    numeric, _ = quad(lambda t: abs(q1.scalar(t)), 0.0, horizon, points=points or None, limit=500)
    numeric += q1.tail_l1(horizon)
    return Q1Check(numeric=numeric, declared=declared, passed=numeric <= declared * (1.0 + 1e-6) + 1e-12)


class LevinsonSystem:
    """
    v~' = (diag(nu, -nu) + R2) v~ after the Harris-Lutz step.

    nu(x) = -ik/a - s(x) p+(x) p-(x); R2 is assembled exactly from e^{+-Q},
    the exact (e^Q)' and the q1 contribution R1 = (q1/W) P.
    """

    def __init__(self, spec: OperatorSpec, bloch: BlochData, Q: HarrisLutzQ, derivative: str = "exact"):
        self.spec = spec
        self.bloch = bloch
        self.Q = Q
        self.derivative = derivative
        self._tilde = bloch.tables.b_tilde if spec.wvn.active else None
        self._norm_cache: Dict[Tuple[float, float], RemainderIntegral] = {}

    @property
    def a(self) -> float:
        return self.bloch.period

    @property
    def wronskian(self) -> complex:
        return self.bloch.wronskian

    def coupling(self, x: NDArray) -> NDArray[np.complex128]:
        return self.spec.wvn.coupling(x, self.wronskian)

    def bloch_matrix(self, x: ArrayLike) -> NDArray[np.complex128]:
        """P(x) = [[-p+ p-, -p+^2], [p-^2, p+ p-]], shape (2, 2, n)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        pp, pm = self.bloch.p_plus(x), self.bloch.p_minus(x)
        return np.array([[-pp * pm, -pp ** 2], [pm ** 2, pp * pm]])

    def nu(self, x: ArrayLike) -> NDArray[np.complex128]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        base = -1j * self.bloch.k / self.a
        if not self.spec.wvn.active:
            return np.full(x.shape, base, dtype=complex)
        return base - self.coupling(x) * self.bloch.p_plus(x) * self.bloch.p_minus(x)

    def tail_of_coupling(self, x: ArrayLike) -> NDArray[np.complex128]:
        """G(x) = int_x^inf s p+ p- dt."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.spec.wvn.active:
            return np.zeros(x.shape, dtype=complex)
        return self.Q._scale * self.Q._harmonic_sum(self._tilde, 0.0, x, mode_tail)

    def phase_integral(self, x: ArrayLike) -> NDArray[np.complex128]:
        """int_0^x nu = -ikx/a - (G(0) - G(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        base = -1j * self.bloch.k * x / self.a
        if not self.spec.wvn.active:
            return base
        return base - (self.tail_of_coupling(np.zeros(1))[0] - self.tail_of_coupling(x))

    def r1(self, x: ArrayLike) -> NDArray[np.complex128]:
        """R1 = (q1/W) P."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.spec.q1(x) / self.wronskian * self.bloch_matrix(x)

    def remainder(self, x: ArrayLike) -> NDArray[np.complex128]:
        """R2(x), shape (2, 2, n)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        P = self.bloch_matrix(x)
        weight = self.coupling(x) if self.spec.wvn.active else np.zeros(x.shape)
        weight = weight + self.spec.q1(x) / self.wronskian
        D = np.zeros((2, 2) + x.shape, dtype=complex)
        D[0, 0] = -1j * self.bloch.k / self.a
        D[1, 1] = 1j * self.bloch.k / self.a
        generator = D + weight * P
        if not self.spec.wvn.active:
            return generator - D
        E, E_inv, dE = self.Q.transforms(x, self.derivative)
        s = self.coupling(x)
        diagonal = np.zeros_like(D)
        diagonal[0, 0] = D[0, 0] + s * P[0, 0]
        diagonal[1, 1] = D[1, 1] + s * P[1, 1]
        return _matmul(E_inv, _matmul(generator, E) - dE) - diagonal

    def conjugation_residual(self, x: ArrayLike) -> float:
        """max(|R21 - conj R12|, |R22 - conj R11|) for lambda = mu real."""
        R = self.remainder(x)
        return float(max(np.max(np.abs(R[1, 0] - np.conj(R[0, 1]))), np.max(np.abs(R[1, 1] - np.conj(R[0, 0])))))

    def remainder_l1(self, horizon: float = 1e4, step: Optional[float] = None) -> RemainderIntegral:
        """
        int_0^inf ||R2|| by the trapezoid rule on [0, horizon] plus a tail bound.

        The tail is C / ((2 gamma - 1)(X + 1)^{2 gamma - 1}) with C fitted on
        [X/2, X], plus max||P|| / |W| times the q1 tail.
        """
        step = step or self.a / 16.0
        key = (float(horizon), float(step))
        if key in self._norm_cache:
            return self._norm_cache[key]
        gamma = self.spec.wvn.gamma

        def tail(grid: NDArray, norms: NDArray) -> float:
            X = grid[-1]
            late = grid >= X / 2
            rate = 2.0 * gamma if self.spec.wvn.active else 2.0
            C = float(np.max(norms[late] * (grid[late] + 1.0) ** rate))
            value = C / ((rate - 1.0) * (X + 1.0) ** (rate - 1.0)) if self.spec.wvn.active else 0.0
            if not isinstance(self.spec.q1, ZeroPotential):
                p_norm = float(np.max(np.abs(self.bloch_matrix(grid[late][:: max(1, late.sum() // 64)]))))
                value += 2.0 * p_norm / abs(self.wronskian) * self.spec.q1.tail_l1(X)
            return value

        result = integrate_norm(self.remainder, horizon, step, tail=tail,
                                breakpoints=self.spec.q1.breakpoints_between(0.0, horizon))
        self._norm_cache[key] = result
        logger.debug(f"int ||R2|| = {result.total:.4e} (tail {result.tail:.2e}) at lambda={self.bloch.lam}")
        return result

    def as_diagonal_system(self, horizon: float = 1e4, step: Optional[float] = None) -> DiagonalSystem:
        """The bridge to the generic Levinson machinery."""
        norm = self.remainder_l1(horizon, step)
        return DiagonalSystem.estimate(
            phase=self.nu,
            remainder=self.remainder,
            horizon=horizon,
            step=step or self.a / 16.0,
            remainder_l1=norm.total,
            phase_integral=self.phase_integral,
        )


def build_levinson_system(spec: OperatorSpec, bloch: BlochData, Q: HarrisLutzQ, derivative: str = "exact") -> LevinsonSystem:
    """
    Assemble nu and R2 at lambda.

    Args:
        spec: Operator.
        bloch: Bloch data at lambda (the same that built ``Q``).
        Q: Harris-Lutz transform.
        derivative: "exact" or "fd" for (e^Q)'.

    Returns:
        LevinsonSystem: Evaluators for nu, R1, R2 and their integrals.
    """
    if Q.bloch is not bloch and Q.bloch.lam != bloch.lam:
        raise InvalidArgumentError("Q was built at a different spectral point")
    return LevinsonSystem(spec, bloch, Q, derivative)
