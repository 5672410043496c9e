"""
Asymptotic coefficient, Weyl function and spectral density.

phi_alpha solves the full equation with phi(0) = sin(alpha), phi'(0) = cos(alpha),
theta_alpha = phi_{alpha + pi/2}. In the Bloch basis

    u(x) = Psi(x)^{-1} (phi, phi')(x),   Psi = [[psi_-, psi_+], [psi_-', psi_+']],

so u_1 = (psi_+' phi - psi_+ phi') / W and u_2 = (phi' psi_- - phi psi_-') / W.
The coefficient A_alpha(lambda) is lim u_1(x): on bands
phi = A psi_- + conj(A) psi_+ + o(1), in the upper half-plane
phi = A psi_- + o(e^{Im k x/a}). From it

    m_alpha = -A_{alpha+pi/2} / A_alpha,       rho'_alpha = 1 / (2 pi |W| |A_alpha|^2).

With the WvN term present the limit is read through the Harris-Lutz
corrected estimator

    A(x) = [(e^{-Q})_11 u_1 + (e^{-Q})_12 e^{2ikx/a} u_2] e^{-G(x)},   G(x) = int_x^inf s p+ p-,

whose remaining drift is the O(x^{1 - 2 gamma}) tail of the summable
remainder; a Richardson step over the doubling schedule removes it.
Off the real axis the limit is checked against the Levinson integral
formula read on the same windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from wt_density.solvers.levinson import ELLIPTIC, HYPERBOLIC, companion_integral
from wt_density.solvers.ode_engine import ToleranceSpec, Trajectory, integrate_schrodinger
from wt_density.solvers.periodic import BandStructure, BlochData, bloch_at
from wt_density.solvers.reduction import (
    HarrisLutzQ,
    LevinsonSystem,
    OperatorSpec,
    ResonanceSet,
    build_levinson_system,
    build_Q,
    epsilon_gap,
)
from wt_density.utils.debugging import setup_logging
from wt_density.utils.errors import (
    ConvergenceError,
    DegenerateCoefficientError,
    InvalidArgumentError,
    WTDensityError,
)

logger = setup_logging()

SUBORDINATE_RATIO = 1e-6

CSV_COLUMNS = ["lambda", "A_re", "A_im", "m_re", "m_im", "rho", "wronskian_residual", "m_residual", "reason"]


@dataclass(frozen=True)
class SpectralSettings:
    """
    Numerical knobs of the coefficient extraction.

    Attributes:
        tol: Error control of the long-range integrations.
        x_max_periods: Integration horizon in periods.
        window_periods: Length of the averaging window in periods.
        samples_per_period: Window sampling density.
        start_periods: First window start X of the doubling schedule.
        stabilization_tol: Relative Cauchy tolerance between successive estimates.
        max_extensions: How often x_max may be doubled when estimates keep moving.
        richardson: Remove the O(X^{1 - 2 gamma}) drift by extrapolation.
        margin_epsilon: Smallest admissible epsilon(lambda).
        margin_edge: Smallest admissible edge distance, in bandwidths.
        beta: Aperture of U(beta, mu).
        fourier_cutoff: Initial cutoff of the Bloch Fourier tables.
        strict: Raise ConvergenceError instead of warning.
    """

    tol: ToleranceSpec = ToleranceSpec(rtol=1e-10, atol=1e-12)
    x_max_periods: float = 2000.0
    window_periods: float = 10.0
    samples_per_period: int = 32
    start_periods: float = 125.0
    stabilization_tol: float = 1e-5
    max_extensions: int = 2
    richardson: bool = True
    margin_epsilon: float = 1e-3
    margin_edge: float = 1e-3
    beta: float = 1.0
    fourier_cutoff: int = 64
    strict: bool = False


@dataclass
class CauchySolution:
    """phi_alpha(., lambda) with its Bloch-basis coefficients."""

    alpha: float
    lam: complex
    trajectory: Trajectory = field(repr=False)
    column: Optional[int] = 0
    bloch: Optional[BlochData] = field(default=None, repr=False)

    @property
    def x_max(self) -> float:
        return self.trajectory.x_end

    def state(self, x: ArrayLike) -> NDArray[np.complex128]:
        """(phi, phi') at x, shape (2,) or (2, n)."""
        values = self.trajectory(x)
        return values if self.column is None else values[:, self.column]

    def phi(self, x: ArrayLike) -> NDArray[np.complex128]:
        return self.state(x)[0]

    def v_phi(self, x: ArrayLike) -> NDArray[np.complex128]:
        """Bloch-basis coefficients u(x) = Psi^{-1} (phi, phi'), shape (2,) or (2, n)."""
        if self.bloch is None:
            raise InvalidArgumentError("Bloch data required for the transformed solution")
        b = self.bloch
        st = self.state(x)
        plus, minus = b.psi_plus(x), b.psi_minus(x)
        u1 = (plus[1] * st[0] - plus[0] * st[1]) / b.wronskian
        u2 = (st[1] * minus[0] - st[0] * minus[1]) / b.wronskian
        return np.array([u1, u2])

    def extend(self, spec: OperatorSpec, x_max: float, tol: ToleranceSpec) -> None:
        """Continue the trajectory to ``x_max``."""
        if x_max <= self.x_max:
            return
        start = self.trajectory.endpoint
        more = integrate_schrodinger(spec.potential, self.lam, start, self.x_max, x_max, tol)
        self.trajectory = self.trajectory.extend(more)


def solve_cauchy_pair(
    spec: OperatorSpec,
    lam: complex,
    alpha: float,
    x_max: float,
    tol: ToleranceSpec,
    bloch: Optional[BlochData] = None,
) -> Tuple[CauchySolution, CauchySolution]:
    """
    phi_alpha and theta_alpha = phi_{alpha + pi/2} from one integration.

    Returns:
        (phi_alpha, theta_alpha) sharing one trajectory.
    """
    y0 = np.array([[math.sin(alpha), math.cos(alpha)], [math.cos(alpha), -math.sin(alpha)]], dtype=complex)
    trajectory = integrate_schrodinger(spec.potential, lam, y0, 0.0, x_max, tol)
    logger.debug(f"Cauchy pair at lambda={lam} to x={x_max:.4g} in {trajectory.n_steps} steps")
    return (
        CauchySolution(alpha=alpha, lam=complex(lam), trajectory=trajectory, column=0, bloch=bloch),
        CauchySolution(alpha=(alpha + math.pi / 2) % math.pi, lam=complex(lam), trajectory=trajectory,
                       column=1, bloch=bloch),
    )


def solve_phi(
    spec: OperatorSpec,
    lam: complex,
    alpha: float,
    x_max: float,
    tol: ToleranceSpec,
    bloch: Optional[BlochData] = None,
) -> CauchySolution:
    """phi_alpha alone (first member of the Cauchy pair)."""
    y0 = np.array([math.sin(alpha), math.cos(alpha)], dtype=complex)
    trajectory = integrate_schrodinger(spec.potential, lam, y0, 0.0, x_max, tol)
    return CauchySolution(alpha=alpha, lam=complex(lam), trajectory=trajectory, column=None, bloch=bloch)


class CoefficientEstimator:
    """A(x) for a given Cauchy solution; plain u_1 when Q is absent."""

    def __init__(self, bloch: BlochData, Q: Optional[HarrisLutzQ] = None, levinson: Optional[LevinsonSystem] = None):
        self.bloch = bloch
        self.Q = Q if Q is not None and Q.wvn.active else None
        if self.Q is not None and levinson is None:
            raise InvalidArgumentError("the corrected estimator needs the Levinson system for G(x)")
        self.levinson = levinson

    def __call__(self, sol: CauchySolution, x: ArrayLike) -> NDArray[np.complex128]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = sol.v_phi(x)
        if self.Q is None:
            return u[0]
        E_inv = self.Q.exp(x, -1)
        twist = np.exp(2j * self.bloch.k * x / self.bloch.period)
        return (E_inv[0, 0] * u[0] + E_inv[0, 1] * twist * u[1]) * np.exp(-self.levinson.tail_of_coupling(x))


@dataclass
class AsymptoticCoefficient:
    """A_alpha(lambda) with the extraction history."""

    lam: complex
    alpha: float
    value: complex
    regime: str
    windows: List[float]
    estimates: List[complex]
    residuals: List[float] = field(default_factory=list)
    converged: bool = True
    cross_check: Optional[complex] = None
    cross_check_gap: float = float("nan")
    cross_check_ok: bool = True
    residual_floor: float = 0.0

    @property
    def residual_trend_ok(self) -> bool:
        """r(X) non-increasing, up to ``residual_floor`` (integration noise)."""
        r = self.residuals
        return all(b <= a * (1.0 + 1e-9) + self.residual_floor for a, b in zip(r[:-1], r[1:]))


def _hann_mean(values: NDArray, n: int) -> complex:
    weights = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / (n - 1)))
    return complex(np.sum(weights * values) / np.sum(weights))


def _schedule(spec: OperatorSpec, settings: SpectralSettings, x_max: float) -> List[float]:
    a = spec.a
    start = 2.0 * a if spec.unperturbed else settings.start_periods * a
    window = settings.window_periods * a
    schedule = []
    X = start
    while X + window <= x_max * (1 + 1e-12):
        schedule.append(X)
        X *= 2.0
    if len(schedule) < 2:
        raise InvalidArgumentError(
            f"x_max={x_max:.4g} leaves fewer than two windows (start {start:.4g}, window {window:.4g})"
        )
    return schedule


def _richardson(estimates: List[complex], power: float) -> List[complex]:
    factor = 2.0 ** power
    return [(factor * b - a) / (factor - 1.0) for a, b in zip(estimates[:-1], estimates[1:])]


def _drift_corrected(raw: List[complex], spec: OperatorSpec, settings: SpectralSettings) -> List[complex]:
    if settings.richardson and spec.wvn.active and len(raw) >= 2:
        return _richardson(raw, 2.0 * spec.wvn.gamma - 1.0)
    return list(raw)


def _extract(
    sol: CauchySolution,
    spec: OperatorSpec,
    estimator: CoefficientEstimator,
    settings: SpectralSettings,
    regime: str,
) -> AsymptoticCoefficient:
    a = spec.a
    window = settings.window_periods * a
    n = int(settings.window_periods * settings.samples_per_period) + 1

    windows: List[float] = []
    raw: List[complex] = []
    extensions = 0
    while True:
        for X in _schedule(spec, settings, sol.x_max):
            if X in windows:
                continue
            xs = X + np.linspace(0.0, window, n)
            raw.append(_hann_mean(estimator(sol, xs), n))
            windows.append(X)
        estimates = _drift_corrected(raw, spec, settings)
        if len(estimates) >= 2:
            diff = abs(estimates[-1] - estimates[-2])
            scale = max(abs(estimates[-1]), 1e-300)
            if diff <= settings.stabilization_tol * scale:
                converged = True
                break
        if extensions >= settings.max_extensions:
            converged = False
            break
        sol.extend(spec, 2.0 * sol.x_max, settings.tol)
        extensions += 1
        logger.info(f"extended horizon to x={sol.x_max:.4g} at lambda={sol.lam}")

    value = estimates[-1]
    result = AsymptoticCoefficient(lam=sol.lam, alpha=sol.alpha, value=complex(value), regime=regime,
                                   windows=windows, estimates=[complex(e) for e in estimates], converged=converged)
    if not converged:
        message = (f"window means at lambda={sol.lam} not settled: last change "
                   f"{abs(estimates[-1] - estimates[-2]) / max(abs(value), 1e-300):.2e}")
        if settings.strict:
            raise ConvergenceError(message)
        logger.warning(f"⚠️ {message}")
    return result


def window_residuals(sol: CauchySolution, A: complex, windows: Sequence[float], settings: SpectralSettings,
                     a: float) -> List[float]:
    """r(X) = sup over [X, X + window] of |phi - (A psi_- + conj(A) psi_+)|."""
    n = int(settings.window_periods * settings.samples_per_period) + 1
    out = []
    for X in windows:
        xs = X + np.linspace(0.0, settings.window_periods * a, n)
        model = A * sol.bloch.psi_minus(xs)[0] + np.conj(A) * sol.bloch.psi_plus(xs)[0]
        out.append(float(np.max(np.abs(sol.phi(xs) - model))))
    return out


def extract_A_band(
    sol: CauchySolution,
    spec: OperatorSpec,
    Q: Optional[HarrisLutzQ] = None,
    levinson: Optional[LevinsonSystem] = None,
    settings: SpectralSettings = SpectralSettings(),
) -> AsymptoticCoefficient:
    """
    A_alpha(lambda) on a band from tail-window means over a doubling schedule.

    Args:
        sol: Cauchy solution carrying Bloch data at the real band point lambda.
        spec: Operator.
        Q: Harris-Lutz transform at lambda (anchored at lambda); None without WvN term.
        levinson: Levinson system built from ``Q`` (supplies G).
        settings: Extraction knobs.

    Returns:
        AsymptoticCoefficient: The value, the per-window estimates and the
        window residuals r(X) measured with the final A.
    """
    if sol.bloch is None or not sol.bloch.real_band:
        raise InvalidArgumentError(f"extract_A_band needs a real band point, got lambda={sol.lam}")
    result = _extract(sol, spec, CoefficientEstimator(sol.bloch, Q, levinson), settings, ELLIPTIC)
    result.residual_floor = 1e3 * settings.tol.rtol * max(1.0, abs(result.value))
    result.residuals = window_residuals(sol, result.value, result.windows, settings, spec.a)
    if not result.residual_trend_ok:
        logger.warning(f"⚠️ window residual r(X) not decreasing at lambda={sol.lam.real:.10g}: "
                       + ", ".join(f"{r:.2e}" for r in result.residuals))
    return result


def levinson_integral_coefficient(
    sol: CauchySolution,
    levinson: LevinsonSystem,
    windows: Sequence[float],
    settings: SpectralSettings = SpectralSettings(),
    step: Optional[float] = None,
) -> List[complex]:
    """
    Window means of the integral formula for A(lambda, mu),

        e^{-G(0)} [ v~_1(0) + int_0^x e^{-int nu} (R2 v~)_1 dt ],   v~ = e^{-Q} (e^{-ikx/a} u_1, e^{ikx/a} u_2),

    Hann-averaged over [X, X + window] for every X in ``windows``; the
    cumulative integral comes from companion quadrature along ``sol``.

    Args:
        sol: Cauchy solution with Bloch data at lambda.
        levinson: Levinson system at lambda.
        windows: Window starts, as recorded by the limit extraction.
        settings: Window length and sampling.
        step: Quadrature spacing; default a / 128.

    Returns:
        One raw (not extrapolated) estimate per window.
    """
    b = levinson.bloch
    a = b.period
    window = settings.window_periods * a
    n = int(settings.window_periods * settings.samples_per_period) + 1

    def tilde(grid: NDArray) -> NDArray:
        u = sol.v_phi(grid)
        v = np.array([np.exp(-1j * b.k * grid / a) * u[0], np.exp(1j * b.k * grid / a) * u[1]])
        return np.einsum("ijn,jn->in", levinson.Q.exp(grid, -1), v)

    horizon = max(windows) + window
    if sol.x_max < horizon * (1 - 1e-12):
        raise InvalidArgumentError(f"solution ends at x={sol.x_max:.4g}, the windows need {horizon:.4g}")
    system = levinson.as_diagonal_system(horizon=horizon, step=a / 16.0)
    companion = companion_integral(system, tilde(np.zeros(1))[:, 0], tilde, horizon, step or a / 128.0)
    scale = np.exp(-levinson.tail_of_coupling(np.zeros(1))[0])
    return [complex(scale * _hann_mean(companion(X + np.linspace(0.0, window, n))[0], n)) for X in windows]


def extract_A_upper(
    sol: CauchySolution,
    spec: OperatorSpec,
    Q: Optional[HarrisLutzQ] = None,
    levinson: Optional[LevinsonSystem] = None,
    settings: SpectralSettings = SpectralSettings(),
) -> AsymptoticCoefficient:
    """
    A_alpha(lambda) for Im lambda > 0 as the limit of the corrected estimator.

    When ``levinson`` is given (with or without WvN term) the integral
    formula is evaluated over the same windows, with the same Richardson
    step, and must agree with the limit to ``settings.stabilization_tol``.

    Raises:
        ConvergenceError: Limit and integral formula disagree and ``settings.strict``.
    """
    if sol.lam.imag <= 0:
        raise InvalidArgumentError(f"extract_A_upper needs Im lambda > 0, got {sol.lam}")
    if sol.bloch is None:
        raise InvalidArgumentError("Bloch data required")
    result = _extract(sol, spec, CoefficientEstimator(sol.bloch, Q, levinson), settings, HYPERBOLIC)
    if levinson is None:
        return result

    raw = levinson_integral_coefficient(sol, levinson, result.windows, settings)
    estimates = _drift_corrected(raw, spec, settings)
    result.cross_check = estimates[-1]
    result.cross_check_gap = abs(result.cross_check - result.value) / max(abs(result.value), 1e-300)
    if result.cross_check_gap > settings.stabilization_tol:
        result.cross_check_ok = False
        message = (f"limit {result.value:.10g} and integral formula {result.cross_check:.10g} at "
                   f"lambda={sol.lam} differ by {result.cross_check_gap:.2e} > {settings.stabilization_tol:g}")
        if settings.strict:
            raise ConvergenceError(message)
        logger.warning(f"⚠️ {message}")
    else:
        logger.debug(f"limit vs integral formula at lambda={sol.lam}: relative gap {result.cross_check_gap:.2e}")
    return result


def weyl_m(A_alpha: complex, A_shifted: complex) -> complex:
    """m_alpha = -A_{alpha + pi/2} / A_alpha."""
    if abs(A_alpha) < 1e-300 or not np.isfinite(A_alpha):
        raise DegenerateCoefficientError(f"A_alpha = {A_alpha} vanishes: possible embedded eigenvalue")
    return complex(-A_shifted / A_alpha)


def spectral_density(A_alpha: complex, wronskian: complex) -> float:
    """rho'_alpha = 1 / (2 pi |W| |A_alpha|^2)."""
    denominator = 2.0 * math.pi * abs(wronskian) * abs(A_alpha) ** 2
    if denominator == 0.0 or not math.isfinite(denominator):
        raise DegenerateCoefficientError(f"zero denominator in the density formula (|A|={abs(A_alpha)}, |W|={abs(wronskian)})")
    return 1.0 / denominator


def wronskian_identity(A_alpha: complex, A_shifted: complex, wronskian: complex) -> float:
    """|(conj(A_alpha) A_{alpha+pi/2} - A_alpha conj(A_{alpha+pi/2})) W - 1|."""
    return abs((np.conj(A_alpha) * A_shifted - A_alpha * np.conj(A_shifted)) * wronskian - 1.0)


def m_residual(m: complex, rho: float) -> float:
    """|Im m / pi - rho'| / rho'."""
    return abs(m.imag / math.pi - rho) / rho


def _start_data(bloch: BlochData, Q: Optional[HarrisLutzQ], X: float, start: str) -> NDArray[np.complex128]:
    plus, minus = bloch.psi_plus(X), bloch.psi_minus(X)
    if start == "bloch" or Q is None:
        return plus
    E = Q.exp(np.array([X]), +1)[:, :, 0]
    phase = np.exp(1j * bloch.k * X / bloch.period)
    return minus * phase * E[0, 1] + plus / phase * E[1, 1]


def weyl_m_oracle(
    spec: OperatorSpec,
    lam: complex,
    bands: Optional[BandStructure] = None,
    x_max: Optional[float] = None,
    tol: ToleranceSpec = ToleranceSpec(rtol=1e-11, atol=1e-13),
    start: str = "harris-lutz",
    anchor: Optional[float] = None,
    beta: float = 1.0,
    horizon_tol: float = 1e-8,
    max_doublings: int = 6,
) -> complex:
    """
    m_alpha(lambda), Im lambda > 0, from the L2 solution integrated backwards.

    The solution decaying at infinity is started at X in the decaying Bloch
    direction (corrected by e^{Q(X)} with the "harris-lutz" start), integrated
    back to 0, and m is read from
    m = (f(0) sin a + f'(0) cos a) / (f(0) cos a - f'(0) sin a).
    X doubles until m settles.

    Args:
        spec: Operator.
        lam: Spectral parameter in the upper half-plane.
        bands: Band structure (branch of k).
        x_max: Initial horizon; default 10 decay lengths a / Im k, at least 8 periods.
        tol: Error control.
        start: "harris-lutz" or "bloch".
        anchor: Real band point mu for Q; default Re lambda.
        beta: Aperture of U(beta, mu).
        horizon_tol: Relative change of m between horizons that ends the doubling.
        max_doublings: Horizon doublings before giving up.

    Raises:
        ConvergenceError: m did not settle.
    """
    lam = complex(lam)
    if lam.imag <= 0:
        raise InvalidArgumentError(f"weyl_m_oracle needs Im lambda > 0, got {lam}")
    bloch = bloch_at(spec.periodic, lam, bands=bands)
    Q = None
    if spec.wvn.active and start == "harris-lutz":
        mu = anchor if anchor is not None else lam.real
        mu_bloch = bloch_at(spec.periodic, mu, bands=bands)
        Q = build_Q(bloch, mu_bloch, spec.wvn, beta=beta, strict=False)
    a = spec.a
    X = x_max or max(8.0 * a, 10.0 * a / bloch.k.imag)
    alpha = spec.alpha
    previous = None
    for _ in range(max_doublings + 1):
        f = integrate_schrodinger(spec.potential, lam, _start_data(bloch, Q, X, start), X, 0.0, tol).endpoint
        m = complex((f[0] * math.sin(alpha) + f[1] * math.cos(alpha)) / (f[0] * math.cos(alpha) - f[1] * math.sin(alpha)))
        if previous is not None and abs(m - previous) <= horizon_tol * abs(m):
            logger.debug(f"m oracle at lambda={lam}: {m:.10g} (X={X:.4g})")
            return m
        previous = m
        X *= 2.0
    raise ConvergenceError(f"m oracle at lambda={lam} did not settle up to X={X / 2:.4g}")


@dataclass
class DensityRecord:
    """Per-lambda result of the density evaluation."""

    lam: float
    A: complex = complex("nan")
    A_shifted: complex = complex("nan")
    m: complex = complex("nan")
    rho: float = float("nan")
    wronskian_residual: float = float("nan")
    m_residual: float = float("nan")
    reason: str = ""
    band: Optional[int] = None
    epsilon: float = float("nan")
    residual_trend_ok: bool = True
    subordinate: bool = False
    diagnostics: Dict[str, object] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.reason

    def as_row(self) -> Dict[str, object]:
        return {
            "lambda": self.lam,
            "A_re": self.A.real,
            "A_im": self.A.imag,
            "m_re": self.m.real,
            "m_im": self.m.imag,
            "rho": self.rho,
            "wronskian_residual": self.wronskian_residual,
            "m_residual": self.m_residual,
            "reason": self.reason,
        }


def point_margin_reason(
    lam: float,
    spec: OperatorSpec,
    bands: BandStructure,
    bloch: Optional[BlochData],
    settings: SpectralSettings,
) -> Tuple[str, float]:
    """Empty reason when lam is an admissible band point; also returns epsilon(lam) (nan when unused)."""
    n = bands.band_index(lam)
    if n is None:
        return "outside the spectrum", float("nan")
    if not bands.is_interior(lam, settings.margin_edge):
        return f"within {settings.margin_edge:g} bandwidths of a band edge", float("nan")
    if spec.wvn.active and bloch is not None:
        eps = epsilon_gap(lam, bloch.k.real, spec.a, spec.wvn.omega, strict=False).epsilon
        if eps < settings.margin_epsilon:
            return f"epsilon={eps:.2e} below margin {settings.margin_epsilon:g} (critical point)", eps
        return "", eps
    return "", float("nan")


def evaluate_point(
    spec: OperatorSpec,
    bands: BandStructure,
    lam: float,
    settings: SpectralSettings = SpectralSettings(),
    gauge: float = 0.0,
) -> DensityRecord:
    """
    Full pipeline at one real band point: Bloch pair, Q, Cauchy pair,
    both coefficients, m, rho' and the identity residuals.

    Numerical failures are caught and returned as the record's reason.
    """
    record = DensityRecord(lam=float(lam))
    try:
        record.band = bands.band_index(lam)
        bloch = None
        if record.band is not None and bands.is_interior(lam, settings.margin_edge):
            bloch = bloch_at(spec.periodic, lam, bands=bands, gauge=gauge, fourier_cutoff=settings.fourier_cutoff)
        reason, record.epsilon = point_margin_reason(lam, spec, bands, bloch, settings)
        if reason:
            record.reason = reason
            return record

        Q = levinson = None
        if spec.wvn.active:
            Q = build_Q(bloch, None, spec.wvn, beta=settings.beta)
            levinson = build_levinson_system(spec, bloch, Q)
        x_max = settings.x_max_periods * spec.a
        if spec.unperturbed:
            x_max = min(x_max, 4.0 * spec.a + settings.window_periods * spec.a)
        phi, theta = solve_cauchy_pair(spec, lam, spec.alpha, x_max, settings.tol, bloch)
        first = extract_A_band(phi, spec, Q, levinson, settings)
        second = extract_A_band(theta, spec, Q, levinson, settings)

        record.A, record.A_shifted = first.value, second.value
        record.m = weyl_m(first.value, second.value)
        record.rho = spectral_density(first.value, bloch.wronskian)
        record.wronskian_residual = wronskian_identity(first.value, second.value, bloch.wronskian)
        record.m_residual = m_residual(record.m, record.rho)
        record.residual_trend_ok = first.residual_trend_ok
        record.diagnostics = {
            "windows": first.windows,
            "window_residuals": first.residuals,
            "estimates": first.estimates,
            "converged": first.converged and second.converged,
            "k": bloch.k.real,
            "wronskian": bloch.wronskian,
        }
    except WTDensityError as exc:
        record.reason = f"{type(exc).__name__}: {exc}"
        logger.warning(f"⚠️ lambda={lam:.10g} failed: {record.reason}")
    return record


def flag_subordinate(records: Sequence[DensityRecord], ratio: float = SUBORDINATE_RATIO) -> List[DensityRecord]:
    """Mark records whose |A_alpha| falls below ratio * median as possible subordinate points."""
    sizes = [abs(r.A) for r in records if r.ok]
    if not sizes:
        return list(records)
    threshold = ratio * float(np.median(sizes))
    for r in records:
        if r.ok and abs(r.A) < threshold:
            r.subordinate = True
            logger.warning(f"⚠️ possible subordinate point at lambda={r.lam:.10g} (|A|={abs(r.A):.2e})")
    return list(records)


def density_scan(
    spec: OperatorSpec,
    bands: BandStructure,
    lams: Iterable[float],
    settings: SpectralSettings = SpectralSettings(),
    map_fn: Callable = map,
) -> List[DensityRecord]:
    """
    Evaluate every grid point; records come back sorted by lambda.

    Args:
        spec: Operator.
        bands: Band structure of the periodic part.
        lams: Grid.
        settings: Extraction knobs.
        map_fn: Mapping primitive (``map`` or an executor's ``map``).
    """
    lams = sorted(float(x) for x in lams)
    records = list(map_fn(_evaluate_packed, [(spec, bands, lam, settings) for lam in lams]))
    records.sort(key=lambda r: r.lam)
    return flag_subordinate(records)


def _evaluate_packed(args) -> DensityRecord:
    spec, bands, lam, settings = args
    return evaluate_point(spec, bands, lam, settings)


def refinement_points(centre: float, radius: float, levels: int, lo: float, hi: float) -> List[float]:
    """Geometric points centre +- radius 2^-j, j = 0..levels-1, clipped to (lo, hi)."""
    pts = []
    for j in range(levels):
        for sign in (-1.0, 1.0):
            x = centre + sign * radius * 2.0 ** (-j)
            if lo < x < hi:
                pts.append(x)
    return sorted(pts)


def refine_grid(
    lams: Sequence[float],
    resonances: Optional[ResonanceSet],
    bands: BandStructure,
    radius: float,
    levels: int,
) -> List[float]:
    """Add geometric refinement toward every critical point inside the scanned range."""
    if resonances is None or not lams:
        return sorted(set(lams))
    lo, hi = min(lams), max(lams)
    extra: List[float] = []
    for point in resonances.points:
        if lo <= point.lam <= hi:
            band_lo, band_hi = bands.band(point.band)
            extra.extend(refinement_points(point.lam, radius, levels, band_lo, band_hi))
    return sorted(set(float(x) for x in lams) | set(extra))


@dataclass(frozen=True)
class DipReport:
    centre: float
    nearest_left: Optional[float]
    nearest_right: Optional[float]
    rho_left: float
    rho_right: float
    rho_min: float
    lam_min: float
    depth: float


def dip_report(records: Sequence[DensityRecord], centre: float, radius: Optional[float] = None) -> DipReport:
    """
    Density near a critical point against its neighbours.

    ``depth`` = rho_min / mean(rho at the outermost points of the neighbourhood);
    values well below 1 indicate a dip.
    """
    good = sorted((r for r in records if r.ok), key=lambda r: r.lam)
    if radius is not None:
        good = [r for r in good if abs(r.lam - centre) <= radius]
    left = [r for r in good if r.lam < centre]
    right = [r for r in good if r.lam > centre]
    if not left or not right:
        raise InvalidArgumentError(f"need valid points on both sides of {centre:.10g}")
    lowest = min(good, key=lambda r: r.rho)
    outer = 0.5 * (left[0].rho + right[-1].rho)
    return DipReport(centre=centre, nearest_left=left[-1].lam, nearest_right=right[0].lam,
                     rho_left=left[-1].rho, rho_right=right[0].rho, rho_min=lowest.rho,
                     lam_min=lowest.lam, depth=lowest.rho / outer)
