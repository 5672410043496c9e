"""
Verification suites.

Each suite checks the invariants of one solver module against the
configured operator and returns report rows

    {"suite", "check", "passed", "measured", "threshold"}.

A check that raises is reported as failed with measured = inf; the other
checks still run.
"""

import math
from typing import Callable, Dict, List, Optional, Sequence

import mpmath
import numpy as np

from wt_density.solvers.levinson import (
    DEFAULT_HORIZONS,
    ELLIPTIC,
    DiagonalSystem,
    asymptotic_coefficient,
    direct_solution,
    solve_with_bound,
)
from wt_density.solvers.ode_engine import ToleranceSpec, integrate_schrodinger
from wt_density.solvers.periodic import (
    BandStructure,
    bands_covering,
    bloch_at,
    hill_matrix_edges,
    monodromy,
)
from wt_density.solvers.potentials import LinearPotential, TrigonometricPotential, ZeroPotential
from wt_density.solvers.reduction import (
    OperatorSpec,
    build_levinson_system,
    build_Q,
    critical_points,
    epsilon_gap,
    fit_decay_slope,
    validate_frequency,
    verify_Q_equation,
)
from wt_density.solvers.spectral import (
    SpectralSettings,
    evaluate_point,
    weyl_m_oracle,
)
from wt_density.utils.config import RunConfig
from wt_density.utils.debugging import setup_logging
from wt_density.utils.errors import WTDensityError

logger = setup_logging()

Row = Dict[str, object]


def _row(suite: str, check: str, measured: float, threshold: float, passed: Optional[bool] = None) -> Row:
    measured = float(measured)
    if passed is None:
        passed = bool(np.isfinite(measured) and measured <= threshold)
    return {"suite": suite, "check": check, "passed": bool(passed), "measured": measured, "threshold": float(threshold)}


def _guarded(rows: List[Row], suite: str, check: str, threshold: float, measure: Callable[[], float]) -> None:
    try:
        rows.append(_row(suite, check, measure(), threshold))
    except WTDensityError as exc:
        logger.warning(f"⚠️ {suite}/{check} raised {type(exc).__name__}: {exc}")
        rows.append(_row(suite, check, math.inf, threshold, passed=False))


def free_density(lam: float, alpha: float) -> float:
    """rho' of the free half-line operator: k / (pi (k^2 sin^2 alpha + cos^2 alpha)), k = sqrt(lambda)."""
    k = math.sqrt(lam)
    return k / (math.pi * (k * k * math.sin(alpha) ** 2 + math.cos(alpha) ** 2))


def sample_band_points(spec: OperatorSpec, bands: BandStructure, samples: int, min_epsilon: float = 1e-2,
                       margin: float = 0.05) -> List[float]:
    """
    Up to ``samples`` interior points spread over the first two bands,
    keeping epsilon(lambda) >= ``min_epsilon`` when the WvN term is active.
    """
    candidates: List[float] = []
    n_bands = min(2, bands.n_bands)
    per_band = 4 * samples
    for n in range(n_bands):
        lo, hi = bands.band(n)
        candidates.extend(np.linspace(lo + margin * (hi - lo), hi - margin * (hi - lo), per_band))
    if spec.wvn.active:
        kept = []
        for lam in candidates:
            k = bloch_at(spec.periodic, lam, bands=bands).k.real
            if epsilon_gap(lam, k, spec.a, spec.wvn.omega, strict=False).epsilon >= min_epsilon:
                kept.append(lam)
        candidates = kept
    if len(candidates) <= samples:
        return [float(x) for x in candidates]
    idx = np.linspace(0, len(candidates) - 1, samples).round().astype(int)
    return [float(candidates[i]) for i in idx]


def ode_suite(config: RunConfig, band_point: float) -> List[Row]:
    """Wronskian conservation on the configured operator at a band point plus closed-form and Airy oracles."""
    spec = config.operator
    tol = config.numerics.tolerance
    rows: List[Row] = []

    def conservation() -> float:
        lam = band_point
        y0 = np.array([[math.sin(spec.alpha), math.cos(spec.alpha)], [math.cos(spec.alpha), -math.sin(spec.alpha)]])
        end = integrate_schrodinger(spec.potential, lam, y0, 0.0, 50.0 * spec.a, tol).endpoint
        return abs(np.linalg.det(end) + 1.0)

    def free_closed_form() -> float:
        lam = 2.0 + 0.5j
        k = np.sqrt(lam)
        end = integrate_schrodinger(ZeroPotential(), lam, [0.0, 1.0], 0.0, 10.0, tol).endpoint
        return abs(end[0] - np.sin(k * 10.0) / k) / abs(np.sin(k * 10.0) / k)

    def airy() -> float:
        x = 5.0
        start = [float(mpmath.airyai(x)), float(mpmath.airyai(x, derivative=1))]
        end = integrate_schrodinger(LinearPotential(slope=1.0), 0.0, start, x, 0.0, tol).endpoint
        return abs(end[0].real - float(mpmath.airyai(0))) / float(mpmath.airyai(0))

    _guarded(rows, "ode", "wronskian_conservation", 1e-8, conservation)
    _guarded(rows, "ode", "free_closed_form", 1e-8, free_closed_form)
    _guarded(rows, "ode", "airy_backward", 1e-8, airy)
    return rows


def periodic_suite(config: RunConfig, bands: BandStructure, points: List[float]) -> List[Row]:
    """Monodromy determinant, edge oracle, Bloch quasi-periodicity, conjugation and Wronskian sign."""
    spec = config.operator
    P = spec.periodic
    rows: List[Row] = []

    _guarded(rows, "periodic", "monodromy_det", 1e-10,
             lambda: max(monodromy(P, lam).det_residual for lam in points + [points[0] + 0.5j]))

    if isinstance(P.q, (TrigonometricPotential, ZeroPotential)):
        def edge_oracle() -> float:
            if isinstance(P.q, ZeroPotential):
                reference = (np.arange(0, 2 * bands.n_bands + 2) * math.pi / P.a) ** 2
            else:
                reference = np.sort(hill_matrix_edges(P))
            edges = np.asarray(bands.edges[: 2 * bands.n_bands])
            return float(max(np.min(np.abs(reference - e)) for e in edges))

        _guarded(rows, "periodic", "edge_oracle", 1e-6, edge_oracle)

    blochs = []
    for lam in points:
        try:
            blochs.append(bloch_at(P, lam, bands=bands))
        except WTDensityError as exc:
            logger.warning(f"⚠️ no Bloch pair at {lam:.10g}: {exc}")
    if not blochs:
        rows.append(_row("periodic", "bloch_pairs", math.inf, 0.0, passed=False))
        return rows
    xs = np.linspace(0.0, 3.0 * P.a, 37)
    _guarded(rows, "periodic", "quasiperiodicity", 1e-8,
             lambda: max(b.quasiperiodicity_residual(xs) / max(1.0, float(np.max(np.abs(b.psi_plus(xs)[0]))))
                         for b in blochs))
    _guarded(rows, "periodic", "bloch_conjugation", 1e-8, lambda: max(b.conjugation_residual(xs) for b in blochs))
    rows.append(_row("periodic", "wronskian_in_iR+", -min(b.wronskian.imag for b in blochs), 0.0,
                     passed=all(b.wronskian.imag > 0 for b in blochs)))
    return rows


def reduction_suite(config: RunConfig, bands: BandStructure, points: List[float]) -> List[Row]:
    """Frequency condition, critical points and the Harris-Lutz checks (WvN term only)."""
    spec = config.operator
    rows: List[Row] = []
    if not spec.wvn.active:
        return rows
    check = validate_frequency(spec.a, spec.wvn.omega)
    rows.append(_row("reduction", "frequency_condition", check.distance, 1e-9, passed=check.passed))
    if not check.passed:
        return rows

    _guarded(rows, "reduction", "critical_point_k_residual", 1e-8,
             lambda: max(p.k_residual for p in critical_points(spec.periodic, bands, spec.wvn.omega).points))

    for lam in points[:3]:
        try:
            bloch = bloch_at(spec.periodic, lam, bands=bands)
            Q = build_Q(bloch, None, spec.wvn)
            levinson = build_levinson_system(spec, bloch, Q)
        except WTDensityError as exc:
            logger.warning(f"⚠️ no Harris-Lutz transform at {lam:.10g}: {exc}")
            rows.append(_row("reduction", f"Q_build@{lam:.6g}", math.inf, 0.0, passed=False))
            continue
        label = f"@{lam:.6g}"
        _guarded(rows, "reduction", f"Q_equation{label}", 1e-5,
                 lambda: verify_Q_equation(Q, np.linspace(0.0, 50.0, 50)) / max(1.0, float(np.max(Q.norm(np.linspace(0.0, 50.0, 50))))))

        def slope() -> float:
            xs = np.geomspace(10.0, 1e3, 2000)
            return fit_decay_slope(xs, Q.norm(xs)) + spec.wvn.gamma

        _guarded(rows, "reduction", f"Q_decay_slope+gamma{label}", 0.05, slope)
        _guarded(rows, "reduction", f"R2_conjugation{label}", 1e-6,
                 lambda: levinson.conjugation_residual(np.linspace(0.0, 50.0, 101)))
    return rows


def _random_system(rng: np.random.Generator) -> DiagonalSystem:
    B = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    B /= np.linalg.norm(B, 2)
    kappa = rng.uniform(0.5, 2.0)
    freq = rng.uniform(0.0, 3.0)

    def remainder(x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(x)
        return 0.1 * B[:, :, None] * np.exp(1j * freq * x) / (1.0 + x) ** 1.5

    return DiagonalSystem(
        phase=lambda x: np.full(np.shape(np.atleast_1d(x)), 1j * kappa),
        remainder=remainder,
        remainder_l1=0.2,
        M=0.0,
        phase_integral=lambda x: 1j * kappa * np.atleast_1d(x),
    )


def levinson_suite(config: RunConfig, seed: Optional[int], n_systems: int, direct_horizon: float = 1e4) -> List[Row]:
    """
    Seeded random summable remainders: the limit over the dyadic horizons
    against direct integration to ``direct_horizon``, and the growth bound.
    """
    rng = np.random.default_rng(seed)
    worst_gap, worst_ratio = 0.0, 0.0
    tol = ToleranceSpec(rtol=1e-10, atol=1e-12)
    rows: List[Row] = []
    try:
        for _ in range(n_systems):
            system = _random_system(rng)
            u0 = rng.normal(size=2) + 1j * rng.normal(size=2)
            limit = asymptotic_coefficient(system, u0, ELLIPTIC, horizons=DEFAULT_HORIZONS, tol=1e-6,
                                           ode_tol=tol, strict=False).limit
            end = direct_solution(system, u0, direct_horizon, tol).endpoint
            direct = np.array([np.exp(-end[2]) * end[0], np.exp(end[2]) * end[1]])
            worst_gap = max(worst_gap, float(np.linalg.norm(limit - direct) / np.linalg.norm(direct)))
            worst_ratio = max(worst_ratio, solve_with_bound(system, u0, direct_horizon, tol, strict=False).max_ratio)
    except WTDensityError as exc:
        logger.warning(f"⚠️ levinson suite raised {type(exc).__name__}: {exc}")
        return [_row("levinson", "limit_vs_direct", math.inf, 1e-3, passed=False)]
    rows.append(_row("levinson", "limit_vs_direct", worst_gap, 1e-3))
    rows.append(_row("levinson", "growth_bound_ratio", worst_ratio, 1.0 + 1e-9))
    return rows


ORACLE_OFFSETS = (1e-2, 1e-3, 1e-4)


def oracle_density(spec: OperatorSpec, bands: BandStructure, lam: float,
                   offsets: Sequence[float] = ORACLE_OFFSETS) -> float:
    """Im m(lambda + i eps) / pi over ``offsets``, linearly extrapolated to eps = 0."""
    values = [weyl_m_oracle(spec, lam + 1j * eps, bands, anchor=lam).imag / math.pi for eps in offsets]
    return float(np.polyfit(offsets, values, 1)[1])


def spectral_suite(config: RunConfig, bands: BandStructure, points: List[float]) -> List[Row]:
    """Wronskian identity, positivity, m-residual, residual trend, gauge invariance and oracles."""
    spec = config.operator
    settings: SpectralSettings = config.numerics.spectral_settings()
    rows: List[Row] = []
    records = [evaluate_point(spec, bands, lam, settings) for lam in points]
    good = [r for r in records if r.ok]
    rows.append(_row("spectral", "points_evaluated", len(records) - len(good), 0.0))
    if not good:
        return rows

    rows.append(_row("spectral", "wronskian_identity", max(r.wronskian_residual for r in good), 1e-5))
    rows.append(_row("spectral", "density_positive", -min(r.rho for r in good), 0.0,
                     passed=all(r.rho > 0 for r in good)))
    rows.append(_row("spectral", "m_residual", max(r.m_residual for r in good), 1e-3))
    rows.append(_row("spectral", "window_residual_trend", sum(not r.residual_trend_ok for r in good), 0.0))

    reference = good[0]
    _guarded(rows, "spectral", "gauge_invariance", 1e-8,
             lambda: abs(evaluate_point(spec, bands, reference.lam, settings, gauge=0.7).rho - reference.rho)
             / reference.rho)

    if spec.unperturbed and isinstance(spec.periodic.q, ZeroPotential):
        rows.append(_row("spectral", "free_closed_form",
                         max(abs(r.rho - free_density(r.lam, spec.alpha)) / free_density(r.lam, spec.alpha)
                             for r in good), 1e-6))
    else:
        def m_oracle() -> float:
            return abs(oracle_density(spec, bands, reference.lam) - reference.rho) / reference.rho

        _guarded(rows, "spectral", "m_oracle", 1e-3, m_oracle)
    return rows


def run_verification(run_config: RunConfig, seed: Optional[int] = None) -> List[Row]:
    """
    Run every suite against the configured operator.

    Args:
        run_config: Validated run configuration; ``verify.samples`` sets the
            number of band points and random systems.
        seed: Seed of the randomized Levinson suite.

    Returns:
        List[Row]: One row per check, suites in module order.
    """
    spec = run_config.operator
    samples = run_config.verify.samples
    bands = bands_covering(spec.periodic, -np.inf, run_config.numerics.lambda_max)
    points = sample_band_points(spec, bands, samples)
    if not points:
        logger.error("no admissible band points to verify on")
        return [_row("spectral", "band_points", math.inf, 0.0, passed=False)]
    logger.info(f"Verifying on {len(points)} band points (seed={seed})")

    rows: List[Row] = []
    for name, suite in (
        ("ode", lambda: ode_suite(run_config, points[0])),
        ("periodic", lambda: periodic_suite(run_config, bands, points)),
        ("reduction", lambda: reduction_suite(run_config, bands, points)),
        ("levinson", lambda: levinson_suite(run_config, seed, samples)),
        ("spectral", lambda: spectral_suite(run_config, bands, points)),
    ):
        suite_rows = suite()
        failed = sum(1 for r in suite_rows if not r["passed"])
        marker = "✅" if not failed else "❌"
        logger.info(f"{marker} {name}: {len(suite_rows) - failed}/{len(suite_rows)} checks passed")
        rows.extend(suite_rows)
    return rows


REPORT_COLUMNS = ["suite", "check", "passed", "measured", "threshold"]
