#!/usr/bin/env python
"""
Tests for the spectral layer: the free half-line closed forms, the
coefficient identities, the m-function oracle, scans and refinement.
"""

import math
import os
import sys

import numpy as np
import pytest

# Add the repository root to the path so we can import the wt_density modules
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from wt_density.solvers.ode_engine import ToleranceSpec
from wt_density.solvers.periodic import PeriodicPotential, bands_covering, bloch_at
from wt_density.solvers.potentials import TrigonometricPotential, ZeroPotential
from wt_density.solvers.reduction import (
    CriticalPoint,
    OperatorSpec,
    ResonanceSet,
    WvNTerm,
    build_levinson_system,
    build_Q,
)
from wt_density.solvers.spectral import (
    DensityRecord,
    SpectralSettings,
    density_scan,
    dip_report,
    evaluate_point,
    extract_A_upper,
    flag_subordinate,
    levinson_integral_coefficient,
    m_residual,
    refine_grid,
    refinement_points,
    solve_phi,
    spectral_density,
    weyl_m,
    weyl_m_oracle,
    wronskian_identity,
)
from wt_density.utils.errors import ConvergenceError, DegenerateCoefficientError, InvalidArgumentError
from wt_density.workflows.verifier import free_density, sample_band_points

FREE_CELL = PeriodicPotential(a=1.0, q=ZeroPotential())
FREE = OperatorSpec(periodic=FREE_CELL, wvn=WvNTerm(c=0.0, omega=0.3))
FREE_BANDS = bands_covering(FREE_CELL, 25.0, 30.0)

MATHIEU = PeriodicPotential(a=math.pi, q=TrigonometricPotential(cell_length=math.pi, cos=(2.0,)))
MATHIEU_WVN = OperatorSpec(periodic=MATHIEU, wvn=WvNTerm(c=1.0, omega=0.8, gamma=0.9))
MATHIEU_PLAIN = OperatorSpec(periodic=MATHIEU, wvn=WvNTerm(c=0.0, omega=0.8, gamma=0.9))


def test_free_dirichlet_at_one():
    record = evaluate_point(FREE, FREE_BANDS, 1.0)
    assert record.ok, record.reason
    assert abs(record.A - 0.5j) <= 1e-8
    assert abs(record.A_shifted - 0.5) <= 1e-8
    assert abs(record.m - 1j) <= 1e-8
    assert abs(record.rho - 1.0 / math.pi) <= 1e-8
    assert abs(record.diagnostics["wronskian"] - 2j) <= 1e-10


def test_free_density_closed_form():
    for lam in (1.0, 4.5, 12.0):
        dirichlet = evaluate_point(FREE, FREE_BANDS, lam)
        assert dirichlet.ok, dirichlet.reason
        assert abs(dirichlet.rho - math.sqrt(lam) / math.pi) <= 1e-6
        assert dirichlet.wronskian_residual <= 1e-8
        assert dirichlet.m_residual <= 1e-6

        neumann = evaluate_point(FREE.with_alpha(math.pi / 2), FREE_BANDS, lam)
        assert neumann.ok, neumann.reason
        assert abs(neumann.rho - 1.0 / (math.pi * math.sqrt(lam))) <= 1e-6
        assert abs(neumann.rho - free_density(lam, math.pi / 2)) <= 1e-6


def test_free_density_mixed_boundary_angle():
    spec = FREE.with_alpha(0.4)
    record = evaluate_point(spec, FREE_BANDS, 4.5)
    assert record.ok, record.reason
    assert abs(record.rho - free_density(4.5, 0.4)) <= 1e-6 * free_density(4.5, 0.4)


def test_coefficient_formulas():
    assert abs(weyl_m(0.5j, 0.5) - 1j) <= 1e-15
    assert abs(spectral_density(0.5j, 2j) - 1.0 / math.pi) <= 1e-15
    assert wronskian_identity(0.5j, 0.5, 2j) <= 1e-15
    assert m_residual(1j * math.pi, 1.0) <= 1e-15
    with pytest.raises(DegenerateCoefficientError):
        weyl_m(0.0, 0.5)
    with pytest.raises(DegenerateCoefficientError):
        spectral_density(0.0, 2j)


def test_points_outside_or_near_edges_carry_reason():
    outside = evaluate_point(FREE, FREE_BANDS, -1.0)
    assert not outside.ok and "outside" in outside.reason
    near_edge = evaluate_point(FREE, FREE_BANDS, 1e-3)
    assert not near_edge.ok and "band edge" in near_edge.reason
    assert math.isnan(near_edge.rho)
    assert near_edge.as_row()["reason"] == near_edge.reason


def test_m_oracle_free_closed_form():
    for lam in (1.0 + 0.5j, 4.0 + 0.1j):
        m = weyl_m_oracle(FREE, lam, FREE_BANDS)
        assert abs(m - 1j * np.sqrt(lam)) <= 1e-7 * abs(np.sqrt(lam))
    with pytest.raises(InvalidArgumentError):
        weyl_m_oracle(FREE, 1.0, FREE_BANDS)


def test_density_scan_sorted():
    records = density_scan(FREE, FREE_BANDS, [4.5, 1.0, -2.0])
    assert [r.lam for r in records] == [-2.0, 1.0, 4.5]
    assert not records[0].ok
    assert all(r.ok for r in records[1:])


def test_perturbed_point_is_gauge_invariant():
    bands = bands_covering(MATHIEU, -np.inf, 12.0)
    lam = sample_band_points(MATHIEU_WVN, bands, 1)[0]
    settings = SpectralSettings(x_max_periods=500.0, start_periods=60.0)
    record = evaluate_point(MATHIEU_WVN, bands, lam, settings)
    assert record.ok, record.reason
    assert record.rho > 0
    assert record.wronskian_residual <= 1e-5
    rotated = evaluate_point(MATHIEU_WVN, bands, lam, settings, gauge=0.7)
    assert abs(rotated.rho - record.rho) <= 1e-8 * record.rho


def test_solve_phi_free_boundary_angles():
    xs = np.linspace(0.0, 20.0, 41)
    tol = ToleranceSpec(rtol=1e-11, atol=1e-13)
    dirichlet = solve_phi(FREE, 1.0, 0.0, 20.0, tol)
    assert np.max(np.abs(dirichlet.phi(xs) - np.sin(xs))) <= 1e-8
    neumann = solve_phi(FREE, 1.0, math.pi / 2, 20.0, tol)
    assert np.max(np.abs(neumann.phi(xs) - np.cos(xs))) <= 1e-8


def test_transformed_solution_is_conjugate_pair_on_bands():
    tol = ToleranceSpec(rtol=1e-11, atol=1e-13)
    xs = np.linspace(0.0, 30.0, 61)
    free = solve_phi(FREE, 1.0, 0.0, 30.0, tol, bloch_at(FREE_CELL, 1.0, bands=FREE_BANDS))
    u = free.v_phi(xs)
    assert np.max(np.abs(u[1] - np.conj(u[0]))) <= 1e-8
    assert np.max(np.abs(u[0] - 0.5j)) <= 1e-8

    bands = bands_covering(MATHIEU, -np.inf, 12.0)
    lam = sample_band_points(MATHIEU_WVN, bands, 1)[0]
    perturbed = solve_phi(MATHIEU_WVN, lam, 0.3, 30.0, tol, bloch_at(MATHIEU, lam, bands=bands))
    u = perturbed.v_phi(xs)
    assert np.max(np.abs(u[1] - np.conj(u[0]))) <= 1e-8
    with pytest.raises(InvalidArgumentError):
        solve_phi(FREE, 1.0, 0.0, 5.0, tol).v_phi(xs)


def _upper(spec, bands, lam, anchor, settings, x_max=None):
    bloch = bloch_at(spec.periodic, lam, bands=bands)
    Q = build_Q(bloch, bloch_at(spec.periodic, anchor, bands=bands), spec.wvn, beta=settings.beta)
    levinson = build_levinson_system(spec, bloch, Q)
    sol = solve_phi(spec, lam, spec.alpha, x_max or settings.x_max_periods * spec.a, settings.tol, bloch)
    return sol, Q, levinson


def test_upper_coefficient_free_closed_form():
    lam = 1.0 + 0.1j
    settings = SpectralSettings()
    sol, Q, levinson = _upper(FREE, FREE_BANDS, lam, 1.0, settings, x_max=16.0)
    result = extract_A_upper(sol, FREE, Q, levinson, settings)
    assert result.regime == "hyperbolic"
    assert result.converged
    assert abs(result.value - 0.5j / np.sqrt(lam)) <= 1e-8
    assert result.cross_check_ok
    assert result.cross_check_gap <= 1e-8
    assert abs(result.cross_check - result.value) <= 1e-8

    with pytest.raises(InvalidArgumentError):
        extract_A_upper(solve_phi(FREE, 1.0, 0.0, 16.0, settings.tol), FREE)


def test_upper_limit_matches_integral_formula():
    bands = bands_covering(MATHIEU, -np.inf, 12.0)
    mu = sample_band_points(MATHIEU_WVN, bands, 8, min_epsilon=0.2)[0]
    settings = SpectralSettings(x_max_periods=500.0, start_periods=60.0)
    for spec in (MATHIEU_WVN, MATHIEU_PLAIN):
        sol, Q, levinson = _upper(spec, bands, mu + 0.01j, mu, settings)
        result = extract_A_upper(sol, spec, Q, levinson, settings)
        assert result.converged and result.cross_check_ok
        assert result.cross_check_gap <= settings.stabilization_tol

        # one finite integral-formula mean per recorded window
        raw = levinson_integral_coefficient(sol, levinson, result.windows, settings)
        assert len(raw) == len(result.windows)
        assert all(np.isfinite(value) for value in raw)
    # without WvN term the remainder vanishes and the formula is u_1(0)
    assert result.cross_check_gap <= 1e-7


def test_upper_cross_check_flags_mismatched_solution():
    lam = 1.0 + 0.1j
    shifted = OperatorSpec(periodic=PeriodicPotential(a=1.0, q=TrigonometricPotential(cell_length=1.0, constant=0.3)),
                           wvn=WvNTerm(c=0.0, omega=0.3))
    settings = SpectralSettings()
    _, Q, levinson = _upper(FREE, FREE_BANDS, lam, 1.0, settings, x_max=16.0)
    wrong = solve_phi(shifted, lam, 0.0, 16.0, settings.tol, levinson.bloch)
    result = extract_A_upper(wrong, FREE, Q, levinson, settings)
    assert not result.cross_check_ok
    assert result.cross_check_gap > settings.stabilization_tol

    wrong = solve_phi(shifted, lam, 0.0, 16.0, settings.tol, levinson.bloch)
    with pytest.raises(ConvergenceError):
        extract_A_upper(wrong, FREE, Q, levinson, SpectralSettings(strict=True))


def test_upper_coefficient_independent_of_anchor():
    bands = bands_covering(MATHIEU, -np.inf, 12.0)
    mu = sample_band_points(MATHIEU_WVN, bands, 8, min_epsilon=0.2)[0]
    settings = SpectralSettings(x_max_periods=500.0, start_periods=60.0)
    values = []
    for anchor in (mu, mu + 0.005):
        sol, Q, levinson = _upper(MATHIEU_WVN, bands, mu + 0.01j, anchor, settings)
        values.append(extract_A_upper(sol, MATHIEU_WVN, Q, levinson, settings).value)
    assert abs(values[0] - values[1]) <= 1e-6


def test_band_and_upper_coefficients_agree():
    bands = bands_covering(MATHIEU, -np.inf, 12.0)
    mu = sample_band_points(MATHIEU_WVN, bands, 8, min_epsilon=0.2)[0]
    settings = SpectralSettings(x_max_periods=500.0, start_periods=60.0)
    band = evaluate_point(MATHIEU_WVN, bands, mu, settings)
    assert band.ok, band.reason

    offsets = np.array([1e-2, 1e-3, 1e-4])
    values = []
    for eps in offsets:
        sol, Q, levinson = _upper(MATHIEU_WVN, bands, mu + 1j * eps, mu, settings)
        values.append(extract_A_upper(sol, MATHIEU_WVN, Q, levinson, settings).value)
    values = np.array(values)
    limit = np.polyfit(offsets, values.real, 1)[1] + 1j * np.polyfit(offsets, values.imag, 1)[1]
    assert abs(limit - band.A) <= 1e-3


def test_window_residuals_decrease_over_doublings():
    bands = bands_covering(MATHIEU, -np.inf, 12.0)
    a = MATHIEU.a
    for lam in sample_band_points(MATHIEU_WVN, bands, 2):
        record = evaluate_point(MATHIEU_WVN, bands, lam)
        assert record.ok, record.reason
        assert record.diagnostics["windows"][:4] == pytest.approx([125 * a, 250 * a, 500 * a, 1000 * a])
        assert record.residual_trend_ok, record.diagnostics["window_residuals"]
        assert record.wronskian_residual <= 1e-5


def test_refinement_points_geometric():
    assert refinement_points(1.0, 0.1, 3, 0.0, 2.0) == pytest.approx([0.9, 0.95, 0.975, 1.025, 1.05, 1.1])
    assert refinement_points(0.05, 0.1, 2, 0.0, 2.0) == pytest.approx([0.1, 0.15])


def test_refine_grid_adds_points_near_critical_values():
    resonances = ResonanceSet(
        omega=0.3,
        fraction=0.3 / math.pi,
        points=(CriticalPoint(band=0, sign="+", lam=(math.pi - 0.3) ** 2, target_k=math.pi - 0.3, k_residual=0.0),),
    )
    grid = list(np.linspace(1.0, 9.0, 5))
    refined = refine_grid(grid, resonances, FREE_BANDS, 0.1, 2)
    centre = (math.pi - 0.3) ** 2
    assert set(grid) <= set(refined)
    assert len(refined) == len(grid) + 4
    assert min(abs(x - centre) for x in refined) == pytest.approx(0.05)
    assert refine_grid(grid, None, FREE_BANDS, 0.1, 2) == sorted(grid)


def test_dip_report():
    lams = [0.8, 0.9, 1.0, 1.1, 1.2]
    rhos = [1.0, 0.9, 0.2, 0.9, 1.1]
    records = [DensityRecord(lam=lam, A=1.0 + 0j, rho=rho) for lam, rho in zip(lams, rhos)]
    records.append(DensityRecord(lam=1.05, reason="failed"))
    report = dip_report(records, 1.0)
    assert report.lam_min == 1.0
    assert report.nearest_left == 0.9 and report.nearest_right == 1.1
    assert report.depth == pytest.approx(0.2 / 1.05)
    narrow = dip_report(records, 1.0, radius=0.15)
    assert narrow.depth == pytest.approx(0.2 / 0.9)
    with pytest.raises(InvalidArgumentError):
        dip_report(records[:3], 1.0)


def test_flag_subordinate():
    records = [DensityRecord(lam=float(i), A=complex(a)) for i, a in enumerate([1.0, 0.8, 1.2, 1e-8])]
    records.append(DensityRecord(lam=9.0, A=0j, reason="outside the spectrum"))
    flagged = flag_subordinate(records)
    assert [r.subordinate for r in flagged] == [False, False, False, True, False]


def main():
    """Run all spectral tests."""
    tests = [
        test_free_dirichlet_at_one,
        test_free_density_closed_form,
        test_free_density_mixed_boundary_angle,
        test_coefficient_formulas,
        test_points_outside_or_near_edges_carry_reason,
        test_m_oracle_free_closed_form,
        test_density_scan_sorted,
        test_perturbed_point_is_gauge_invariant,
        test_solve_phi_free_boundary_angles,
        test_transformed_solution_is_conjugate_pair_on_bands,
        test_upper_coefficient_free_closed_form,
        test_upper_limit_matches_integral_formula,
        test_upper_cross_check_flags_mismatched_solution,
        test_upper_coefficient_independent_of_anchor,
        test_band_and_upper_coefficients_agree,
        test_window_residuals_decrease_over_doublings,
        test_refinement_points_geometric,
        test_refine_grid_adds_points_near_critical_values,
        test_dip_report,
        test_flag_subordinate,
    ]
    failed = 0
    for test in tests:
        try:
            test()
            print(f"✅ {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"❌ {test.__name__}: {e}")
    print(f"\n{len(tests) - failed} of {len(tests)} tests passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
