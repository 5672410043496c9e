#!/usr/bin/env python
"""
Tests for the WvN reduction: frequency condition, critical points,
resonance gaps and the Harris-Lutz transform on a Mathieu background.
"""

import math
import os
import sys

import numpy as np
import pytest

# Add the repository root to the path so we can import the wt_density modules
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from wt_density.solvers.periodic import PeriodicPotential, band_edges, bands_covering, bloch_at
from wt_density.solvers.potentials import (
    CompactBumpPotential,
    PowerDecayPotential,
    TrigonometricPotential,
    ZeroPotential,
)
from wt_density.solvers.reduction import (
    OperatorSpec,
    WvNTerm,
    build_levinson_system,
    build_Q,
    check_q1_l1,
    critical_points,
    epsilon_gap,
    fit_decay_slope,
    in_neighbourhood,
    validate_frequency,
    verify_Q_equation,
)
from wt_density.utils.errors import (
    FrequencyConditionError,
    InvalidArgumentError,
    ResonanceProximityError,
)
from wt_density.workflows.verifier import sample_band_points

FREE = PeriodicPotential(a=1.0, q=ZeroPotential())
MATHIEU = PeriodicPotential(a=math.pi, q=TrigonometricPotential(cell_length=math.pi, cos=(2.0,)))
MATHIEU_WVN = OperatorSpec(periodic=MATHIEU, wvn=WvNTerm(c=1.0, omega=0.8, gamma=0.9))


def test_frequency_condition():
    assert not validate_frequency(1.0, math.pi / 2).passed
    assert not validate_frequency(math.pi, 1.0).passed
    check = validate_frequency(math.pi, 0.8)
    assert check.passed
    assert abs(check.value - 1.6) <= 1e-12
    assert abs(check.distance - 0.4) <= 1e-12
    with pytest.raises(InvalidArgumentError):
        validate_frequency(0.0, 0.8)


def test_wvn_gamma_range():
    with pytest.raises(InvalidArgumentError):
        WvNTerm(c=1.0, omega=0.8, gamma=0.3)
    with pytest.raises(InvalidArgumentError):
        WvNTerm(c=1.0, omega=0.8, gamma=1.2)
    assert not WvNTerm(c=0.0, omega=0.8).active


def test_free_critical_points():
    # k(lambda) = sqrt(lambda) on the free first band; a omega / pi = 0.3 / pi
    bands = band_edges(FREE, 45.0)
    resonances = critical_points(FREE, bands, 0.3)
    band0 = {p.sign: p for p in resonances.band_points(0)}
    assert abs(band0["-"].lam - 0.09) <= 1e-9
    assert abs(band0["+"].lam - (math.pi - 0.3) ** 2) <= 1e-8
    band1 = {p.sign: p for p in resonances.band_points(1)}
    assert abs(band1["-"].lam - (math.pi + 0.3) ** 2) <= 1e-8
    assert abs(band1["+"].lam - (2 * math.pi - 0.3) ** 2) <= 1e-8
    assert abs(resonances.fraction - 0.3 / math.pi) <= 1e-15
    assert resonances.nearest(0.1).lam == band0["-"].lam


def test_mathieu_critical_points_inside_bands():
    bands = band_edges(MATHIEU, 6.0)
    resonances = critical_points(MATHIEU, bands, 0.8)
    assert len(resonances.points) == 2 * bands.n_bands
    for p in resonances.points:
        lo, hi = bands.band(p.band)
        assert lo < p.lam < hi
        assert p.k_residual <= 1e-8
    with pytest.raises(FrequencyConditionError):
        critical_points(MATHIEU, bands, 1.0)


def test_epsilon_gap_and_resonance():
    # k = a omega exactly: the n = 0 term vanishes
    with pytest.raises(ResonanceProximityError):
        epsilon_gap(0.09, 0.3, 1.0, 0.3)
    lax = epsilon_gap(0.09, 0.3, 1.0, 0.3, strict=False)
    assert lax.epsilon <= 1e-12
    gap = epsilon_gap(1.0, 1.0, 1.0, 0.3)
    assert abs(gap.epsilon - 0.7) <= 1e-12


def test_neighbourhood_membership():
    inside = in_neighbourhood(1.0 + 0.01j, 1.0, 1.0, 0.3)
    assert inside.inside
    outside = in_neighbourhood(1.5 + 0.01j, 1.0, 1.0, 0.3)
    assert not outside.inside
    assert not outside.conditions["sector"]
    far = in_neighbourhood(1.0 + 2.0j, 1.0, 1.0, 0.3)
    assert not far.conditions["strip"]


def _mathieu_points():
    bands = bands_covering(MATHIEU, -np.inf, 12.0)
    return bands, sample_band_points(MATHIEU_WVN, bands, 2)


def test_q_solves_its_equation():
    bands, points = _mathieu_points()
    assert points
    xs = np.linspace(0.0, 50.0, 50)
    for lam in points:
        bloch = bloch_at(MATHIEU, lam, bands=bands)
        Q = build_Q(bloch, None, MATHIEU_WVN.wvn)
        scale = max(1.0, float(np.max(Q.norm(xs))))
        assert verify_Q_equation(Q, xs) / scale <= 1e-5


def test_q_decays_like_wvn_term():
    bands, points = _mathieu_points()
    bloch = bloch_at(MATHIEU, points[0], bands=bands)
    Q = build_Q(bloch, None, MATHIEU_WVN.wvn)
    xs = np.geomspace(10.0, 1e3, 2000)
    assert abs(fit_decay_slope(xs, Q.norm(xs)) + 0.9) <= 0.05


def test_fit_decay_slope_of_power_law():
    xs = np.geomspace(1.0, 1e4, 500)
    values = (xs + 1.0) ** -0.75 * (1.0 + 0.5 * np.sin(3.0 * xs))
    assert abs(fit_decay_slope(xs, values) + 0.75) <= 0.05


def test_levinson_remainder_is_conjugation_symmetric():
    bands, points = _mathieu_points()
    bloch = bloch_at(MATHIEU, points[-1], bands=bands)
    Q = build_Q(bloch, None, MATHIEU_WVN.wvn)
    system = build_levinson_system(MATHIEU_WVN, bloch, Q)
    assert system.conjugation_residual(np.linspace(0.0, 50.0, 101)) <= 1e-6
    assert abs(system.wronskian - bloch.wronskian) <= 1e-12 * abs(bloch.wronskian)


def test_inactive_wvn_term_gives_trivial_q():
    spec = OperatorSpec(periodic=MATHIEU, wvn=WvNTerm(c=0.0, omega=0.8))
    bands = band_edges(MATHIEU, 6.0)
    lo, hi = bands.band(0)
    Q = build_Q(bloch_at(MATHIEU, 0.5 * (lo + hi), bands=bands), None, spec.wvn)
    assert verify_Q_equation(Q, np.linspace(0.0, 10.0, 5)) == 0.0


def test_q1_l1_bounds():
    assert check_q1_l1(ZeroPotential()).passed
    power = check_q1_l1(PowerDecayPotential(amplitude=0.2, power=2.0))
    assert power.passed
    assert abs(power.numeric - 0.2) <= 1e-6
    bump = check_q1_l1(CompactBumpPotential(height=-1.5, start=1.0, end=3.0))
    assert bump.passed
    assert abs(bump.numeric - 3.0) <= 1e-8


def test_boundary_angle_range():
    with pytest.raises(InvalidArgumentError):
        OperatorSpec(periodic=FREE, wvn=WvNTerm(c=0.0, omega=0.3), alpha=math.pi)
    spec = OperatorSpec(periodic=FREE, wvn=WvNTerm(c=0.0, omega=0.3))
    assert spec.unperturbed
    assert abs(spec.with_alpha(math.pi + 0.5).alpha - 0.5) <= 1e-12


def main():
    """Run all reduction tests."""
    tests = [
        test_frequency_condition,
        test_wvn_gamma_range,
        test_free_critical_points,
        test_mathieu_critical_points_inside_bands,
        test_epsilon_gap_and_resonance,
        test_neighbourhood_membership,
        test_q_solves_its_equation,
        test_q_decays_like_wvn_term,
        test_fit_decay_slope_of_power_law,
        test_levinson_remainder_is_conjugation_symmetric,
        test_inactive_wvn_term_gives_trivial_q,
        test_q1_l1_bounds,
        test_boundary_angle_range,
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
