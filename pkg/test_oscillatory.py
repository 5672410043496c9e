#!/usr/bin/env python
"""
Tests for the oscillatory tail and beginning integrals against the
exponential integral and QUADPACK's Fourier-weighted quadrature.
"""

import math
import os
import sys

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import exp1

# Add the repository root to the path so we can import the wt_density modules
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from wt_density.solvers.oscillatory import (
    beginning_constant,
    mode_tail,
    oscillatory_beginning,
    oscillatory_tail,
    tail_bound,
)
from wt_density.solvers.periodic import fourier_table
from wt_density.utils.errors import InvalidArgumentError, NearResonantModeError


def _fourier_tail(eta: float, x: float, gamma: float) -> complex:
    """int_x^inf e^{i eta t} (t + 1)^-gamma dt by QAWF."""
    weight = lambda t: (t + 1.0) ** (-gamma)
    c = quad(weight, x, np.inf, weight="cos", wvar=eta, epsabs=1e-13, limlst=200)[0]
    s = quad(weight, x, np.inf, weight="sin", wvar=eta, epsabs=1e-13, limlst=200)[0]
    return complex(c, s)


def test_mode_tail_matches_exponential_integral():
    # gamma = 1: J(eta, x) = e^{-i eta (x+1)} E1(-i eta (x+1))
    for eta in (1.0, 0.3, 2.5 + 0.5j):
        for x in (0.0, 3.0, 40.0):
            z = -1j * eta * (x + 1.0)
            expected = np.exp(z) * exp1(z)
            assert abs(mode_tail(eta, x, 1.0) - expected) <= 1e-9 * max(1.0, abs(expected))


def test_mode_tail_decaying_frequency():
    # eta = i: int_0^inf e^{-t} / (t + 1) dt = e E1(1)
    assert abs(mode_tail(1j, 0.0, 1.0) - math.e * exp1(1.0)) <= 1e-10
    assert abs(mode_tail(1j, 0.0, 1.0) - 0.596347362323194) <= 1e-10


def test_mode_tail_against_qawf():
    gamma = 0.9
    for eta in (0.7, 2.0):
        for x in (0.0, 3.0, 25.0):
            expected = np.exp(-1j * eta * x) * _fourier_tail(eta, x, gamma)
            assert abs(mode_tail(eta, x, gamma) - expected) <= 1e-7 * abs(expected)


def test_mode_tail_vectorized():
    xs = np.array([0.0, 0.5, 10.0, 200.0])
    values = mode_tail(1.3, xs, 0.75)
    assert values.shape == xs.shape
    for x, v in zip(xs, values):
        assert abs(v - mode_tail(1.3, float(x), 0.75)) <= 1e-10


def test_beginning_integral():
    gamma, eta, x = 0.8, 1.7, 6.0
    weight = lambda t: (t + 1.0) ** (-gamma)
    c = quad(weight, 0.0, x, weight="cos", wvar=eta, epsabs=1e-14)[0]
    s = quad(weight, 0.0, x, weight="sin", wvar=eta, epsabs=1e-14)[0]
    expected = np.exp(-1j * eta * x) * complex(c, s)
    assert abs(oscillatory_beginning(eta, x, gamma) - expected) <= 1e-9

    # decaying direction, forward recurrence
    eta_c = 1.0 - 0.4j
    re = quad(lambda t: (np.exp(1j * eta_c * (t - x)) * weight(t)).real, 0.0, x, epsabs=1e-14)[0]
    im = quad(lambda t: (np.exp(1j * eta_c * (t - x)) * weight(t)).imag, 0.0, x, epsabs=1e-14)[0]
    assert abs(oscillatory_beginning(eta_c, x, gamma) - complex(re, im)) <= 1e-9


def test_multi_mode_tail_and_bound():
    # f(t) = 0.5 + e^{2 pi i t}, period 1
    table = fourier_table(lambda s: 0.5 + np.exp(2j * np.pi * s), 1.0, N=4)
    gamma, xi = 0.9, 0.4
    xs = np.array([0.0, 2.0, 15.0])
    values = oscillatory_tail(xi, xs, gamma, table)
    for x, value in zip(xs, values):
        expected = 0.5 * _fourier_tail(xi, x, gamma) + _fourier_tail(xi + 2 * np.pi, x, gamma)
        assert abs(value - expected) <= 1e-7 * max(1.0, abs(expected))
    assert np.all(np.abs(values) <= tail_bound(xi, xs, gamma, table))


def test_resonant_mode_rejected():
    table = fourier_table(lambda s: np.exp(-2j * np.pi * s), 1.0, N=4)
    with pytest.raises(NearResonantModeError):
        oscillatory_tail(2 * np.pi, 1.0, 0.9, table)
    with pytest.raises(NearResonantModeError):
        mode_tail(1e-8, 0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        mode_tail(1.0 - 0.5j, 0.0, 1.0)


def test_beginning_constants():
    constants = beginning_constant(0.1, 1.0, 0.9)
    assert abs(constants.c3 - 0.9 ** 0.9 * math.exp(-0.9)) <= 1e-14
    r = math.sqrt(2.0)
    assert abs(constants.c4 - math.expm1(r) / r) <= 1e-14
    assert math.isinf(beginning_constant(0.1, 1.0, 1.0).c2)
    with pytest.raises(InvalidArgumentError):
        beginning_constant(0.0, 1.0, 0.9)


def main():
    """Run all oscillatory-integral tests."""
    tests = [
        test_mode_tail_matches_exponential_integral,
        test_mode_tail_decaying_frequency,
        test_mode_tail_against_qawf,
        test_mode_tail_vectorized,
        test_beginning_integral,
        test_multi_mode_tail_and_bound,
        test_resonant_mode_rejected,
        test_beginning_constants,
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
