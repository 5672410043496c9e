"""
Oscillatory integrals against the decaying weight (t + 1)^(-gamma).

Single-frequency kernels:

    J(eta, x)  = e^{-i eta x} int_x^inf e^{i eta t} (t + 1)^(-gamma) dt,   Im eta >= 0
    Bg(eta, x) = int_0^x e^{i eta (t - x)} (t + 1)^(-gamma) dt,            Im eta <= 0

Both are bounded (the phase factor is pulled out). J is evaluated by the
integration-by-parts series once |eta| (x + 1) is large, and below that by
10-point Gauss-Legendre panels on a uniform grid joined by the backward
recurrence J_i = P_i + e^{i eta h} J_{i+1}. Bg uses the forward recurrence.
Both recurrences run through ``scipy.signal.lfilter``.

The multi-mode tail combines the kernels over the Fourier modes of a
periodic factor f:

    int_x^inf e^{i xi t} f(t) (t + 1)^(-gamma) dt = sum_n f_n e^{i eta_n x} J(eta_n, x),
    eta_n = xi + 2 pi n / a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.signal import lfilter

from wt_density.solvers.periodic import FourierTable
from wt_density.utils.debugging import setup_logging
from wt_density.utils.errors import InvalidArgumentError, NearResonantModeError

logger = setup_logging()

RESONANT_MODE_TOL = 1e-6
ASYMPTOTIC_THRESHOLD = 40.0
SERIES_TERMS = 40
PANEL_PHASE = 1.5
MAX_PANEL = 0.5

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _weight(t: NDArray, gamma: float) -> NDArray:
    return (t + 1.0) ** (-gamma)


def _panel_step(eta: complex) -> float:
    size = abs(eta)
    return MAX_PANEL if size == 0 else min(MAX_PANEL, PANEL_PHASE / size)


def _gauss_panels(starts: NDArray, lengths: NDArray, eta: complex, gamma: float, anchor: str) -> NDArray:
    """
    int over [s, s + d] of e^{i eta (t - ref)} w(t) dt for every panel.

    ``anchor`` selects ref: "start" (ref = s) or "end" (ref = s + d).
    """
    u = lengths[:, None] * (1.0 + _GL_NODES[None, :]) / 2.0
    shift = u if anchor == "start" else u - lengths[:, None]
    values = np.exp(1j * eta * shift) * _weight(starts[:, None] + u, gamma)
    return lengths / 2.0 * (values @ _GL_WEIGHTS)


def _asymptotic_tail(eta: complex, x: NDArray, gamma: float) -> NDArray[np.complex128]:
    """Integration-by-parts series -(x+1)^-gamma / (i eta) * sum_m (gamma)_m / (i eta (x+1))^m."""
    z = 1.0 / (1j * eta * (x + 1.0))
    term = np.ones_like(z)
    total = np.ones_like(z)
    for m in range(SERIES_TERMS):
        term = term * (gamma + m) * z
        total = total + term
        if np.max(np.abs(term)) < 1e-17 * np.min(np.abs(total)):
            break
    return -(x + 1.0) ** (-gamma) / (1j * eta) * total


def mode_tail(eta: complex, x: ArrayLike, gamma: float) -> NDArray[np.complex128]:
    """
    J(eta, x) for one frequency.

    Args:
        eta: Frequency, Im eta >= 0, |eta| >= 1e-6.
        x: Points x >= 0.
        gamma: Decay exponent.

    Returns:
        Values with the shape of ``x``.

    Raises:
        NearResonantModeError: |eta| below the resonance tolerance.
    """
    eta = complex(eta)
    if abs(eta) < RESONANT_MODE_TOL:
        raise NearResonantModeError(f"shifted frequency {eta:.3e} is (almost) resonant")
    if eta.imag < -1e-12:
        raise InvalidArgumentError(f"tail integral diverges for Im eta = {eta.imag:.3e} < 0")
    x_arr = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x_arr)
    result = np.empty(flat.shape, dtype=complex)

    x_star = ASYMPTOTIC_THRESHOLD / abs(eta) - 1.0
    far = flat >= x_star
    if far.any():
        result[far] = _asymptotic_tail(eta, flat[far], gamma)
    near = ~far
    if near.any():
        h = _panel_step(eta)
        x0 = float(flat[near].min())
        n_panels = max(int(math.ceil((x_star - x0) / h)), 1)
        grid = x0 + h * np.arange(n_panels + 1)
        panels = _gauss_panels(grid[:-1], np.full(n_panels, h), eta, gamma, anchor="start")
        ratio = np.exp(1j * eta * h)
        last = _asymptotic_tail(eta, grid[-1:], gamma)[0]
        backward, _ = lfilter([1.0], [1.0, -ratio], panels[::-1], zi=[ratio * last])
        on_grid = np.concatenate([backward[::-1], [last]])

        xs = flat[near]
        idx = np.clip(np.ceil((xs - x0) / h).astype(int), 0, n_panels)
        gap = np.maximum(grid[idx] - xs, 0.0)
        partial = _gauss_panels(xs, gap, eta, gamma, anchor="start")
        result[near] = partial + np.exp(1j * eta * gap) * on_grid[idx]
        logger.debug(f"mode tail eta={eta:.4g}: {n_panels} panels up to x*={x_star:.2e}")
    return result[0] if x_arr.ndim == 0 else result


def oscillatory_beginning(eta: complex, x: ArrayLike, gamma: float) -> NDArray[np.complex128]:
    """
    Bg(eta, x) = int_0^x e^{i eta (t - x)} (t + 1)^(-gamma) dt for Im eta <= 0.

    Real frequencies go through the complete integral, Bg = e^{-i eta x} J(eta, 0) - J(eta, x);
    the rest use the forward panel recurrence from 0.
    """
    eta = complex(eta)
    if eta.imag > 1e-12:
        raise InvalidArgumentError(f"beginning integral grows for Im eta = {eta.imag:.3e} > 0")
    x_arr = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x_arr)
    if flat.size and flat.min() < 0:
        raise InvalidArgumentError("beginning integral needs x >= 0")

    if eta.imag == 0 and abs(eta) >= RESONANT_MODE_TOL:
        whole = mode_tail(eta, 0.0, gamma)
        values = np.exp(-1j * eta * flat) * whole - mode_tail(eta, flat, gamma)
        return values[0] if x_arr.ndim == 0 else values

    h = _panel_step(eta)
    n_panels = max(int(math.ceil(flat.max() / h)), 1) if flat.size else 1
    grid = h * np.arange(n_panels + 1)
    panels = _gauss_panels(grid[:-1], np.full(n_panels, h), eta, gamma, anchor="end")
    forward = lfilter([1.0], [1.0, -np.exp(-1j * eta * h)], panels)
    on_grid = np.concatenate([[0.0], forward])

    idx = np.clip(np.floor(flat / h).astype(int), 0, n_panels)
    gap = np.maximum(flat - grid[idx], 0.0)
    values = np.exp(-1j * eta * gap) * on_grid[idx] + _gauss_panels(grid[idx], gap, eta, gamma, anchor="end")
    return values[0] if x_arr.ndim == 0 else values


def _shifted(xi: complex, table: FourierTable, mode_tol: float) -> Tuple[NDArray, NDArray]:
    n, coef = table.modes(mode_tol)
    return xi + 2.0 * np.pi * n / table.period, coef


def oscillatory_tail(
    xi: complex,
    x: ArrayLike,
    gamma: float,
    table: FourierTable,
    mode_tol: float = 1e-15,
) -> NDArray[np.complex128]:
    """
    int_x^inf e^{i xi t} f(t) (t + 1)^(-gamma) dt for periodic f with Fourier table ``table``.

    Args:
        xi: Frequency, Im xi >= 0; every shifted xi + 2 pi n / a must stay away from 0.
        x: Lower limits.
        gamma: Decay exponent of the weight.
        table: Fourier coefficients f_n of f (period a taken from the table).
        mode_tol: Relative size below which modes are dropped.

    Returns:
        Values with the shape of ``x``.

    Raises:
        NearResonantModeError: Some shifted frequency is (almost) zero.
    """
    x_arr = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x_arr)
    etas, coefs = _shifted(complex(xi), table, mode_tol)
    total = np.zeros(flat.shape, dtype=complex)
    for eta, coef in zip(etas, coefs):
        total += coef * np.exp(1j * eta * flat) * mode_tail(eta, flat, gamma)
    return total[0] if x_arr.ndim == 0 else total


def tail_bound(xi: complex, x: ArrayLike, gamma: float, table: FourierTable, mode_tol: float = 1e-15) -> NDArray[np.float64]:
    """2 * sum_n |f_n| / |xi + 2 pi n / a| * (x + 1)^(-gamma)."""
    etas, coefs = _shifted(complex(xi), table, mode_tol)
    if np.any(np.abs(etas) < RESONANT_MODE_TOL):
        raise NearResonantModeError(f"tail bound undefined: shifted frequency below {RESONANT_MODE_TOL:g}")
    scale = 2.0 * float(np.sum(np.abs(coefs) / np.abs(etas)))
    return scale * (np.asarray(x, dtype=float) + 1.0) ** (-gamma)


@dataclass(frozen=True)
class BeginningConstants:
    """Constants of the bound on the finite-interval (beginning) integral."""

    c2: float
    c3: float
    c4: float


def beginning_constant(epsilon: float, beta: float, gamma: float) -> BeginningConstants:
    """
    Diagnostic constants for the beginning-integral estimate.

    c3 = gamma^gamma e^-gamma, c4 = (e^r - 1)/r with r = sqrt(beta^2 + 1),
    and c2 combines them with epsilon; c2 is infinite for gamma = 1.

    Args:
        epsilon: Resonance gap at the anchor.
        beta: Neighbourhood aperture.
        gamma: Decay exponent, in (1/2, 1].

    Returns:
        BeginningConstants: (c2, c3, c4).
    """
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    if not 0.5 < gamma <= 1.0:
        raise InvalidArgumentError(f"gamma must lie in (1/2, 1], got {gamma}")
    r = math.sqrt(beta ** 2 + 1.0)
    c3 = gamma ** gamma * math.exp(-gamma)
    c4 = math.expm1(r) / r
    if gamma == 1.0:
        return BeginningConstants(c2=math.inf, c3=c3, c4=c4)
    e = math.e
    c2 = (
        2.0 * e * c3 * r / epsilon ** 2
        + 2.0 / epsilon
        + (gamma / epsilon) * (
            2.0 ** (1.0 - gamma) * e * c3 * c4 * r / (1.0 - gamma)
            + 2.0 ** (gamma + 1.0) * e * c3 / gamma
            + 2.0 ** (gamma + 1.0) / gamma
        )
    )
    return BeginningConstants(c2=c2, c3=c3, c4=c4)
