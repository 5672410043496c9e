"""
Periodic core.

The unperturbed operator -d^2/dx^2 + q(x) with q(x + a) = q(x): monodromy
matrix, discriminant trD, quasi-momentum k(lambda) on the branch with
k(lambda_0) = 0, k(mu_0) = k(mu_1) = pi, k(lambda_1) = k(lambda_2) = 2 pi, ...,
band edges, the Bloch pair psi_+/psi_- with their periodic parts, and the
Fourier tables of p_+^2, p_-^2 and p_+ p_-.

Conventions: the Wronskian is W(f, g) = f' g - f g'; the Bloch gauge is
psi_+(0) = 1 (so p_+(0) = 1), psi_- = conj(psi_+) on real band points, which
puts W(psi_+, psi_-) on the positive imaginary axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import eigh
from scipy.optimize import brentq

from wt_density.solvers.ode_engine import (
    ToleranceSpec,
    Trajectory,
    integrate_schrodinger,
    integrate_system,
)
from wt_density.solvers.potentials import PotentialEvaluator, TrigonometricPotential
from wt_density.utils.debugging import setup_logging
from wt_density.utils.errors import (
    BandStructureError,
    BranchError,
    EdgeDegeneracyError,
    InvalidArgumentError,
)

logger = setup_logging()

CELL_TOL = ToleranceSpec(rtol=1e-12, atol=1e-14)
DET_TOL = 1e-10


@dataclass(frozen=True)
class PeriodicPotential(PotentialEvaluator):
    """q on one cell [0, a), extended periodically by reduction modulo a."""

    a: float
    q: PotentialEvaluator

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidArgumentError(f"period must be positive, got {self.a}")
        if any(not 0 <= b <= self.a for b in self.q.breakpoints):
            raise InvalidArgumentError("cell breakpoints must lie in [0, a]")

    @property
    def period(self) -> float:
        return self.a

    @property
    def cell_breakpoints(self) -> Tuple[float, ...]:
        inner = sorted({float(b) for b in self.q.breakpoints if 0 < b < self.a})
        if self.q.smoothness == "piecewise":
            return tuple([0.0] + inner)
        return tuple(inner)

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return self.cell_breakpoints

    @property
    def smoothness(self) -> str:
        return self.q.smoothness

    def breakpoints_between(self, lo: float, hi: float) -> NDArray[np.float64]:
        offsets = np.asarray(self.cell_breakpoints, dtype=float)
        if offsets.size == 0:
            return np.empty(0)
        lo, hi = min(lo, hi), max(lo, hi)
        cells = np.arange(math.floor(lo / self.a), math.ceil(hi / self.a) + 1)
        pts = (cells[:, None] * self.a + offsets[None, :]).ravel()
        return np.sort(pts[(pts > lo) & (pts < hi)])

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        return self.q(np.mod(np.asarray(x, dtype=float), self.a))

    def scalar(self, x: float) -> float:
        return self.q.scalar(x % self.a)

    def sample_minimum(self, n: int = 2048) -> float:
        return float(np.min(self(np.linspace(0.0, self.a, n, endpoint=False))))


@dataclass(frozen=True)
class Monodromy:
    """Transfer matrix over one period in the (psi, psi') basis."""

    lam: complex
    matrix: NDArray[np.complex128]
    period: float
    cell: Optional[Trajectory] = field(default=None, repr=False, compare=False)

    @property
    def trace(self) -> complex:
        return complex(self.matrix[0, 0] + self.matrix[1, 1])

    @property
    def discriminant(self) -> complex:
        """trD; real-valued (as a Python float) for real lambda."""
        if complex(self.lam).imag == 0:
            return self.trace.real
        return self.trace

    @property
    def det_residual(self) -> float:
        return float(abs(np.linalg.det(self.matrix) - 1.0))

    def eigenvalues(self) -> Tuple[complex, complex]:
        """(rho, 1/rho) with |rho| <= 1, computed without cancellation."""
        t = self.trace
        s = np.sqrt(complex(t * t - 4.0))
        r1, r2 = (t + s) / 2.0, (t - s) / 2.0
        big = r1 if abs(r1) >= abs(r2) else r2
        return 1.0 / big, big


def monodromy(P: PeriodicPotential, lam: complex, tol: ToleranceSpec = CELL_TOL) -> Monodromy:
    """
    Integrate the fundamental matrix over [0, a].

    Args:
        P: Periodic potential.
        lam: Spectral parameter.
        tol: Error control.

    Returns:
        Monodromy: M(lambda) together with the dense cell trajectory.
    """
    cell = integrate_schrodinger(P, lam, np.eye(2, dtype=complex), 0.0, P.a, tol)
    result = Monodromy(lam=complex(lam), matrix=cell.endpoint.copy(), period=P.a, cell=cell)
    if result.det_residual > DET_TOL:
        logger.warning(f"⚠️ det M({lam}) - 1 = {result.det_residual:.2e} exceeds {DET_TOL:g}; tighten tolerances")
    return result


def discriminant(P: PeriodicPotential, lam: complex, tol: ToleranceSpec = CELL_TOL) -> complex:
    return monodromy(P, lam, tol).discriminant


def discriminant_batch(P: PeriodicPotential, lams: ArrayLike, tol: ToleranceSpec = CELL_TOL) -> NDArray[np.float64]:
    """trD on an array of real lambdas in a single integration."""
    lams = np.asarray(lams, dtype=float)
    m = lams.size
    y0 = np.tile(np.eye(2, dtype=complex), (1, m))
    cell = integrate_schrodinger(P, lam=np.repeat(lams, 2), y0=y0, x0=0.0, x1=P.a, tol=tol)
    end = cell.endpoint
    return (end[0, 0::2] + end[1, 1::2]).real


def trace_derivative(P: PeriodicPotential, lam: complex, tol: ToleranceSpec = CELL_TOL) -> complex:
    """
    d trD / d lambda from the variational equation.

    The state stacks the fundamental matrix Phi and its lambda-derivative;
    Phi_lambda solves the same equation with source -Phi in the derivative row.
    """
    lam = complex(lam)
    potential = P.scalar

    def rhs(x, Y):
        out = np.empty_like(Y)
        shift = potential(x) - lam
        out[0] = Y[1]
        out[1] = shift * Y[0]
        out[2] = Y[3]
        out[3] = shift * Y[2] - Y[0]
        return out

    y0 = np.zeros((4, 2), dtype=complex)
    y0[:2] = np.eye(2)
    end = integrate_system(rhs, y0, 0.0, P.a, tol, P.breakpoints_between(0.0, P.a)).endpoint
    value = complex(end[2, 0] + end[3, 1])
    return value.real if lam.imag == 0 else value


@dataclass(frozen=True)
class QuasiMomentum:
    """k(lambda) on the unwound branch."""

    lam: complex
    k: complex
    band: Optional[int]
    trace: complex
    at_edge: bool = False
    in_gap: bool = False

    @property
    def is_real(self) -> bool:
        return self.k.imag == 0


def band_k(t: float, n: int) -> float:
    theta = math.acos(min(1.0, max(-1.0, t / 2.0)))
    return n * math.pi + theta if n % 2 == 0 else (n + 1) * math.pi - theta


def quasimomentum(
    m: Monodromy,
    branch_hint: Optional[int] = None,
    bands: Optional["BandStructure"] = None,
    edge_tol: float = 1e-10,
) -> QuasiMomentum:
    """
    Quasi-momentum with the branch fixed by band index.

    Args:
        m: Monodromy at lambda.
        branch_hint: Band index n (Re k in [n pi, (n+1) pi]). In a gap it is
            the index of the band above the gap (Re k = n pi).
        bands: Optional band structure; resolves the index and cross-checks
            the hint.
        edge_tol: |trD| within this of 2 flags an edge.

    Returns:
        QuasiMomentum: Im k >= 0 always, Im k > 0 off the real axis.

    Raises:
        BranchError: No band index available or the hint contradicts ``bands``.
    """
    lam = complex(m.lam)
    t = m.trace

    if lam.imag == 0:
        tr = t.real
        x = lam.real
        if abs(tr) <= 2.0:
            n = branch_hint
            if bands is not None:
                idx = bands.band_index(x)
                if idx is None:
                    idx = bands.nearest_band(x)
                if branch_hint is not None and branch_hint != idx:
                    raise BranchError(f"branch hint {branch_hint} contradicts band {idx} at lambda={x:.10g}")
                n = idx
            if n is None:
                raise BranchError(f"band index required to unwind k at lambda={x:.10g}")
            at_edge = 2.0 - abs(tr) < edge_tol
            if at_edge:
                logger.warning(f"⚠️ lambda={x:.10g} is at a band edge (|trD| = {abs(tr):.12f})")
            return QuasiMomentum(lam=lam, k=complex(band_k(tr, n)), band=n, trace=t, at_edge=at_edge)

        n = branch_hint
        if bands is not None:
            idx = bands.gap_index(x)
            if branch_hint is not None and idx is not None and branch_hint != idx:
                raise BranchError(f"gap hint {branch_hint} contradicts gap {idx} at lambda={x:.10g}")
            n = idx if idx is not None else n
        if n is None:
            raise BranchError(f"gap index required at lambda={x:.10g}")
        if (tr > 0) != (n % 2 == 0):
            raise BranchError(f"gap index {n} inconsistent with trD={tr:.6g} at lambda={x:.10g}")
        k = complex(n * math.pi, math.acosh(abs(tr) / 2.0))
        return QuasiMomentum(lam=lam, k=k, band=n, trace=t, in_gap=True)

    rho, _ = m.eigenvalues()
    k0 = -1j * np.log(rho)
    n = branch_hint
    if n is None and bands is not None:
        n = bands.nearest_band(lam.real)
    if n is None:
        raise BranchError(f"band index required to unwind k at lambda={lam}")
    shift = round(((n + 0.5) * math.pi - k0.real) / (2.0 * math.pi))
    k = complex(k0 + 2.0 * math.pi * shift)
    if lam.imag > 0 and not k.imag > 0:
        logger.warning(f"⚠️ Im k = {k.imag:.3e} not positive at lambda={lam}")
    return QuasiMomentum(lam=lam, k=k, band=n, trace=t)


@dataclass(frozen=True)
class BandStructure:
    """
    Sorted band edges e_0 < e_1 <= e_2 < e_3 <= ...; band n is [e_2n, e_2n+1].

    The lower edge of an even band and the upper edge of an odd band are
    periodic eigenvalues (lambda_n, trD = 2); the others are antiperiodic
    (mu_n, trD = -2). Equal neighbours across a gap mean the gap is closed.
    """

    period: float
    edges: Tuple[float, ...]
    lambda_max: float
    closed_gaps: Tuple[int, ...] = ()

    @property
    def n_bands(self) -> int:
        return len(self.edges) // 2

    @property
    def bands(self) -> List[Tuple[float, float]]:
        return [(self.edges[2 * n], self.edges[2 * n + 1]) for n in range(self.n_bands)]

    @property
    def gaps(self) -> List[Tuple[float, float]]:
        """Gap between band n-1 and band n, for n = 1 .. (including closed ones)."""
        return [(self.edges[2 * n - 1], self.edges[2 * n]) for n in range(1, self.n_bands + (len(self.edges) % 2))]

    def band(self, n: int) -> Tuple[float, float]:
        if not 0 <= n < self.n_bands:
            raise InvalidArgumentError(f"band {n} not resolved below lambda_max={self.lambda_max}")
        return self.edges[2 * n], self.edges[2 * n + 1]

    def bandwidth(self, n: int) -> float:
        lo, hi = self.band(n)
        return hi - lo

    def edge_label(self, i: int) -> str:
        n = i // 2
        periodic = (i % 2 == 0) == (n % 2 == 0)
        return f"{'lambda' if periodic else 'mu'}_{n}"

    def band_index(self, lam: float) -> Optional[int]:
        for n, (lo, hi) in enumerate(self.bands):
            if lo <= lam <= hi:
                return n
        return None

    def gap_index(self, lam: float) -> Optional[int]:
        """Index of the band just above an open gap containing lam (0 below the spectrum)."""
        if self.edges and lam < self.edges[0]:
            return 0
        for n, (lo, hi) in enumerate(self.gaps, start=1):
            if lo < lam < hi:
                return n
        return None

    def nearest_band(self, lam: float) -> int:
        if not self.bands:
            raise BandStructureError("no complete band below lambda_max")
        dist = [0.0 if lo <= lam <= hi else min(abs(lam - lo), abs(lam - hi)) for lo, hi in self.bands]
        return int(np.argmin(dist))

    def edge_distance(self, lam: float) -> float:
        return float(np.min(np.abs(np.asarray(self.edges) - lam)))

    def is_interior(self, lam: float, margin: float = 0.0) -> bool:
        """lam inside a band, at least margin * bandwidth away from its edges."""
        n = self.band_index(lam)
        if n is None:
            return False
        lo, hi = self.band(n)
        pad = margin * (hi - lo)
        return lo + pad < lam < hi - pad


def band_edges(
    P: PeriodicPotential,
    lambda_max: float,
    tol: ToleranceSpec = CELL_TOL,
    grid_step: Optional[float] = None,
    closed_tol: float = 1e-9,
) -> BandStructure:
    """
    Locate all band edges below lambda_max.

    trD is sampled on a uniform grid, its extrema are refined as roots of
    dtrD/dlambda, and the edges are bracketed on the monotone pieces between
    extrema and solved with Brent's method. An extremum touching +-2 within
    ``closed_tol`` is a closed gap and yields a coincident pair of edges.

    Args:
        P: Periodic potential.
        lambda_max: Upper end of the search.
        tol: Error control for the cell integrations.
        grid_step: Sampling step; defaults to (pi/a)^2 / 20.
        closed_tol: Tolerance for double roots.

    Returns:
        BandStructure: The edges, interlacing checked.

    Raises:
        BandStructureError: The edge pattern is inconsistent (an edge was missed).
    """
    lo = P.sample_minimum() - 1.0
    if lambda_max <= lo:
        raise InvalidArgumentError(f"lambda_max={lambda_max} is below the spectrum (min q - 1 = {lo:.6g})")
    step = grid_step or (math.pi / P.a) ** 2 / 20.0
    n_grid = max(int(math.ceil((lambda_max - lo) / step)), 4) + 1
    grid = np.linspace(lo, lambda_max, n_grid)
    trace = discriminant_batch(P, grid, tol)
    logger.debug(f"sampled trD on {n_grid} points in [{lo:.4g}, {lambda_max:.4g}]")

    def tr(x: float) -> float:
        return float(discriminant(P, x, tol))

    def dtr(x: float) -> float:
        return float(trace_derivative(P, x, tol))

    def xtol(x: float) -> float:
        return 1e-14 * max(1.0, abs(x))

    # extrema of trD
    knots: List[Tuple[float, float]] = [(grid[0], trace[0])]
    roots: List[Tuple[float, float]] = []
    closed: List[float] = []
    for i in range(1, n_grid - 1):
        d_left, d_right = trace[i] - trace[i - 1], trace[i + 1] - trace[i]
        if d_left * d_right >= 0:
            continue
        a_, b_ = grid[i - 1], grid[i + 1]
        fa, fb = dtr(a_), dtr(b_)
        x_star = brentq(dtr, a_, b_, xtol=xtol(grid[i]), rtol=4 * np.finfo(float).eps) if fa * fb < 0 else grid[i]
        t_star = tr(x_star)
        target = 2.0 if d_left > 0 else -2.0
        if abs(t_star - target) <= closed_tol:
            closed.append(x_star)
            roots.extend([(x_star, target), (x_star, target)])
            t_star = target
        knots.append((x_star, t_star))
    knots.append((grid[-1], trace[-1]))

    for (x_a, t_a), (x_b, t_b) in zip(knots[:-1], knots[1:]):
        for target in (2.0, -2.0):
            if (t_a - target) * (t_b - target) < 0:
                root = brentq(lambda x: tr(x) - target, x_a, x_b, xtol=xtol(x_a), rtol=4 * np.finfo(float).eps)
                roots.append((root, target))

    roots.sort(key=lambda item: item[0])
    edges = tuple(float(r) for r, _ in roots)
    for i, (_, target) in enumerate(roots):
        n = i // 2
        periodic = (i % 2 == 0) == (n % 2 == 0)
        if target != (2.0 if periodic else -2.0):
            raise BandStructureError(
                f"edge {i} at {roots[i][0]:.10g} has trD={target:+.0f}, breaking the interlacing pattern; "
                f"refine grid_step (currently {step:.4g})"
            )

    closed_gaps = tuple(sorted({(edges.index(x) + 1) // 2 for x in closed}))
    structure = BandStructure(period=P.a, edges=edges, lambda_max=float(lambda_max), closed_gaps=closed_gaps)
    logger.info(f"✅ found {len(edges)} band edges below {lambda_max:g} ({structure.n_bands} complete bands, "
                f"{len(closed_gaps)} closed gaps)")
    return structure


def bands_covering(
    P: PeriodicPotential,
    top: float,
    lambda_max: float,
    tol: ToleranceSpec = CELL_TOL,
    max_rounds: int = 8,
) -> BandStructure:
    """
    Band structure whose complete bands reach past ``top``.

    ``lambda_max`` grows by half its distance to the spectrum bottom until
    the last resolved edge lies above ``top``.
    """
    limit = max(lambda_max, top)
    for _ in range(max_rounds):
        structure = band_edges(P, limit, tol)
        if structure.n_bands and structure.edges[2 * structure.n_bands - 1] >= top:
            return structure
        bottom = P.sample_minimum()
        limit = bottom + 1.5 * (limit - bottom) + 1.0
        logger.debug(f"raising lambda_max to {limit:.6g} to cover lambda={top:.6g}")
    raise BandStructureError(f"no complete band reaches lambda={top:.6g} below lambda_max={limit:.6g}")


def hill_matrix_edges(P: PeriodicPotential, n_modes: int = 40) -> NDArray[np.float64]:
    """
    Periodic and antiperiodic eigenvalues from the plane-wave (Hill) matrix.

    Only for trigonometric cell potentials; used as an independent check on
    ``band_edges``.
    """
    if not isinstance(P.q, TrigonometricPotential):
        raise InvalidArgumentError("Hill-matrix edges need a trigonometric cell potential")
    q = P.q
    size = 2 * n_modes + 1
    harmonics = np.zeros(2 * size, dtype=complex)
    harmonics[0] = q.constant
    for n, coef in enumerate(q.cos, start=1):
        harmonics[n] += coef / 2.0
        harmonics[-n] += coef / 2.0
    for n, coef in enumerate(q.sin, start=1):
        harmonics[n] += coef / 2.0j
        harmonics[-n] -= coef / 2.0j
    j = np.arange(-n_modes, n_modes + 1)
    coupling = harmonics[(j[:, None] - j[None, :]) % (2 * size)]
    eigs = []
    for kappa in (0.0, math.pi / P.a):
        kinetic = np.diag((2.0 * math.pi * j / P.a + kappa) ** 2)
        eigs.append(eigh(kinetic + coupling, eigvals_only=True))
    return np.sort(np.concatenate(eigs))


@dataclass(frozen=True)
class FourierTable:
    """Coefficients c_n, n = -N..N, of a function with period a."""

    coefficients: NDArray[np.complex128]
    period: float
    tail_diagnostic: float
    converged: bool

    @property
    def cutoff(self) -> int:
        return (len(self.coefficients) - 1) // 2

    @property
    def indices(self) -> NDArray[np.int64]:
        return np.arange(-self.cutoff, self.cutoff + 1)

    def __getitem__(self, n: int) -> complex:
        if abs(n) > self.cutoff:
            return 0j
        return complex(self.coefficients[n + self.cutoff])

    def l1(self) -> float:
        return float(np.sum(np.abs(self.coefficients)))

    def modes(self, rel_tol: float = 1e-15) -> Tuple[NDArray[np.int64], NDArray[np.complex128]]:
        """Indices and coefficients of the non-negligible modes."""
        mags = np.abs(self.coefficients)
        keep = mags > rel_tol * max(mags.max(), 1e-300)
        return self.indices[keep], self.coefficients[keep]

    def evaluate(self, x: ArrayLike) -> NDArray[np.complex128]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        phases = np.exp(2j * np.pi * np.outer(x, self.indices) / self.period)
        return phases @ self.coefficients


def _fft_coefficients(samples: NDArray, n: int) -> NDArray[np.complex128]:
    c = np.fft.fft(samples) / samples.size
    return np.concatenate([c[-n:], c[: n + 1]])


def fourier_table(
    p: Callable[[NDArray], NDArray],
    a: float,
    N: int = 64,
    decay_tol: float = 1e-10,
    max_cutoff: int = 1024,
) -> FourierTable:
    """
    Fourier coefficients f_n = (1/a) int_0^a f(x) e^{-2 pi i n x / a} dx.

    Sampled on 8N points of the cell and transformed with the FFT; the
    cutoff doubles until |c_{+-N}| < decay_tol or max_cutoff is reached.

    Args:
        p: Vectorized periodic function.
        a: Period.
        N: Initial cutoff.
        decay_tol: Target size of the outermost coefficients.
        max_cutoff: Largest cutoff tried.

    Returns:
        FourierTable: Coefficients with the |c_N| N^2 tail diagnostic.
    """
    while True:
        s = np.arange(8 * N) * a / (8 * N)
        coefs = _fft_coefficients(np.asarray(p(s), dtype=complex), N)
        edge = max(abs(coefs[0]), abs(coefs[-1]))
        if edge < decay_tol or N >= max_cutoff:
            break
        N *= 2
    converged = bool(edge < decay_tol)
    if not converged:
        logger.warning(f"⚠️ Fourier cutoff N={N} too small: |c_N| = {edge:.2e} > {decay_tol:g}")
    return FourierTable(coefficients=coefs, period=a, tail_diagnostic=float(edge * N ** 2), converged=converged)


@dataclass(frozen=True)
class FourierTables:
    """b_n (p_+^2), b_hat_n (p_-^2) and b_tilde_n (p_+ p_-) on a common cutoff."""

    b: FourierTable
    b_hat: FourierTable
    b_tilde: FourierTable


@dataclass(frozen=True)
class BlochData:
    """
    Bloch pair at lambda.

    psi_+(x) = e^{i k n} Phi(s) v_+ for x = n a + s, s in [0, a), where Phi is
    the fundamental matrix on one cell; psi_- likewise with e^{-i k n}.
    """

    lam: complex
    k: complex
    period: float
    band: Optional[int]
    wronskian: complex
    v_plus: NDArray[np.complex128]
    v_minus: NDArray[np.complex128]
    cell: Trajectory = field(repr=False, compare=False)
    gauge: float = 0.0
    real_band: bool = False
    fourier_cutoff: int = 64

    def _cell_states(self, x: ArrayLike) -> Tuple[NDArray, NDArray, NDArray]:
        flat = np.atleast_1d(np.asarray(x, dtype=float))
        n = np.floor(flat / self.period)
        s = np.clip(flat - n * self.period, 0.0, self.period)
        return n, s, self.cell(s)

    def _bloch(self, x: ArrayLike, v: NDArray, sign: int) -> NDArray[np.complex128]:
        n, _, phi = self._cell_states(x)
        state = np.einsum("ijm,j->im", phi, v) * np.exp(sign * 1j * self.k * n)
        return state[:, 0] if np.ndim(x) == 0 else state

    def psi_plus(self, x: ArrayLike) -> NDArray[np.complex128]:
        """(psi_+, psi_+') at x; shape (2,) or (2, n)."""
        return self._bloch(x, self.v_plus, +1)

    def psi_minus(self, x: ArrayLike) -> NDArray[np.complex128]:
        return self._bloch(x, self.v_minus, -1)

    def _periodic_part(self, x: ArrayLike, v: NDArray, sign: int) -> NDArray[np.complex128]:
        _, s, phi = self._cell_states(x)
        values = np.einsum("jm,j->m", phi[0], v) * np.exp(-sign * 1j * self.k * s / self.period)
        return values[0] if np.ndim(x) == 0 else values

    def p_plus(self, x: ArrayLike) -> NDArray[np.complex128]:
        """p_+(x) = e^{-ikx/a} psi_+(x)."""
        return self._periodic_part(x, self.v_plus, +1)

    def p_minus(self, x: ArrayLike) -> NDArray[np.complex128]:
        """p_-(x) = e^{ikx/a} psi_-(x)."""
        return self._periodic_part(x, self.v_minus, -1)

    def basis(self, x: ArrayLike) -> NDArray[np.complex128]:
        """Psi(x) = [[psi_-, psi_+], [psi_-', psi_+']], shape (2, 2) or (2, 2, n)."""
        return np.stack([self.psi_minus(x), self.psi_plus(x)], axis=1)

    def wronskian_at(self, x: float) -> complex:
        plus, minus = self.psi_plus(x), self.psi_minus(x)
        return complex(plus[1] * minus[0] - plus[0] * minus[1])

    def quasiperiodicity_residual(self, x: ArrayLike) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        shifted = self.psi_plus(x + self.period)[0]
        return float(np.max(np.abs(shifted - np.exp(1j * self.k) * self.psi_plus(x)[0])))

    def conjugation_residual(self, x: ArrayLike) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(np.max(np.abs(self.psi_plus(x) - np.conj(self.psi_minus(x)))))

    def rotated(self, theta: float) -> "BlochData":
        """Gauge rotation psi_+ -> e^{i theta} psi_+, psi_- -> e^{-i theta} psi_-."""
        phase = np.exp(1j * theta)
        return replace(self, v_plus=self.v_plus * phase, v_minus=self.v_minus / phase, gauge=self.gauge + theta)

    @cached_property
    def tables(self) -> FourierTables:
        """Fourier tables of p_+^2, p_-^2, p_+ p_- with a common cutoff."""
        a = self.period
        plus = fourier_table(lambda s: self.p_plus(s) ** 2, a, self.fourier_cutoff)
        if self.real_band:
            n = plus.cutoff
            s = np.arange(8 * n) * a / (8 * n)
            pp = self.p_plus(s)
            hat = replace(plus, coefficients=np.conj(plus.coefficients[::-1]))
            tilde_c = _fft_coefficients(np.abs(pp) ** 2, n)
            tilde_c = 0.5 * (tilde_c + np.conj(tilde_c[::-1]))
            tilde = replace(plus, coefficients=tilde_c)
            return FourierTables(b=plus, b_hat=hat, b_tilde=tilde)

        minus = fourier_table(lambda s: self.p_minus(s) ** 2, a, self.fourier_cutoff)
        n = max(plus.cutoff, minus.cutoff)
        s = np.arange(8 * n) * a / (8 * n)
        pp, pm = self.p_plus(s), self.p_minus(s)

        def table(samples, ref):
            return FourierTable(_fft_coefficients(samples, n), a, ref.tail_diagnostic, ref.converged)

        return FourierTables(b=table(pp ** 2, plus), b_hat=table(pm ** 2, minus), b_tilde=table(pp * pm, minus))


def bloch_pair(
    P: PeriodicPotential,
    lam: complex,
    k: QuasiMomentum,
    tol: ToleranceSpec = CELL_TOL,
    mono: Optional[Monodromy] = None,
    gauge: float = 0.0,
    fourier_cutoff: int = 64,
) -> BlochData:
    """
    Normalized Bloch pair from the monodromy eigenvectors.

    v_+- = (1, (e^{+-ik} - M_11) / M_12) are the eigenvectors for e^{+-ik};
    on real band points v_- is set to conj(v_+) exactly.

    Args:
        P: Periodic potential.
        lam: Spectral parameter.
        k: Quasi-momentum at lam.
        tol: Error control.
        mono: Monodromy at lam, if already computed.
        gauge: Phase theta of the gauge rotation applied on top.
        fourier_cutoff: Initial cutoff for the Fourier tables.

    Returns:
        BlochData: psi_+-, p_+-, W and lazily computed Fourier tables.

    Raises:
        EdgeDegeneracyError: lam is a band edge or M_12 vanishes.
        BranchError: W(psi_+, psi_-) is not in iR+ on a band, i.e. k runs
            on the decreasing branch.
    """
    mono = mono if mono is not None else monodromy(P, lam, tol)
    if k.at_edge:
        raise EdgeDegeneracyError(f"Bloch pair degenerates at the band edge lambda={lam}")
    M = mono.matrix
    m11, m12 = M[0, 0], M[0, 1]
    if abs(m12) < 1e-13 * max(1.0, np.abs(M).max()):
        raise EdgeDegeneracyError(f"M_12 vanishes at lambda={lam}: eigenvector normalization psi(0)=1 fails")

    rho = np.exp(1j * k.k)
    v_plus = np.array([1.0, (rho - m11) / m12], dtype=complex)
    real_band = complex(lam).imag == 0 and k.is_real
    if real_band:
        v_minus = np.conj(v_plus)
    else:
        v_minus = np.array([1.0, (1.0 / rho - m11) / m12], dtype=complex)
    wronskian = complex(v_plus[1] * v_minus[0] - v_plus[0] * v_minus[1])
    if real_band:
        wronskian = complex(0.0, wronskian.imag)
        if wronskian.imag <= 0:
            raise BranchError(f"W = {wronskian} not in iR+ at lambda={lam}: k={k.k} is on the wrong branch")

    data = BlochData(
        lam=complex(lam), k=complex(k.k), period=P.a, band=k.band, wronskian=wronskian,
        v_plus=v_plus, v_minus=v_minus, cell=mono.cell, real_band=real_band,
        fourier_cutoff=fourier_cutoff,
    )
    return data.rotated(gauge) if gauge else data


def bloch_at(
    P: PeriodicPotential,
    lam: complex,
    bands: Optional[BandStructure] = None,
    branch_hint: Optional[int] = None,
    tol: ToleranceSpec = CELL_TOL,
    gauge: float = 0.0,
    fourier_cutoff: int = 64,
) -> BlochData:
    """monodromy -> quasimomentum -> bloch_pair in one call."""
    mono = monodromy(P, lam, tol)
    k = quasimomentum(mono, branch_hint=branch_hint, bands=bands)
    return bloch_pair(P, lam, k, tol, mono=mono, gauge=gauge, fourier_cutoff=fourier_cutoff)
