"""
Levinson-form systems u' = (diag(lambda(x), -lambda(x)) + R(x)) u.

Two results are turned into code:

* the a priori growth bound
  ||u(x)|| <= ||u(0)|| e^{int_0^x Re lambda} sqrt(1 + e^{4M}) exp(sqrt(1 + e^{4M}) int_0^inf ||R||),
  where int_x^y Re lambda >= -M for all x <= y;
* the asymptotics: if int_0^inf Re lambda is finite (elliptic case)
  u(x) = diag(e^{int lambda}, e^{-int lambda}) (L + o(1)), and if it diverges to
  +inf (hyperbolic case) u(x) = e^{int lambda} ((L_1, 0) + o(1)).

Long-range trajectories are integrated in the renormalized frames
u2 = diag(e^{-I}, e^{I}) u (elliptic) and u3 = e^{-I} u (hyperbolic),
I = int_0^x lambda, so nothing overflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import cumulative_simpson, cumulative_trapezoid, quad
from scipy.interpolate import CubicHermiteSpline

from wt_density.solvers.ode_engine import ToleranceSpec, Trajectory, integrate_system
from wt_density.utils.debugging import setup_logging
from wt_density.utils.errors import ConvergenceError, GrowthBoundViolation, InvalidArgumentError

logger = setup_logging()

PhaseFn = Callable[[NDArray], NDArray]
RemainderFn = Callable[[NDArray], NDArray]

DEFAULT_HORIZONS = tuple(2.0 ** j for j in range(7, 15))
ELLIPTIC = "elliptic"
HYPERBOLIC = "hyperbolic"


def matrix_norms(R: NDArray) -> NDArray[np.float64]:
    """Spectral norms of a stack of 2x2 matrices of shape (2, 2, n)."""
    return np.linalg.norm(np.moveaxis(R, -1, 0), ord=2, axis=(1, 2))


@dataclass(frozen=True)
class RemainderIntegral:
    """int_0^X ||R|| on a grid plus a bound on the part beyond X."""

    integral: float
    tail: float
    horizon: float
    grid: NDArray[np.float64] = field(repr=False)
    cumulative: NDArray[np.float64] = field(repr=False)

    @property
    def total(self) -> float:
        return self.integral + self.tail

    def partial(self, x: float) -> float:
        """int_0^x ||R|| for x within the horizon."""
        return float(np.interp(x, self.grid, self.cumulative))


def integrate_norm(
    remainder: RemainderFn,
    horizon: float,
    step: float,
    tail: Union[float, Callable[[NDArray, NDArray], float], None] = None,
    breakpoints: Sequence[float] = (),
    chunk: int = 4096,
) -> RemainderIntegral:
    """
    Trapezoid rule for int_0^horizon ||R(x)|| dx.

    Args:
        remainder: Vectorized R, returns shape (2, 2, n).
        horizon: Upper limit X.
        step: Grid spacing.
        tail: Bound for int_X^inf ||R||, either a number or a callable
            receiving (grid, norms).
        breakpoints: Points added to the grid (jumps of R).
        chunk: Evaluation batch size.

    Returns:
        RemainderIntegral: Integral, tail and cumulative values.
    """
    if not (horizon > 0 and step > 0):
        raise InvalidArgumentError(f"need horizon > 0 and step > 0, got {horizon}, {step}")
    n = int(math.ceil(horizon / step))
    grid = np.linspace(0.0, horizon, n + 1)
    extra = np.asarray([b for b in breakpoints if 0 < b < horizon], dtype=float)
    if extra.size:
        grid = np.union1d(grid, extra)
    norms = np.concatenate([matrix_norms(remainder(grid[i:i + chunk])) for i in range(0, grid.size, chunk)])
    cumulative = np.concatenate([[0.0], cumulative_trapezoid(norms, grid)])
    if callable(tail):
        tail_value = float(tail(grid, norms))
    else:
        tail_value = float(tail or 0.0)
    return RemainderIntegral(integral=float(cumulative[-1]), tail=tail_value, horizon=float(horizon),
                             grid=grid, cumulative=cumulative)


@dataclass
class DiagonalSystem:
    """
    u' = (diag(lambda(x), -lambda(x)) + R(x)) u.

    Attributes:
        phase: Vectorized lambda(x).
        remainder: Vectorized R(x), shape (2, 2, n).
        remainder_l1: Estimate of int_0^inf ||R||.
        M: Constant with int_x^y Re lambda >= -M for x <= y.
        phase_integral: Optional closed form of int_0^x lambda.
    """

    phase: PhaseFn
    remainder: RemainderFn
    remainder_l1: float
    M: float = 0.0
    phase_integral: Optional[PhaseFn] = None

    def __post_init__(self):
        if self.remainder_l1 < 0 or not math.isfinite(self.remainder_l1):
            raise InvalidArgumentError(f"remainder L1 estimate must be finite and >= 0, got {self.remainder_l1}")
        if self.M < 0:
            raise InvalidArgumentError(f"M must be >= 0, got {self.M}")

    @classmethod
    def estimate(
        cls,
        phase: PhaseFn,
        remainder: RemainderFn,
        horizon: float,
        step: float,
        remainder_l1: Optional[float] = None,
        tail: Union[float, Callable, None] = None,
        phase_integral: Optional[PhaseFn] = None,
    ) -> "DiagonalSystem":
        """Build a system with int ||R|| and M measured on a uniform grid up to ``horizon``."""
        if remainder_l1 is None:
            remainder_l1 = integrate_norm(remainder, horizon, step, tail).total
        grid = np.linspace(0.0, horizon, int(math.ceil(horizon / step)) + 1)
        if phase_integral is not None:
            running = np.real(phase_integral(grid))
        else:
            running = np.concatenate([[0.0], cumulative_trapezoid(np.real(phase(grid)), grid)])
        drawdown = float(np.max(np.maximum.accumulate(running) - running))
        return cls(phase=phase, remainder=remainder, remainder_l1=float(remainder_l1), M=drawdown,
                   phase_integral=phase_integral)

    def integrated_phase(self, x: ArrayLike) -> NDArray[np.complex128]:
        """int_0^x lambda, by the closed form when available and by quadrature otherwise."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.phase_integral is not None:
            return np.asarray(self.phase_integral(x), dtype=complex)

        def part(fn, upper):
            return quad(lambda t: fn(self.phase(np.array([t]))[0]), 0.0, upper, limit=400)[0]

        return np.array([complex(part(np.real, xi), part(np.imag, xi)) for xi in x])

    def generator(self, x: float) -> NDArray[np.complex128]:
        lam = complex(self.phase(np.array([x]))[0])
        return np.diag([lam, -lam]) + self.remainder(np.array([x]))[:, :, 0]


@dataclass(frozen=True)
class GrowthBound:
    """B(x) = ||u0|| e^{int_0^x Re lambda} sqrt(1 + e^{4M}) exp(sqrt(1 + e^{4M}) int ||R||)."""

    u0_norm: float
    M: float
    remainder_l1: float
    system: Optional[DiagonalSystem] = field(default=None, repr=False, compare=False)

    @property
    def factor(self) -> float:
        spread = math.sqrt(1.0 + math.exp(4.0 * self.M))
        return self.u0_norm * spread * math.exp(spread * self.remainder_l1)

    def __call__(self, x: ArrayLike, real_phase: Optional[ArrayLike] = None) -> NDArray[np.float64]:
        """
        Evaluate B.

        Args:
            x: Points.
            real_phase: int_0^x Re lambda at the points, if already known.
        """
        if real_phase is None:
            if self.system is None:
                raise InvalidArgumentError("growth bound needs int Re lambda or the system")
            real_phase = np.real(self.system.integrated_phase(x))
        return self.factor * np.exp(np.asarray(real_phase, dtype=float))


def growth_bound(sys: DiagonalSystem, u0: ArrayLike) -> GrowthBound:
    """
    The a priori bound on solutions starting from u0.

    Args:
        sys: Levinson-form system.
        u0: Initial vector.

    Returns:
        GrowthBound: Callable B(x).
    """
    return GrowthBound(u0_norm=float(np.linalg.norm(np.asarray(u0, dtype=complex))), M=sys.M,
                       remainder_l1=sys.remainder_l1, system=sys)


@dataclass
class BoundedSolution:
    trajectory: Trajectory
    bound: GrowthBound
    max_ratio: float
    violations: int

    def u(self, x: ArrayLike) -> NDArray[np.complex128]:
        """u(x), shape (2,) or (2, n)."""
        return self.trajectory(x)[:2]

    def phase_integral(self, x: ArrayLike) -> NDArray[np.complex128]:
        return self.trajectory(x)[2]


def _augmented_rhs(sys: DiagonalSystem):
    def rhs(x, y):
        lam = complex(sys.phase(np.array([x]))[0])
        R = sys.remainder(np.array([x]))[:, :, 0]
        out = np.empty_like(y)
        out[:2] = np.array([lam * y[0], -lam * y[1]]) + R @ y[:2]
        out[2] = lam
        return out

    return rhs


def solve_with_bound(
    sys: DiagonalSystem,
    u0: ArrayLike,
    x_max: float,
    tol: ToleranceSpec = ToleranceSpec(),
    strict: bool = True,
) -> BoundedSolution:
    """
    Integrate the system and check the growth bound at every accepted step.

    The state carries int_0^x lambda alongside u, so B(x) is evaluated on the
    same steps.

    Raises:
        GrowthBoundViolation: ||u(x)|| > B(x) (1 + 10 rtol) somewhere (when ``strict``).
    """
    u0 = np.asarray(u0, dtype=complex)
    y0 = np.concatenate([u0, [0.0]])
    trajectory = integrate_system(_augmented_rhs(sys), y0, 0.0, x_max, tol)
    bound = growth_bound(sys, u0)
    norms = np.linalg.norm(trajectory.y[:2], axis=0)
    limits = bound(trajectory.x, real_phase=np.real(trajectory.y[2]))
    ratio = norms / np.maximum(limits, np.finfo(float).tiny)
    allowed = 1.0 + 10.0 * tol.rtol
    violations = int(np.sum(ratio > allowed))
    worst = int(np.argmax(ratio))
    if violations:
        message = f"growth bound violated at {violations} steps; check M={sys.M:.3g} and int||R||={sys.remainder_l1:.3g}"
        if strict:
            raise GrowthBoundViolation(message, x=float(trajectory.x[worst]), ratio=float(ratio[worst]))
        logger.warning(f"⚠️ {message}")
    return BoundedSolution(trajectory=trajectory, bound=bound, max_ratio=float(ratio[worst]), violations=violations)


@dataclass
class AsymptoticResult:
    """
    Limit of the renormalized solution.

    ``limit`` is L (elliptic) or (L_1, lim of the second u3 component)
    (hyperbolic); ``constant`` is its first component.
    """

    regime: str
    limit: NDArray[np.complex128]
    horizons: List[float]
    history: List[NDArray[np.complex128]]
    converged: bool
    cauchy_difference: float
    trajectory: Optional[Trajectory] = field(default=None, repr=False)

    @property
    def constant(self) -> complex:
        return complex(self.limit[0])


def _frame_rhs(sys: DiagonalSystem, regime: str):
    def rhs(x, y):
        lam = complex(sys.phase(np.array([x]))[0])
        R = sys.remainder(np.array([x]))[:, :, 0]
        I = y[2]
        out = np.empty_like(y)
        if regime == ELLIPTIC:
            twist = np.exp(2.0 * I)
            out[0] = R[0, 0] * y[0] + R[0, 1] * y[1] / twist
            out[1] = R[1, 0] * y[0] * twist + R[1, 1] * y[1]
        else:
            out[:2] = np.array([0.0, -2.0 * lam * y[1]]) + R @ y[:2]
        out[2] = lam
        return out

    return rhs


def _stabilize(values: List[NDArray], horizons: Sequence[float], tol: float):
    diffs = [float(np.linalg.norm(b - a)) for a, b in zip(values[:-1], values[1:])]
    scale = max(1.0, float(np.linalg.norm(values[-1])))
    converged = bool(diffs) and diffs[-1] < tol * scale
    return converged, (diffs[-1] if diffs else math.inf)


@dataclass(frozen=True)
class CompanionIntegral:
    """
    u0 + int_0^x (e^{-I} (R u)_1, e^{I} (R u)_2) dt on the nodes of a uniform grid.

    ``u`` and ``I`` are the sampled solution and int_0^x lambda on the same
    nodes, ``integrand`` the derivative of ``values``.
    """

    grid: NDArray[np.float64] = field(repr=False)
    values: NDArray[np.complex128] = field(repr=False)
    integrand: NDArray[np.complex128] = field(repr=False)
    u: NDArray[np.complex128] = field(repr=False)
    I: NDArray[np.complex128] = field(repr=False)

    @cached_property
    def _spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.grid, self.values, self.integrand, axis=1, extrapolate=False)

    def __call__(self, x: ArrayLike) -> NDArray[np.complex128]:
        """Cubic Hermite interpolation between nodes, shape (2,) or (2, n); nan off the grid."""
        return self._spline(np.asarray(x, dtype=float))


def companion_integral(
    sys: DiagonalSystem,
    u0: ArrayLike,
    solution: Callable[[NDArray], NDArray],
    horizon: float,
    step: float,
    chunk: int = 8192,
) -> CompanionIntegral:
    """
    Cumulative Simpson rule for the Levinson integral along a known solution.

    Args:
        sys: Levinson-form system with ``phase_integral``.
        u0: Initial vector.
        solution: Sampler x -> u(x), shape (2, n).
        horizon: Upper end of the grid.
        step: Target spacing.
        chunk: Evaluation batch size.

    Returns:
        CompanionIntegral: Cumulative values at every node.
    """
    if sys.phase_integral is None:
        raise InvalidArgumentError("companion quadrature needs the closed-form phase integral")
    if not (horizon > 0 and step > 0):
        raise InvalidArgumentError(f"need horizon > 0 and step > 0, got {horizon}, {step}")
    n = int(math.ceil(horizon / step))
    grid = np.linspace(0.0, horizon, n + 1)
    I = np.concatenate([np.asarray(sys.phase_integral(grid[i:i + chunk]), dtype=complex)
                        for i in range(0, grid.size, chunk)])
    u = np.concatenate([np.asarray(solution(grid[i:i + chunk]), dtype=complex)
                        for i in range(0, grid.size, chunk)], axis=1)
    Ru = np.concatenate([np.einsum("ijn,jn->in", sys.remainder(grid[i:i + chunk]), u[:, i:i + chunk])
                         for i in range(0, grid.size, chunk)], axis=1)
    integrand = np.vstack([np.exp(-I) * Ru[0], np.exp(I) * Ru[1]])
    cumulative = cumulative_simpson(integrand, x=grid, axis=1, initial=0.0)
    values = np.asarray(u0, dtype=complex)[:, None] + cumulative
    return CompanionIntegral(grid=grid, values=values, integrand=integrand, u=u, I=I)


def asymptotic_coefficient(
    sys: DiagonalSystem,
    u0: ArrayLike,
    regime: str = ELLIPTIC,
    horizons: Sequence[float] = DEFAULT_HORIZONS,
    tol: float = 1e-6,
    ode_tol: ToleranceSpec = ToleranceSpec(),
    solution: Optional[Callable[[NDArray], NDArray]] = None,
    step: float = 0.05,
    strict: bool = True,
) -> AsymptoticResult:
    """
    Limit vector of the Levinson asymptotics.

    Elliptic: L = u0 + int_0^inf e^{-int Lambda} R u dt. Hyperbolic: L_1 =
    u0_1 + int_0^inf e^{-int lambda} (R u)_1 dt, second component -> 0.

    Args:
        sys: Levinson-form system.
        u0: Initial vector.
        regime: "elliptic" or "hyperbolic".
        horizons: Increasing horizons X; the limit is read at each.
        tol: Cauchy tolerance between the last two horizons (relative to max(1, ||L||)).
        ode_tol: Error control of the frame integration.
        solution: Sampler x -> u(x) of shape (2, n) for an already known
            solution; switches to companion quadrature (cumulative Simpson on
            a uniform grid with spacing ``step``), which needs
            ``sys.phase_integral``.
        step: Grid spacing of the companion quadrature.
        strict: Raise ConvergenceError when the limit does not settle.

    Returns:
        AsymptoticResult: Limit, history over the horizons and diagnostics.
    """
    if regime not in (ELLIPTIC, HYPERBOLIC):
        raise InvalidArgumentError(f"regime must be '{ELLIPTIC}' or '{HYPERBOLIC}', got {regime!r}")
    horizons = sorted(float(h) for h in horizons)
    u0 = np.asarray(u0, dtype=complex)
    trajectory = None

    if solution is not None:
        companion = companion_integral(sys, u0, solution, horizons[-1], step)
        history = []
        for h in horizons:
            m = min(int(np.searchsorted(companion.grid, h - 1e-9 * h)), companion.grid.size - 1)
            value = companion.values[:, m]
            if regime == HYPERBOLIC:
                value = np.array([value[0], np.exp(-companion.I[m]) * companion.u[1, m]])
            history.append(value)
    else:
        y0 = np.concatenate([u0, [0.0]])
        trajectory = integrate_system(_frame_rhs(sys, regime), y0, 0.0, horizons[-1], ode_tol)
        history = [trajectory(h)[:2] for h in horizons]

    converged, diff = _stabilize(history, horizons, tol)
    result = AsymptoticResult(regime=regime, limit=history[-1], horizons=list(horizons), history=history,
                              converged=converged, cauchy_difference=diff, trajectory=trajectory)
    if not converged:
        message = f"{regime} limit not settled: last Cauchy difference {diff:.2e} > {tol:g}"
        if strict:
            raise ConvergenceError(message)
        logger.warning(f"⚠️ {message}")
    logger.debug(f"{regime} limit {result.constant:.10g} (Cauchy {diff:.2e})")
    return result


def direct_solution(sys: DiagonalSystem, u0: ArrayLike, x_max: float, tol: ToleranceSpec = ToleranceSpec()) -> Trajectory:
    """Plain integration of u' = (diag(lambda, -lambda) + R) u with int lambda as a third component."""
    y0 = np.concatenate([np.asarray(u0, dtype=complex), [0.0]])
    return integrate_system(_augmented_rhs(sys), y0, 0.0, x_max, tol)
