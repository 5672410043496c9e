"""
ODE engine.

Adaptive Runge-Kutta integration (scipy's DOP853, an embedded 8(5,3) pair
with a 7th order continuous extension) of

* the eigenfunction equation -y'' + V(x) y = lambda y written as the
  first-order system (y, y')' = [[0, 1], [V - lambda, 0]] (y, y'),
* generic first-order linear systems y' = A(x) y,
* arbitrary first-order systems y' = f(x, y),

with complex spectral parameter and dense output. States can be vectors
or matrices (several solutions integrated at once); they are flattened
for the integrator and reshaped on output. Integration is split at the
breakpoints of the potential so that no step straddles a jump.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import OdeSolution, solve_ivp

from wt_density.solvers.potentials import PotentialEvaluator
from wt_density.utils.debugging import setup_logging
from wt_density.utils.errors import (
    IntegrationError,
    InvalidArgumentError,
    NonFiniteStateError,
    StepSizeUnderflowError,
)

logger = setup_logging()

METHOD = "DOP853"
_OVERFLOW_LEVEL = 1e290


@dataclass(frozen=True)
class ToleranceSpec:
    """
    Error-control settings for one integration.

    Attributes:
        rtol: Relative tolerance.
        atol: Absolute tolerance.
        max_step: Largest step the integrator may take.
        min_step: Accepted interior steps below this size raise
            StepSizeUnderflowError.
    """

    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = np.inf
    min_step: float = 1e-12

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise InvalidArgumentError(f"tolerances must be positive (rtol={self.rtol}, atol={self.atol})")
        if not (0 <= self.min_step < self.max_step):
            raise InvalidArgumentError(
                f"need 0 <= min_step < max_step (min_step={self.min_step}, max_step={self.max_step})"
            )

    def scaled(self, factor: float) -> "ToleranceSpec":
        """Same spec with rtol and atol multiplied by ``factor``."""
        return replace(self, rtol=self.rtol * factor, atol=self.atol * factor)


class Trajectory:
    """
    Dense solution of an integration over [x_start, x_end].

    Calling the trajectory evaluates the continuous extension: a scalar
    argument returns an array of the state shape, an array argument of
    length n returns shape ``state_shape + (n,)``.
    """

    def __init__(
        self,
        solution: Optional[OdeSolution],
        x: NDArray[np.float64],
        y: NDArray[np.complex128],
        state_shape: Tuple[int, ...],
    ):
        self._solution = solution
        self.x = np.asarray(x, dtype=float)
        self.y = y
        self.state_shape = tuple(state_shape)

    @property
    def x_start(self) -> float:
        return float(self.x[0])

    @property
    def x_end(self) -> float:
        return float(self.x[-1])

    @property
    def n_steps(self) -> int:
        return max(len(self.x) - 1, 0)

    @property
    def endpoint(self) -> NDArray[np.complex128]:
        return self.y[:, -1].reshape(self.state_shape)

    def covers(self, x: float) -> bool:
        lo, hi = sorted((self.x_start, self.x_end))
        return lo <= x <= hi

    def __call__(self, x: ArrayLike) -> NDArray[np.complex128]:
        x_arr = np.asarray(x, dtype=float)
        lo, hi = sorted((self.x_start, self.x_end))
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if x_arr.size and (x_arr.min() < lo - slack or x_arr.max() > hi + slack):
            raise InvalidArgumentError(
                f"trajectory covers [{lo:.6g}, {hi:.6g}], asked for [{x_arr.min():.6g}, {x_arr.max():.6g}]"
            )
        flat = np.atleast_1d(x_arr)
        if self._solution is None:
            values = np.repeat(self.y[:, :1], flat.size, axis=1)
        else:
            values = self._solution(np.clip(flat, lo, hi))
            if values.ndim == 1:
                values = values[:, None]
        if x_arr.ndim == 0:
            return values[:, 0].reshape(self.state_shape)
        return values.reshape(self.state_shape + (flat.size,))

    def extend(self, other: "Trajectory") -> "Trajectory":
        """Concatenate a continuation that starts where this trajectory ends."""
        if abs(other.x_start - self.x_end) > 1e-12 * max(1.0, abs(self.x_end)):
            raise InvalidArgumentError(
                f"continuation starts at {other.x_start:.6g}, trajectory ends at {self.x_end:.6g}"
            )
        if other._solution is None:
            return self
        if self._solution is None:
            return other
        ts = np.concatenate([self._solution.ts, other._solution.ts[1:]])
        interpolants = list(self._solution.interpolants) + list(other._solution.interpolants)
        merged = OdeSolution(ts, interpolants)
        x = np.concatenate([self.x, other.x[1:]])
        y = np.concatenate([self.y, other.y[:, 1:]], axis=1)
        return Trajectory(merged, x, y, self.state_shape)


def _split_points(x0: float, x1: float, breakpoints: Sequence[float]) -> List[float]:
    inner = sorted(float(b) for b in breakpoints if min(x0, x1) < b < max(x0, x1))
    if x1 < x0:
        inner.reverse()
    return [x0] + inner + [x1]


def integrate_system(
    f: Callable[[float, NDArray], NDArray],
    y0: ArrayLike,
    x0: float,
    x1: float,
    tol: ToleranceSpec,
    breakpoints: Sequence[float] = (),
) -> Trajectory:
    """
    Integrate y' = f(x, y) from x0 to x1 (either direction) with dense output.

    Args:
        f: Right-hand side acting on states of the shape of ``y0``.
        y0: Initial state, any shape, complex or real.
        x0: Start point.
        x1: End point.
        tol: Error control.
        breakpoints: Points where the right-hand side may jump.

    Returns:
        Trajectory: Dense solution.

    Raises:
        StepSizeUnderflowError: The step size collapsed.
        NonFiniteStateError: The state overflowed.
    """
    y0 = np.asarray(y0, dtype=complex)
    if not np.all(np.isfinite(y0)):
        raise InvalidArgumentError("initial state must be finite")
    shape = y0.shape

    def flat_rhs(x, y):
        return np.asarray(f(x, y.reshape(shape)), dtype=complex).ravel()

    return _integrate_flat(flat_rhs, y0.ravel(), shape, float(x0), float(x1), tol, breakpoints)


def _integrate_flat(rhs, y0, shape, x0, x1, tol, breakpoints) -> Trajectory:
    if x0 == x1:
        return Trajectory(None, np.array([x0]), y0[:, None].copy(), shape)

    knots = _split_points(x0, x1, breakpoints)
    ts: List[NDArray] = []
    interpolants = []
    xs: List[NDArray] = []
    ys: List[NDArray] = []
    y = y0
    for a, b in zip(knots[:-1], knots[1:]):
        if a == b:
            continue
        res = solve_ivp(
            rhs, (a, b), y, method=METHOD, rtol=tol.rtol, atol=tol.atol,
            max_step=tol.max_step, dense_output=True,
        )
        if res.status != 0:
            last = res.y[:, -1] if res.y.size else y
            if not np.all(np.isfinite(last)) or np.max(np.abs(last)) > _OVERFLOW_LEVEL:
                raise NonFiniteStateError("state overflowed during integration", x=float(res.t[-1]))
            if "step size" in res.message.lower():
                raise StepSizeUnderflowError(res.message, x=float(res.t[-1]))
            raise IntegrationError(res.message, x=float(res.t[-1]))
        if not np.all(np.isfinite(res.y)):
            raise NonFiniteStateError("non-finite state", x=float(res.t[np.argmax(~np.all(np.isfinite(res.y), axis=0))]))
        steps = np.abs(np.diff(res.t))
        # first and last steps are legitimately short (start-up, landing on the knot)
        if steps.size > 2 and steps[1:-1].min() < tol.min_step:
            raise StepSizeUnderflowError(f"accepted step {steps[1:-1].min():.3e} below min_step", x=float(a))

        sol = res.sol
        ts.append(sol.ts if not ts else sol.ts[1:])
        interpolants.extend(sol.interpolants)
        xs.append(res.t if not xs else res.t[1:])
        ys.append(res.y if not ys else res.y[:, 1:])
        y = res.y[:, -1]

    merged = OdeSolution(np.concatenate(ts), interpolants)
    trajectory = Trajectory(merged, np.concatenate(xs), np.concatenate(ys, axis=1), shape)
    logger.debug(f"integrated [{x0:.4g}, {x1:.4g}] in {trajectory.n_steps} steps ({len(knots) - 1} pieces)")
    return trajectory


def integrate_schrodinger(
    V: PotentialEvaluator,
    lam: complex,
    y0: ArrayLike,
    x0: float,
    x1: float,
    tol: ToleranceSpec,
) -> Trajectory:
    """
    Integrate -y'' + V y = lam y for one or several initial data.

    Args:
        V: Potential.
        lam: Spectral parameter; a scalar, or one value per column of
            ``y0`` to integrate a batch of spectral points at once.
        y0: Shape (2,) for (y, y'), or (2, m) for m solutions side by side
            (row 0 values, row 1 derivatives).
        x0: Start point.
        x1: End point.
        tol: Error control.

    Returns:
        Trajectory: States of the shape of ``y0``.
    """
    y0 = np.asarray(y0, dtype=complex)
    if y0.shape[0] != 2:
        raise InvalidArgumentError(f"state must have leading dimension 2, got shape {y0.shape}")
    if not np.all(np.isfinite(y0)):
        raise InvalidArgumentError("initial state must be finite")
    shape = y0.shape
    half = y0.size // 2
    potential = V.scalar
    if np.ndim(lam) == 0:
        lam = complex(lam)
    else:
        lam = np.broadcast_to(np.asarray(lam, dtype=complex), shape[1:]).ravel()

    def rhs(x, y):
        out = np.empty_like(y)
        out[:half] = y[half:]
        out[half:] = (potential(x) - lam) * y[:half]
        return out

    return _integrate_flat(rhs, y0.ravel(), shape, float(x0), float(x1), tol, V.breakpoints_between(x0, x1))


def integrate_linear_system(
    A: Callable[[float], NDArray],
    y0: ArrayLike,
    x0: float,
    x1: float,
    tol: ToleranceSpec,
    breakpoints: Sequence[float] = (),
) -> Trajectory:
    """
    Integrate y' = A(x) y.

    Args:
        A: Generator, returns a (d, d) complex matrix.
        y0: Shape (d,) or (d, m) (fundamental matrices).
        x0: Start point.
        x1: End point.
        tol: Error control.
        breakpoints: Jump points of A.

    Returns:
        Trajectory: States of the shape of ``y0``.
    """
    y0 = np.asarray(y0, dtype=complex)
    if not np.all(np.isfinite(y0)):
        raise InvalidArgumentError("initial state must be finite")
    shape = y0.shape
    d = shape[0]

    def rhs(x, y):
        return (np.asarray(A(x), dtype=complex) @ y.reshape(d, -1)).ravel()

    return _integrate_flat(rhs, y0.ravel(), shape, float(x0), float(x1), tol, breakpoints)
