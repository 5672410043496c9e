"""
Potential evaluators.

Every evaluator is a real function on the half-line with a vectorized
``__call__`` and a fast ``scalar`` path used inside right-hand sides.
Discontinuities are declared through ``breakpoints`` so the integrator can
stop exactly on them. Evaluators are plain frozen dataclasses, which keeps
them picklable for process pools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from wt_density.utils.errors import InvalidArgumentError


class PotentialEvaluator:
    """Base class: a real potential V(x) on x >= 0."""

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return ()

    @property
    def period(self) -> Optional[float]:
        return None

    @property
    def smoothness(self) -> str:
        return "piecewise" if self.breakpoints else "smooth"

    @property
    def l1_bound(self) -> Optional[float]:
        """Declared bound on the integral of |V| over the half-line, if any."""
        return None

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        raise NotImplementedError

    def scalar(self, x: float) -> float:
        return float(self(np.asarray([x]))[0])

    def tail_l1(self, x: float) -> float:
        """Bound on the integral of |V| over [x, inf)."""
        raise NotImplementedError(f"{type(self).__name__} does not decay")

    def breakpoints_between(self, lo: float, hi: float) -> NDArray[np.float64]:
        """Breakpoints strictly inside (min(lo, hi), max(lo, hi)), ascending."""
        lo, hi = min(lo, hi), max(lo, hi)
        pts = np.asarray(self.breakpoints, dtype=float)
        return pts[(pts > lo) & (pts < hi)]

    def __add__(self, other: "PotentialEvaluator") -> "SumPotential":
        left = self.parts if isinstance(self, SumPotential) else (self,)
        right = other.parts if isinstance(other, SumPotential) else (other,)
        return SumPotential(tuple(left) + tuple(right))


@dataclass(frozen=True)
class ZeroPotential(PotentialEvaluator):
    """V = 0."""

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        return np.zeros_like(np.asarray(x, dtype=float))

    def scalar(self, x: float) -> float:
        return 0.0

    @property
    def l1_bound(self) -> Optional[float]:
        return 0.0

    def tail_l1(self, x: float) -> float:
        return 0.0


@dataclass(frozen=True)
class TrigonometricPotential(PotentialEvaluator):
    """
    q(x) = constant + sum_n cos_n cos(2 pi n x / a) + sin_n sin(2 pi n x / a).

    ``cos[j]`` and ``sin[j]`` are the coefficients of harmonic n = j + 1.
    """

    cell_length: float
    constant: float = 0.0
    cos: Tuple[float, ...] = ()
    sin: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.cell_length > 0:
            raise InvalidArgumentError(f"period must be positive, got {self.cell_length}")

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float)
        theta = 2.0 * np.pi * x / self.cell_length
        value = np.full_like(x, self.constant)
        for n, coef in enumerate(self.cos, start=1):
            value = value + coef * np.cos(n * theta)
        for n, coef in enumerate(self.sin, start=1):
            value = value + coef * np.sin(n * theta)
        return value

    def scalar(self, x: float) -> float:
        theta = 2.0 * math.pi * x / self.cell_length
        value = self.constant
        for n, coef in enumerate(self.cos, start=1):
            value += coef * math.cos(n * theta)
        for n, coef in enumerate(self.sin, start=1):
            value += coef * math.sin(n * theta)
        return value


@dataclass(frozen=True)
class PiecewiseConstantPotential(PotentialEvaluator):
    """
    Step function on one cell: ``values[j]`` on [edges[j-1], edges[j]).

    ``edges`` are the interior jump positions, strictly increasing; there is
    one more value than edges. Right-continuous at the jumps.
    """

    edges: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.edges) + 1:
            raise InvalidArgumentError(
                f"piecewise-constant table needs len(values) == len(breakpoints) + 1, "
                f"got {len(self.values)} values for {len(self.edges)} breakpoints"
            )
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise InvalidArgumentError("breakpoints must be strictly increasing")

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return tuple(self.edges)

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        idx = np.searchsorted(np.asarray(self.edges, dtype=float), np.asarray(x, dtype=float), side="right")
        return np.asarray(self.values, dtype=float)[idx]

    def scalar(self, x: float) -> float:
        for edge, value in zip(self.edges, self.values):
            if x < edge:
                return value
        return self.values[-1]


@dataclass(frozen=True)
class LinearPotential(PotentialEvaluator):
    """V(x) = slope * x + offset (Airy test problems)."""

    slope: float = 1.0
    offset: float = 0.0

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        return self.slope * np.asarray(x, dtype=float) + self.offset

    def scalar(self, x: float) -> float:
        return self.slope * x + self.offset


@dataclass(frozen=True)
class WignerVonNeumannPotential(PotentialEvaluator):
    """c sin(2 omega x + delta) / (x + 1)^gamma."""

    c: float
    omega: float
    delta: float = 0.0
    gamma: float = 1.0

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float)
        return self.c * np.sin(2.0 * self.omega * x + self.delta) / (x + 1.0) ** self.gamma

    def scalar(self, x: float) -> float:
        return self.c * math.sin(2.0 * self.omega * x + self.delta) / (x + 1.0) ** self.gamma


@dataclass(frozen=True)
class PowerDecayPotential(PotentialEvaluator):
    """Summable tail C / (1 + x)^p with p > 1."""

    amplitude: float
    power: float

    def __post_init__(self):
        if not self.power > 1:
            raise InvalidArgumentError(f"power-decay q1 needs power > 1 to be summable, got {self.power}")

    @property
    def l1_bound(self) -> float:
        return abs(self.amplitude) / (self.power - 1.0)

    def tail_l1(self, x: float) -> float:
        return abs(self.amplitude) / ((self.power - 1.0) * (1.0 + x) ** (self.power - 1.0))

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        return self.amplitude / (1.0 + np.asarray(x, dtype=float)) ** self.power

    def scalar(self, x: float) -> float:
        return self.amplitude / (1.0 + x) ** self.power


@dataclass(frozen=True)
class CompactBumpPotential(PotentialEvaluator):
    """Constant ``height`` on [start, end), zero elsewhere."""

    height: float
    start: float
    end: float

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise InvalidArgumentError(f"bump support must satisfy 0 <= start < end, got [{self.start}, {self.end})")

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return (self.start, self.end) if self.start > 0 else (self.end,)

    @property
    def l1_bound(self) -> float:
        return abs(self.height) * (self.end - self.start)

    def tail_l1(self, x: float) -> float:
        return abs(self.height) * max(0.0, self.end - max(x, self.start))

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.start) & (x < self.end), self.height, 0.0)

    def scalar(self, x: float) -> float:
        return self.height if self.start <= x < self.end else 0.0


@dataclass(frozen=True)
class SumPotential(PotentialEvaluator):
    """Pointwise sum of evaluators."""

    parts: Tuple[PotentialEvaluator, ...]

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        pts = sorted({float(b) for part in self.parts if part.period is None for b in part.breakpoints})
        return tuple(pts)

    def breakpoints_between(self, lo: float, hi: float) -> NDArray[np.float64]:
        chunks = [part.breakpoints_between(lo, hi) for part in self.parts]
        if not chunks:
            return np.empty(0)
        return np.unique(np.concatenate(chunks))

    @property
    def smoothness(self) -> str:
        return "piecewise" if any(p.smoothness == "piecewise" for p in self.parts) else "smooth"

    @property
    def l1_bound(self) -> Optional[float]:
        bounds = [p.l1_bound for p in self.parts]
        return None if any(b is None for b in bounds) else float(sum(bounds))

    def tail_l1(self, x: float) -> float:
        return float(sum(p.tail_l1(x) for p in self.parts))

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for part in self.parts:
            total = total + part(x)
        return total

    def scalar(self, x: float) -> float:
        return sum(part.scalar(x) for part in self.parts)


def sum_potentials(parts: Sequence[PotentialEvaluator]) -> PotentialEvaluator:
    """Combine evaluators, dropping zeros."""
    kept = tuple(p for p in parts if p is not None and not isinstance(p, ZeroPotential))
    if not kept:
        return ZeroPotential()
    if len(kept) == 1:
        return kept[0]
    return SumPotential(kept)
