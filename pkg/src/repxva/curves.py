"""Piecewise-constant term structures.

Every time-dependent model input (rates, spread drifts and vols, bases,
correlations) is represented by :class:`PiecewiseConstant`.  The value on
``[knots[i], knots[i+1])`` is ``values[i]``; the curve is defined on
``[knots[0], knots[-1]]`` and evaluation outside that range raises
:class:`CoverageError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class CoverageError(ValueError):
    """Raised when a curve is evaluated outside the interval it covers."""


@dataclass(frozen=True)
class PiecewiseConstant:
    knots: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        values = tuple(float(v) for v in self.values)
        if len(knots) != len(values) + 1 or not values:
            raise ValueError("need len(knots) == len(values) + 1 >= 2")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError(f"knots must be strictly increasing: {knots}")
        if knots[0] > 0.0:
            raise CoverageError(f"curve starts at {knots[0]} > 0")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("curve values must be finite")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: float, end: float = math.inf) -> "PiecewiseConstant":
        return cls((0.0, end), (value,))

    @classmethod
    def from_steps(
        cls, times: Sequence[float], values: Sequence[float], end: float = math.inf
    ) -> "PiecewiseConstant":
        """Build from left endpoints ``times`` (first must be <= 0) and an end."""
        return cls(tuple(times) + (end,), tuple(values))

    @property
    def end(self) -> float:
        return self.knots[-1]

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) == 1

    def covers(self, t: float) -> bool:
        return self.knots[0] <= t <= self.knots[-1]

    def _check(self, t) -> None:
        t = np.asarray(t, dtype=float)
        if t.size and (t.min() < self.knots[0] or t.max() > self.knots[-1]):
            raise CoverageError(
                f"curve covers [{self.knots[0]}, {self.knots[-1]}], "
                f"evaluated on [{t.min()}, {t.max()}]"
            )

    def __call__(self, t):
        """Value at ``t`` (scalar or array); right-continuous at knots."""
        self._check(t)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        out = np.asarray(self.values)[idx]
        return float(out) if np.ndim(out) == 0 else out

    def integral(self, a, b):
        """Exact integral over ``[a, b]``; vectorised over array ``a``/``b``."""
        self._check(a)
        self._check(b)
        return self.cumulative(b) - self.cumulative(a)

    def cumulative(self, t):
        """Integral from 0 to ``t``."""
        knots = np.asarray(self.knots)
        vals = np.asarray(self.values)
        widths = np.diff(knots)
        # cumulative integral from knots[0] to each finite knot
        with np.errstate(invalid="ignore"):
            seg = np.where(np.isfinite(widths), widths * vals, 0.0)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        t_arr = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(knots, t_arr, side="right") - 1, 0, len(vals) - 1)
        from_start = cum[idx] + vals[idx] * (t_arr - knots[idx])
        # shift origin to 0
        i0 = int(np.clip(np.searchsorted(knots, 0.0, side="right") - 1, 0, len(vals) - 1))
        zero = cum[i0] + vals[i0] * (0.0 - knots[i0])
        out = from_start - zero
        return float(out) if np.ndim(out) == 0 else out

    def breakpoints(self, a: float, b: float) -> list[float]:
        """Interior knots strictly inside ``(a, b)``."""
        return [k for k in self.knots if a < k < b]

    def scaled(self, factor: float) -> "PiecewiseConstant":
        return PiecewiseConstant(self.knots, tuple(factor * v for v in self.values))

    def shifted_by(self, amount: float) -> "PiecewiseConstant":
        return PiecewiseConstant(self.knots, tuple(v + amount for v in self.values))

    def to_dict(self) -> dict:
        return {"times": list(self.knots[:-1]), "values": list(self.values), "end": self.end}


def merged_knots(curves: Iterable[PiecewiseConstant], a: float, b: float) -> np.ndarray:
    """Sorted union of ``a``, ``b`` and every curve knot inside ``(a, b)``."""
    pts = {a, b}
    for c in curves:
        pts.update(c.breakpoints(a, b))
    return np.array(sorted(pts))


def as_curve(x) -> PiecewiseConstant:
    if isinstance(x, PiecewiseConstant):
        return x
    return PiecewiseConstant.constant(float(x))
