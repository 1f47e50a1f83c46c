"""Uniform time grids and gridded vector-valued sample paths.

Every solver in the package consumes and produces :class:`VectorPath`
objects: finite-dimensional paths sampled on a shared uniform grid, with a
declared interpolation rule between grid points.  Counting processes are
stored as right-continuous step paths; deterministic limits as piecewise
linear paths.  Paths are immutable after construction and safe to share.

Sup/inf over time are always taken over grid points only; for a path with
Lipschitz constant L the induced error is O(L*h).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, TextIO

import numpy as np

STEP = "step"      # piecewise constant, right continuous
LINEAR = "linear"  # piecewise linear

_INTERPOLATIONS = (STEP, LINEAR)

DEFAULT_STEP_FRACTION = 1e-3


class PathDomainError(ValueError):
    """Raised when a time query falls outside a grid's [t0, t1] span."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 + i*h, i = 0..m-1, with m = floor((t1-t0)/h) + 1.

    t0 may be negative (horizons of the form [-T0, T]).
    """

    t0: float
    t1: float
    h: float

    def __post_init__(self) -> None:
        if not self.h > 0:
            raise ValueError(f"grid step must be positive, got h={self.h}")
        if not self.t1 > self.t0:
            raise ValueError(f"need t1 > t0, got [{self.t0}, {self.t1}]")

    @property
    def m(self) -> int:
        # Guard against floor((t1-t0)/h) landing one short of an exact multiple.
        return int(np.floor((self.t1 - self.t0) / self.h + 1e-9)) + 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.m)

    @property
    def t_end(self) -> float:
        """Last grid point (may undershoot t1 when h does not divide t1-t0)."""
        return self.t0 + self.h * (self.m - 1)

    def index_at_or_below(self, t) -> np.ndarray:
        """Largest grid index i with t0 + i*h <= t (clipped to the grid)."""
        idx = np.floor((np.asarray(t, dtype=float) - self.t0) / self.h + 1e-9)
        return np.clip(idx, 0, self.m - 1).astype(int)

    def nearest_index(self, t: float) -> int:
        return int(np.clip(round((t - self.t0) / self.h), 0, self.m - 1))

    def contains(self, t: float) -> bool:
        return self.t0 - 1e-12 <= t <= self.t1 + 1e-12

    def same(self, other: "TimeGrid", tol: float = 1e-12) -> bool:
        return (
            abs(self.t0 - other.t0) <= tol
            and abs(self.h - other.h) <= tol
            and self.m == other.m
        )


def default_grid(t0: float, t1: float, h: float | None = None) -> TimeGrid:
    """Grid over [t0, t1] with the default step h = 1e-3*(t1-t0)."""
    return TimeGrid(t0, t1, h if h is not None else DEFAULT_STEP_FRACTION * (t1 - t0))


@dataclass(frozen=True)
class VectorPath:
    """dim coordinates sampled at the m points of a uniform grid."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    interpolation: str = LINEAR

    def __post_init__(self) -> None:
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if vals.shape[1] != self.grid.m:
            raise ValueError(
                f"values shape {vals.shape} does not match grid with m={self.grid.m}"
            )
        if self.interpolation not in _INTERPOLATIONS:
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def from_function(
        grid: TimeGrid, fn: Callable[[np.ndarray], np.ndarray], interpolation: str = LINEAR
    ) -> "VectorPath":
        return VectorPath(grid, np.atleast_2d(fn(grid.times)), interpolation)

    @staticmethod
    def zeros(grid: TimeGrid, dim: int, interpolation: str = LINEAR) -> "VectorPath":
        return VectorPath(grid, np.zeros((dim, grid.m)), interpolation)

    def with_values(self, values: np.ndarray) -> "VectorPath":
        return VectorPath(self.grid, values, self.interpolation)

    def component(self, k: int) -> "VectorPath":
        return VectorPath(self.grid, self.values[k : k + 1], self.interpolation)

    # -- evaluation -----------------------------------------------------------

    def eval(self, t) -> np.ndarray:
        """Coordinate values at time(s) t; exact at grid points.

        Step paths are right continuous; linear paths interpolate.  Raises
        PathDomainError outside [t0, t1].
        """
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < self.grid.t0 - 1e-12) or np.any(t_arr > self.grid.t1 + 1e-12):
            raise PathDomainError(
                f"time {t} outside path domain [{self.grid.t0}, {self.grid.t1}]"
            )
        idx = self.grid.index_at_or_below(t_arr)
        if self.interpolation == STEP:
            out = self.values[:, idx]
        else:
            idx_hi = np.minimum(idx + 1, self.grid.m - 1)
            t_lo = self.grid.t0 + idx * self.grid.h
            frac = np.clip((t_arr - t_lo) / self.grid.h, 0.0, 1.0)
            out = self.values[:, idx] * (1.0 - frac) + self.values[:, idx_hi] * frac
        if t_arr.ndim == 0:
            return out[:, 0] if out.ndim == 2 else out
        return out

    # -- path algebra ---------------------------------------------------------

    def running_sup_plus(self) -> "VectorPath":
        """t -> sup_{s<=t} [p(s)]^+ coordinatewise (non-decreasing, >= 0)."""
        return self.with_values(np.maximum.accumulate(np.maximum(self.values, 0.0), axis=1))

    def integral(self, a: float, b: float) -> np.ndarray:
        """Exact integral of each coordinate over [a, b].

        Exact for the declared interpolation: rectangle sums for step paths,
        trapezoids for linear ones.
        """
        if a > b:
            raise ValueError(f"need a <= b, got a={a}, b={b}")
        g = self.grid
        if not (g.contains(a) and g.contains(b)):
            raise PathDomainError(f"[{a}, {b}] outside path domain [{g.t0}, {g.t1}]")
        if a == b:
            return np.zeros(self.dim)
        ts = g.times
        inside = (ts > a) & (ts < b)
        knots = np.concatenate(([a], ts[inside], [b]))
        mids = 0.5 * (knots[:-1] + knots[1:])
        widths = np.diff(knots)
        if self.interpolation == STEP:
            heights = self.values[:, g.index_at_or_below(mids)]
        else:
            heights = self.eval(mids)
        return heights @ widths

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    # -- arithmetic (grids and interpolation must agree) ----------------------

    def _check_compatible(self, other: "VectorPath") -> None:
        if not self.grid.same(other.grid):
            raise ValueError("paths live on different grids")
        if self.values.shape != other.values.shape:
            raise ValueError("paths have different dimensions")

    def __add__(self, other: "VectorPath") -> "VectorPath":
        self._check_compatible(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "VectorPath") -> "VectorPath":
        self._check_compatible(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> "VectorPath":
        return self.with_values(self.values * float(c))

    __rmul__ = __mul__


# Spec-level operation aliases -------------------------------------------------

def path_eval(p: VectorPath, t) -> np.ndarray:
    return p.eval(t)


def path_running_sup_plus(p: VectorPath) -> VectorPath:
    return p.running_sup_plus()


def path_integral(f: VectorPath, a: float, b: float) -> np.ndarray:
    return f.integral(a, b)


def write_path_csv(p: VectorPath, out: TextIO, header: Iterable[str] | None = None) -> None:
    """One row per grid point: t, v_1, ..., v_dim with 12 significant digits."""
    cols = list(header) if header is not None else [f"v_{k + 1}" for k in range(p.dim)]
    if len(cols) != p.dim:
        raise ValueError("header length does not match path dimension")
    out.write("t," + ",".join(cols) + "\n")
    for i, t in enumerate(p.grid.times):
        row = [f"{t:.12g}"] + [f"{v:.12g}" for v in p.values[:, i]]
        out.write(",".join(row) + "\n")
