"""Time grids, discrete delay measures and segment access.

Every delayed-generator evaluation reduces to reading a stored path at a
handful of lagged grid indices and averaging the results against the atom
weights of a discrete probability measure on ``[-T, 0]``.  Negative times
follow the extension convention: the state channel is frozen at its time-0
value and the loading channel is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "TimeGrid",
    "DelayMeasure",
    "SegmentFrame",
    "make_grid",
    "snap_measure",
    "point_mass",
    "delay_average",
    "fubini_identity_check",
]

Y_CHANNEL = "Y"
Z_CHANNEL = "Z"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_N = T``."""

    horizon: float
    n_steps: int
    times: np.ndarray = field(repr=False, compare=False)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def n_points(self) -> int:
        return self.n_steps + 1


def make_grid(horizon: float, n_steps: int) -> TimeGrid:
    """Build a uniform grid with ``n_steps`` steps covering ``[0, horizon]``."""
    if not (isinstance(horizon, (int, float, np.floating)) and math.isfinite(horizon)):
        raise InvalidArgument(f"horizon must be a finite real, got {horizon!r}")
    if horizon <= 0:
        raise InvalidArgument(f"horizon must be positive, got {horizon}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise InvalidArgument(f"n_steps must be a positive integer, got {n_steps}")
    n_steps = int(n_steps)
    times = np.linspace(0.0, float(horizon), n_steps + 1)
    times.setflags(write=False)
    return TimeGrid(float(horizon), n_steps, times)


@dataclass(frozen=True)
class DelayMeasure:
    """Finite probability measure on ``[-T, 0]`` with grid-aligned atoms.

    ``offsets`` are the lags expressed in grid steps (non-positive integers);
    ``lags`` are the same atoms in time units.
    """

    lags: Tuple[float, ...]
    weights: Tuple[float, ...]
    offsets: Tuple[int, ...]
    dt: float
    horizon: float

    def __post_init__(self):
        if not self.lags:
            raise InvalidArgument("delay measure needs at least one atom")
        if len(set(self.offsets)) != len(self.offsets):
            raise InvalidArgument("delay measure lags must be pairwise distinct")
        if any(w <= 0 for w in self.weights):
            raise InvalidArgument("delay measure weights must be positive")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise InvalidArgument("delay measure weights must sum to 1")
        tol = 1e-12 * self.horizon
        if any(u > tol or u < -self.horizon - tol for u in self.lags):
            raise InvalidArgument("delay measure lags must lie in [-T, 0]")

    @property
    def atoms(self) -> list:
        return list(zip(self.lags, self.weights))

    @property
    def max_offset(self) -> int:
        """Largest look-back in grid steps."""
        return -min(self.offsets)

    def is_point_mass_at_zero(self) -> bool:
        return self.offsets == (0,)


def _snap_offset(lag: float, dt: float) -> int:
    # nearest multiple of dt, ties toward 0
    a = round(abs(lag) / dt, 12)
    return -int(math.ceil(a - 0.5))


def snap_measure(atoms: Iterable[Sequence[float]], grid: TimeGrid) -> DelayMeasure:
    """Snap raw ``(lag, weight)`` atoms onto ``grid`` and normalise.

    Lags are rounded to the nearest multiple of ``grid.dt`` (ties toward 0),
    colliding atoms are merged and the weights rescaled to sum to one.
    """
    atoms = [(float(u), float(w)) for u, w in atoms]
    if not atoms:
        raise InvalidArgument("atom list is empty")
    T = grid.horizon
    tol = 1e-12 * T
    merged: dict = {}
    for u, w in atoms:
        if not (math.isfinite(u) and math.isfinite(w)):
            raise InvalidArgument(f"non-finite atom ({u}, {w})")
        if u > tol or u < -T - tol:
            raise InvalidArgument(f"lag {u} outside [-T, 0] with T={T}")
        if w <= 0:
            raise InvalidArgument(f"atom weight must be positive, got {w}")
        off = max(_snap_offset(u, grid.dt), -grid.n_steps)
        merged[off] = merged.get(off, 0.0) + w
    offsets = sorted(merged)
    total = math.fsum(merged.values())
    weights = tuple(merged[o] / total for o in offsets)
    lags = tuple(o * grid.dt if o != -grid.n_steps else -T for o in offsets)
    return DelayMeasure(lags, weights, tuple(offsets), grid.dt, T)


def point_mass(grid: TimeGrid, lag: float = 0.0) -> DelayMeasure:
    """Dirac measure at ``lag``; the default is the undelayed case."""
    return snap_measure([(lag, 1.0)], grid)


@dataclass(frozen=True)
class SegmentFrame:
    """View of a stored path through the window ``(t_i + u)_{-T <= u <= 0}``.

    ``values`` has time on axis 0.  For the ``"Y"`` channel it holds grid
    points ``0..N``; for ``"Z"`` it holds steps ``0..N-1``.  Reads before
    time 0 return ``values[0]`` (Y) or zeros (Z).
    """

    values: np.ndarray
    index: int
    channel: str = Y_CHANNEL

    def __post_init__(self):
        if self.channel not in (Y_CHANNEL, Z_CHANNEL):
            raise InvalidArgument(f"unknown channel {self.channel!r}")
        if not 0 <= self.index < len(self.values):
            raise IndexError(f"frame index {self.index} outside stored range "
                             f"[0, {len(self.values) - 1}]")

    def lookup(self, offset: int) -> np.ndarray:
        """Value at grid index ``index + offset`` with the extension rule."""
        j = self.index + offset
        if j < 0:
            if self.channel == Y_CHANNEL:
                return self.values[0]
            return np.zeros_like(self.values[0])
        if j >= len(self.values):
            raise IndexError(f"segment read at index {j} beyond stored range")
        return self.values[j]

    def at(self, index: int) -> "SegmentFrame":
        return SegmentFrame(self.values, index, self.channel)


def delay_average(frame: SegmentFrame, measure: DelayMeasure,
                  transform: Optional[Callable[[np.ndarray], np.ndarray]] = None):
    """Average ``transform(value(t_i + u))`` against the atoms of ``measure``.

    Works elementwise over whatever trailing shape the stored values have
    (paths, components).
    """
    total = None
    for lag, w, off in zip(measure.lags, measure.weights, measure.offsets):
        # a lag that is not a grid multiple means the measure was built for another grid
        assert abs(lag - off * measure.dt) <= 1e-9 * max(measure.dt, abs(lag)), \
            "delay measure lag is not aligned with its grid"
        v = frame.lookup(off)
        if transform is not None:
            v = transform(v)
        term = w * v
        total = term if total is None else total + term
    return total


def fubini_identity_check(values, measure: DelayMeasure, grid: TimeGrid,
                          channel: str = Y_CHANNEL) -> Tuple[float, float]:
    """Both sides of the delay-integral interchange on the grid.

    ``lhs`` integrates in ``s`` first and averages over lags inside;
    ``rhs`` averages over lags outside and integrates the shifted window
    ``[u, T + u)`` inside.  Both use left-point sums.
    """
    h = np.asarray(values, dtype=float)
    if h.ndim != 1:
        raise InvalidArgument("values must be a one-dimensional grid array")
    expected = grid.n_points if channel == Y_CHANNEL else grid.n_steps
    if len(h) != expected:
        raise InvalidArgument(f"values must have {expected} entries, got {len(h)}")
    dt = grid.dt
    N = grid.n_steps

    def ext(m: int) -> float:
        if m < 0:
            return float(h[0]) if channel == Y_CHANNEL else 0.0
        return float(h[m])

    lhs = 0.0
    for i in range(N):
        inner = 0.0
        for w, off in zip(measure.weights, measure.offsets):
            inner += w * ext(i + off)
        lhs += inner * dt

    rhs = 0.0
    for w, off in zip(measure.weights, measure.offsets):
        shifted = 0.0
        for m in range(off, N + off):
            shifted += ext(m) * dt
        rhs += w * shifted
    return lhs, rhs
