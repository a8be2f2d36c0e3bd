"""Pen-stroke sequences in the five-element (x, y, q1, q2, q3) format.

A point's pen state describes the segment *leaving* that point:

* ``PEN_DOWN`` (q1) -- the pen stays on the paper, connect to the next point
* ``PEN_UP`` (q2)   -- the stroke ends here, the pen is lifted
* ``END`` (q3)      -- the drawing ends here

Every function in this module is pure; sequences are immutable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateCanvas,
    EmptyInput,
    InvalidSequence,
    NegativeEpsilon,
    NonFiniteCoordinate,
)


class PenState(enum.IntEnum):
    PEN_DOWN = 0
    PEN_UP = 1
    END = 2

    def one_hot(self) -> np.ndarray:
        v = np.zeros(3)
        v[self] = 1.0
        return v


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StrokeSequence:
    """Validated ``(T, 5)`` array of pen states.

    The last row, and only the last row, carries the end-of-drawing flag.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 5:
            raise InvalidSequence(f"expected (T, 5) array, got shape {pts.shape}")
        if pts.shape[0] == 0:
            raise EmptyInput("sequence has no points")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteCoordinate("sequence contains non-finite values")
        q = pts[:, 2:]
        if not (np.all((q == 0) | (q == 1)) and np.all(q.sum(axis=1) == 1)):
            raise InvalidSequence("pen states must be one-hot")
        ends = np.flatnonzero(q[:, PenState.END] == 1)
        if len(ends) != 1 or ends[0] != len(pts) - 1:
            raise InvalidSequence("exactly the last point must carry the end flag")
        object.__setattr__(self, "points", _readonly(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, StrokeSequence):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    __hash__ = None

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def states(self) -> np.ndarray:
        """Pen state index per point (0, 1 or 2)."""
        return np.argmax(self.points[:, 2:], axis=1)

    def strokes(self) -> list[np.ndarray]:
        """Split into pen-down polylines, one ``(n, 2)`` array per stroke."""
        out, start = [], 0
        for i, s in enumerate(self.states):
            if s != PenState.PEN_DOWN:
                out.append(self.xy[start : i + 1])
                start = i + 1
        return out

    def with_xy(self, xy: np.ndarray) -> "StrokeSequence":
        pts = np.array(self.points)
        pts[:, :2] = xy
        return StrokeSequence(pts)

    def as_float32(self) -> "StrokeSequence":
        """Round coordinates through float32 so on-disk and in-memory views agree."""
        return StrokeSequence(self.points.astype(np.float32).astype(np.float64))


@dataclass(frozen=True, eq=False)
class OffsetSequence:
    """Origin plus per-point ``(dx, dy, q1, q2, q3)`` rows; the first delta is zero."""

    origin: tuple[float, float]
    deltas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "deltas", _readonly(self.deltas))

    def __len__(self) -> int:
        return self.deltas.shape[0]


def from_polylines(strokes: Sequence[Sequence[Sequence[float]]]) -> StrokeSequence:
    """Build a sequence from a list of strokes, each a list of ``(x, y)`` points."""
    if len(strokes) == 0:
        raise EmptyInput("no strokes")
    rows = []
    for k, stroke in enumerate(strokes):
        pts = np.asarray(stroke, dtype=np.float64).reshape(-1, 2) if len(stroke) else None
        if pts is None or len(pts) == 0:
            raise EmptyInput(f"stroke {k} is empty")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteCoordinate(f"stroke {k} has non-finite coordinates")
        for i, (x, y) in enumerate(pts):
            if i < len(pts) - 1:
                state = PenState.PEN_DOWN
            elif k < len(strokes) - 1:
                state = PenState.PEN_UP
            else:
                state = PenState.END
            rows.append([x, y, *state.one_hot()])
    return StrokeSequence(np.array(rows))


def from_strokes(strokes: Iterable[np.ndarray]) -> StrokeSequence:
    return from_polylines([np.asarray(s) for s in strokes])


def normalize(seq: StrokeSequence, H: int, W: int) -> StrokeSequence:
    """Map pixel coordinates on an ``H x W`` canvas to the unit square.

    Pixel extremes map exactly onto 0 and 1.
    """
    if H < 2 or W < 2:
        raise DegenerateCanvas(f"canvas {H}x{W} is smaller than 2x2")
    xy = seq.xy / np.array([W - 1, H - 1], dtype=np.float64)
    return seq.with_xy(xy)


def denormalize(seq: StrokeSequence, H: int, W: int) -> StrokeSequence:
    if H < 2 or W < 2:
        raise DegenerateCanvas(f"canvas {H}x{W} is smaller than 2x2")
    return seq.with_xy(seq.xy * np.array([W - 1, H - 1], dtype=np.float64))


def to_offsets(seq: StrokeSequence) -> OffsetSequence:
    xy = seq.xy
    deltas = np.array(seq.points)
    deltas[0, :2] = 0.0
    deltas[1:, :2] = xy[1:] - xy[:-1]
    return OffsetSequence(origin=(float(xy[0, 0]), float(xy[0, 1])), deltas=deltas)


def to_absolute(off: OffsetSequence) -> StrokeSequence:
    pts = np.array(off.deltas)
    pts[:, :2] = np.cumsum(off.deltas[:, :2], axis=0) + np.asarray(off.origin)
    return StrokeSequence(pts)


def _perpendicular_distances(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    norm = math.hypot(ab[0], ab[1])
    if norm == 0.0:
        return np.hypot(pts[:, 0] - a[0], pts[:, 1] - a[1])
    cross = ab[0] * (pts[:, 1] - a[1]) - ab[1] * (pts[:, 0] - a[0])
    return np.abs(cross) / norm


def rdp_indices(pts: np.ndarray, epsilon: float) -> list[int]:
    """Indices retained by Ramer-Douglas-Peucker on a single polyline."""
    n = len(pts)
    if n <= 2:
        return list(range(n))
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        d = _perpendicular_distances(pts[lo + 1 : hi], pts[lo], pts[hi])
        m = int(np.argmax(d))
        if d[m] > epsilon:
            split = lo + 1 + m
            keep[split] = True
            stack.append((lo, split))
            stack.append((split, hi))
    return np.flatnonzero(keep).tolist()


def rdp_simplify(seq: StrokeSequence, epsilon: float) -> StrokeSequence:
    """Simplify each pen-down stroke independently; pen lifts are never crossed."""
    if epsilon < 0:
        raise NegativeEpsilon(f"epsilon must be >= 0, got {epsilon}")
    return from_polylines([s[rdp_indices(s, epsilon)] for s in seq.strokes()])


def pad_or_truncate(seq: StrokeSequence, t_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-length ``(t_max, 5)`` array plus a 0/1 mask of real points.

    Padding repeats the terminal point (end flag set, mask 0). Truncation keeps
    the first ``t_max`` points and forces the end flag onto the last of them.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    n = len(seq)
    out = np.empty((t_max, 5))
    mask = np.zeros(t_max)
    if n >= t_max:
        out[:] = seq.points[:t_max]
        out[-1, 2:] = PenState.END.one_hot()
        mask[:] = 1.0
    else:
        out[:n] = seq.points
        out[n:] = seq.points[-1]
        mask[:n] = 1.0
    return out, mask
