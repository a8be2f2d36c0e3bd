"""Binary Bresenham rendering of stroke sequences.

Coordinates in the unit square are snapped to pixel centres with
``floor(v * (n - 1) + 1/2)``. Along each segment the minor-axis pixel is
``floor(ideal + 1/2)``, so exact half-pixel ties go to the larger index
regardless of drawing direction. Everything after snapping is integer
arithmetic, hence byte-identical output on every platform.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BatchItemError, InvalidRasterConfig, UnnormalizedInput
from .strokes import PenState, StrokeSequence

NORMALIZED_TOL = 1e-9


@dataclass(frozen=True)
class RasterConfig:
    H: int = 64
    W: int = 64
    channels: int = 1
    stroke_width: int = 1
    background: float = 1.0
    ink: float = 0.0

    def __post_init__(self):
        if self.H < 8 or self.W < 8:
            raise InvalidRasterConfig(f"canvas {self.H}x{self.W} is smaller than 8x8")
        if self.channels not in (1, 3):
            raise InvalidRasterConfig("channels must be 1 or 3")
        if self.stroke_width < 1:
            raise InvalidRasterConfig("stroke_width must be >= 1")
        for name in ("background", "ink"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidRasterConfig(f"{name} must lie in [0, 1]")
        if self.background == self.ink:
            raise InvalidRasterConfig("background and ink must differ")

    def to_dict(self) -> dict:
        return asdict(self)


def snap(v: float, n: int) -> int:
    return math.floor(v * (n - 1) + 0.5)


def bresenham(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Integer pixels ``(x, y)`` covering the segment, endpoints included."""
    if abs(x1 - x0) >= abs(y1 - y0):
        return [(a, b) for a, b in _major_walk(x0, y0, x1, y1)]
    return [(b, a) for a, b in _major_walk(y0, x0, y1, x1)]


def _major_walk(a0: int, b0: int, a1: int, b1: int):
    # a is the major axis. b(a) = floor(b0 + k*db/da + 1/2) via an error term.
    if a1 < a0:
        a0, b0, a1, b1 = a1, b1, a0, b0
    da = a1 - a0
    db = b1 - b0
    if da == 0:
        yield a0, b0
        return
    two_da = 2 * da
    b = b0
    err = da  # numerator of the fractional part, kept in [0, 2*da)
    for a in range(a0, a1 + 1):
        yield a, b
        err += 2 * db
        while err >= two_da:
            err -= two_da
            b += 1
        while err < 0:
            err += two_da
            b -= 1


def ink_mask(seq: StrokeSequence, H: int, W: int, stroke_width: int = 1) -> np.ndarray:
    """Boolean ``H x W`` mask of inked pixels (row = y, column = x)."""
    xy = seq.xy
    if np.any(xy < -NORMALIZED_TOL) or np.any(xy > 1 + NORMALIZED_TOL):
        raise UnnormalizedInput("coordinates must lie in [0, 1]")
    xy = np.clip(xy, 0.0, 1.0)
    px = [snap(float(x), W) for x in xy[:, 0]]
    py = [snap(float(y), H) for y in xy[:, 1]]
    mask = np.zeros((H, W), dtype=bool)
    states = seq.states
    for t in range(len(seq) - 1):
        if states[t] != PenState.PEN_DOWN:
            continue
        for x, y in bresenham(px[t], py[t], px[t + 1], py[t + 1]):
            mask[y, x] = True
    if stroke_width > 1:
        lo, hi = -((stroke_width - 1) // 2), stroke_width // 2
        grown = np.zeros_like(mask)
        ys, xs = np.nonzero(mask)
        for dy in range(lo, hi + 1):
            for dx in range(lo, hi + 1):
                yy, xx = ys + dy, xs + dx
                ok = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
                grown[yy[ok], xx[ok]] = True
        mask = grown
    return mask


def render(seq: StrokeSequence, cfg: RasterConfig) -> np.ndarray:
    """Render to an ``H x W x channels`` float32 image in [0, 1]."""
    mask = ink_mask(seq, cfg.H, cfg.W, cfg.stroke_width)
    img = np.where(mask, np.float32(cfg.ink), np.float32(cfg.background)).astype(np.float32)
    return np.repeat(img[:, :, None], cfg.channels, axis=2)


def render_batch(seqs: Sequence[StrokeSequence], cfg: RasterConfig) -> list[np.ndarray]:
    out = []
    for i, s in enumerate(seqs):
        try:
            out.append(render(s, cfg))
        except Exception as e:  # noqa: BLE001 - re-raised with the item index
            raise BatchItemError(i, e) from e
    return out


def to_uint8(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        img = img[:, :, 0]
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_pgm(img: np.ndarray, path: str | Path) -> None:
    """Binary (P5) 8-bit greyscale; the first channel is written."""
    g = to_uint8(img)
    h, w = g.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(g.tobytes())


def load_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = (int(f) for f in fields[1:])
    start = pos + 1  # exactly one whitespace byte precedes the raster
    pix = np.frombuffer(data[start : start + w * h], dtype=np.uint8).reshape(h, w)
    return pix.astype(np.float32) / maxval


def save_png(img: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(img), mode="L").save(path)
