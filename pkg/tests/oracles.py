"""Independent reference implementations used by the tests.

Nothing here imports the package's own geometry or metric code; each oracle
recomputes its answer from first principles (exact fractions, exhaustive
enumeration or plain scalar loops).
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import torch

# ---------------------------------------------------------------- raster


def _snap(v: float, n: int) -> int:
    return math.floor(Fraction(v) * (n - 1) + Fraction(1, 2))


def pixel_on_segment(px: int, py: int, x0: int, y0: int, x1: int, y1: int) -> bool:
    """Is pixel ``(px, py)`` the one chosen for its major-axis column?

    The ideal line is evaluated exactly at the pixel's major coordinate and the
    pixel qualifies when its centre lies within half a pixel along the minor
    axis (a tie at exactly 1/2 goes to the larger index).
    """
    dx, dy = x1 - x0, y1 - y0
    if dx == 0 and dy == 0:
        return (px, py) == (x0, y0)
    if abs(dx) >= abs(dy):
        if not min(x0, x1) <= px <= max(x0, x1):
            return False
        ideal = y0 + Fraction(px - x0) * dy / dx
        return py == math.floor(ideal + Fraction(1, 2))
    if not min(y0, y1) <= py <= max(y0, y1):
        return False
    ideal = x0 + Fraction(py - y0) * dx / dy
    return px == math.floor(ideal + Fraction(1, 2))


def pixel_near_segment(px: int, py: int, x0: int, y0: int, x1: int, y1: int, radius=Fraction(1, 2)) -> bool:
    """Euclidean test: is the pixel centre within ``radius`` of the segment?"""
    ax, ay = Fraction(px - x0), Fraction(py - y0)
    dx, dy = Fraction(x1 - x0), Fraction(y1 - y0)
    den = dx * dx + dy * dy
    t = Fraction(0) if den == 0 else min(max((ax * dx + ay * dy) / den, Fraction(0)), Fraction(1))
    ex, ey = ax - t * dx, ay - t * dy
    return ex * ex + ey * ey <= radius * radius


def oracle_mask(points: np.ndarray, H: int, W: int, test=pixel_on_segment) -> np.ndarray:
    """Brute force over every pixel and every pen-down segment."""
    mask = np.zeros((H, W), dtype=bool)
    segs = []
    for t in range(len(points) - 1):
        if points[t, 2] == 1:
            segs.append((_snap(points[t, 0], W), _snap(points[t, 1], H), _snap(points[t + 1, 0], W),
                         _snap(points[t + 1, 1], H)))
    for py in range(H):
        for px in range(W):
            mask[py, px] = any(test(px, py, *s) for s in segs)
    return mask


# ---------------------------------------------------------------- RDP


def _exact_dist2(p, a, b) -> Fraction:
    p, a, b = [tuple(Fraction(float(c)) for c in q) for q in (p, a, b)]
    abx, aby = b[0] - a[0], b[1] - a[1]
    n2 = abx * abx + aby * aby
    if n2 == 0:
        return (p[0] - a[0]) ** 2 + (p[1] - a[1]) ** 2
    cross = abx * (p[1] - a[1]) - aby * (p[0] - a[0])
    return cross * cross / n2


def _consistent(pts, lo, hi, chosen: set, eps2: Fraction) -> bool:
    inner = range(lo + 1, hi)
    if not inner:
        return True
    d = [_exact_dist2(pts[i], pts[lo], pts[hi]) for i in inner]
    m = max(d)
    if m <= eps2:
        return not any(i in chosen for i in inner)
    split = lo + 1 + d.index(m)
    return split in chosen and _consistent(pts, lo, split, chosen, eps2) and _consistent(pts, split, hi, chosen, eps2)


def rdp_bruteforce(pts: np.ndarray, eps: float) -> list[int]:
    """Enumerate every endpoint-preserving subset; return the one the split rule generates."""
    n = len(pts)
    if n <= 2:
        return list(range(n))
    eps2 = Fraction(float(eps)) ** 2
    hits = []
    for r in range(n - 1):
        for inner in itertools.combinations(range(1, n - 1), r):
            chosen = {0, n - 1, *inner}
            if _consistent(pts, 0, n - 1, chosen, eps2):
                hits.append(sorted(chosen))
    assert len(hits) == 1, hits
    return hits[0]


# ---------------------------------------------------------------- retrieval


def retrieval_bruteforce(q, q_labels, q_ids, g, g_labels, g_ids, top=10):
    """Sort the full pairwise distance list per query; AP from its textbook formula."""
    accs, aps, ranked = [], [], []
    for i in range(len(q)):
        cands = []
        for j in range(len(g)):
            if g_ids[j] == q_ids[i]:
                continue
            d = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(q[i], g[j])))
            cands.append((d, g_ids[j], g_labels[j]))
        cands.sort(key=lambda c: (c[0], c[1]))
        ranked.append([c[1] for c in cands])
        rel = [c[2] == q_labels[i] for c in cands[:top]]
        accs.append(1.0 if rel and rel[0] else 0.0)
        hits, precisions = 0, []
        for k, r in enumerate(rel, start=1):
            if r:
                hits += 1
                precisions.append(hits / k)
        aps.append(sum(precisions) / hits if hits else 0.0)
    return ranked, sum(accs) / len(accs), sum(aps) / len(aps)


# ---------------------------------------------------------------- text


def levenshtein_bruteforce(a: str, b: str) -> int:
    """Plain recursion over the three edit moves (fine for short strings)."""
    memo = {}

    def go(i, j):
        if (i, j) in memo:
            return memo[i, j]
        if i == len(a):
            r = len(b) - j
        elif j == len(b):
            r = len(a) - i
        else:
            r = min(go(i + 1, j) + 1, go(i, j + 1) + 1, go(i + 1, j + 1) + (a[i] != b[j]))
        memo[i, j] = r
        return r

    return go(0, 0)


# ---------------------------------------------------------------- scalar loss oracles


def log_softmax_scalar(logits) -> list[float]:
    m = max(logits)
    s = sum(math.exp(v - m) for v in logits)
    return [v - m - math.log(s) for v in logits]


def vectorization_loss_scalar(preds, targets, mask):
    coord, pen, n = 0.0, 0.0, 0.0
    for p, t, m in zip(preds, targets, mask):
        if not m:
            continue
        n += 1
        coord += (p[0] - t[0]) ** 2 + (p[1] - t[1]) ** 2
        ls = log_softmax_scalar(list(p[2:5]))
        pen -= sum(q * l for q, l in zip(t[2:5], ls))
    return coord / n, pen / n


def cross_entropy_scalar(logits, labels) -> float:
    return sum(-log_softmax_scalar(list(row))[y] for row, y in zip(logits, labels)) / len(labels)


def triplet_scalar(a, p, n, margin) -> float:
    total = 0.0
    for ai, pi, ni in zip(a, p, n):
        dp = math.sqrt(sum((x - y) ** 2 for x, y in zip(ai, pi)))
        dn = math.sqrt(sum((x - y) ** 2 for x, y in zip(ai, ni)))
        total += max(0.0, dp - dn + margin)
    return total / len(a)


# ---------------------------------------------------------------- finite differences


def fd_grad(fn, x: torch.Tensor, step: float) -> torch.Tensor:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``x`` (modified in place, restored)."""
    g = torch.zeros_like(x)
    flat, gflat = x.data.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + step
        up = float(fn())
        flat[i] = old - step
        down = float(fn())
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return g


def rel_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-8) -> float:
    """Max over entries of |a-b| / max(|a|, |b|, floor)."""
    den = torch.maximum(torch.maximum(a.abs(), b.abs()), torch.full_like(a, floor))
    return float(((a - b).abs() / den).max()) if a.numel() else 0.0
