"""Exact squared Euclidean distance transform with nearest-point identities.

Separable two-pass algorithm: a per-column nearest-feature scan followed by
a per-row lower envelope of parabolas (Felzenszwalb & Huttenlocher). Ties
between equidistant features resolve to the smallest ``(y, x)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

__all__ = ["DistanceField", "distance_field"]


@numba.njit(cache=True)
def _column_pass(feat):
    h, w = feat.shape
    g = np.zeros((h, w), dtype=np.int64)
    row = np.full((h, w), -1, dtype=np.int64)
    for x in range(w):
        last = -1
        for y in range(h):
            if feat[y, x]:
                last = y
            row[y, x] = last
        nxt = -1
        for y in range(h - 1, -1, -1):
            if feat[y, x]:
                nxt = y
            above = row[y, x]
            if above < 0:
                row[y, x] = nxt
            elif nxt >= 0 and nxt - y < y - above:
                # strictly closer below; equal distance keeps the smaller row
                row[y, x] = nxt
            r = row[y, x]
            if r >= 0:
                g[y, x] = (y - r) * (y - r)
    return g, row


@numba.njit(cache=True)
def _row_pass(g, row):
    h, w = g.shape
    dist2 = np.zeros((h, w), dtype=np.int64)
    nx = np.zeros((h, w), dtype=np.int64)
    ny = np.zeros((h, w), dtype=np.int64)
    v = np.zeros(w, dtype=np.int64)
    z = np.zeros(w + 1, dtype=np.float64)
    cand = np.zeros(w, dtype=np.int64)
    for y in range(h):
        k = -1
        for q in range(w):
            if row[y, q] < 0:
                continue
            fq = g[y, q] + q * q
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            while True:
                p = v[k]
                s = (fq - (g[y, p] + p * p)) / (2.0 * (q - p))
                # equality keeps the old parabola as a zero-width piece so
                # that exact ties stay visible to the query below
                if s < z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        j = 0
        for x in range(w):
            while z[j + 1] <= x:
                j += 1
            nc = 0
            cand[nc] = v[j]
            nc += 1
            back = j
            while back > 0 and z[back] == x:
                back -= 1
                cand[nc] = v[back]
                nc += 1
            best = -1
            best_d = 0
            for c in range(nc):
                xc = cand[c]
                d = g[y, xc] + (x - xc) * (x - xc)
                if best < 0 or d < best_d or (
                    d == best_d
                    and (row[y, xc] < row[y, best] or (row[y, xc] == row[y, best] and xc < best))
                ):
                    best = xc
                    best_d = d
            dist2[y, x] = best_d
            nx[y, x] = best
            ny[y, x] = row[y, best]
    return dist2, nx, ny


@dataclass(frozen=True)
class DistanceField:
    width: int
    height: int
    dist2: np.ndarray  # (h, w) int64, squared pixels
    nearest_x: np.ndarray  # (h, w) int64
    nearest_y: np.ndarray

    @property
    def nearest(self) -> np.ndarray:
        """``(h, w, 2)`` array of the nearest reference point ``(x, y)``."""
        return np.stack([self.nearest_x, self.nearest_y], axis=-1)


def distance_field(reference, width: int | None = None, height: int | None = None) -> DistanceField:
    """Distance field of a reference mask, or of a point set on a ``width x height`` grid."""
    ref = np.asarray(reference)
    if ref.ndim == 2 and ref.dtype == bool:
        feat = ref
        if width is not None and (width, height) != (feat.shape[1], feat.shape[0]):
            raise ValueError("mask shape disagrees with width/height")
    else:
        if width is None or height is None:
            raise ValueError("width and height are required for point input")
        pts = np.asarray(reference, dtype=np.float64).reshape(-1, 2)
        xi = np.floor(pts[:, 0] + 0.5).astype(np.int64)
        yi = np.floor(pts[:, 1] + 0.5).astype(np.int64)
        if np.any((xi < 0) | (xi >= width) | (yi < 0) | (yi >= height)):
            raise ValueError("reference points must lie inside the grid")
        feat = np.zeros((height, width), dtype=bool)
        feat[yi, xi] = True
    if not feat.any():
        raise ValueError("empty reference set")
    g, row = _column_pass(np.ascontiguousarray(feat))
    dist2, nx, ny = _row_pass(g, row)
    h, w = feat.shape
    return DistanceField(w, h, dist2, nx, ny)
