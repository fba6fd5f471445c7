"""Synthetic vessel phantoms with exact ground truth.

Random draws use numpy's PCG64 generator. Every tree node seeds its own
generator from ``(seed, tree, level, path)`` so that a deeper tree is a
strict superset of a shallower one built from the same seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import TransformParams, apply
from .raster import as_mask, mask_to_points

__all__ = ["PhantomSpec", "WarpSpec", "gen_phantom", "perturb", "vessel_segments"]

_NOISE_STREAM = 0x6E6F697365


@dataclass
class PhantomSpec:
    seed: int = 0
    width: int = 512
    height: int = 512
    branches: int = 3
    depth: int = 5
    root_width: float = 4.0
    width_decay: float = 0.75
    contrast_falloff: float = 0.5
    noise_sigma: float = 0.03
    intensity: float = 0.8

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("phantom must be at least 8x8")
        if self.branches < 1 or self.depth < 1:
            raise ValueError("branches and depth must be >= 1")
        if not 0.0 < self.width_decay < 1.0:
            raise ValueError("width_decay must lie in (0, 1)")
        if not 0.0 < self.contrast_falloff <= 1.0:
            raise ValueError("contrast_falloff must lie in (0, 1]")
        if self.noise_sigma < 0 or self.root_width <= 0:
            raise ValueError("noise_sigma must be >= 0 and root_width > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class WarpSpec:
    truth: TransformParams
    jitter_sigma: float = 0.0
    outlier_fraction: float = 0.0
    drop_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.truth, dict):
            self.truth = TransformParams.from_dict(self.truth)
        if not 0.0 <= self.outlier_fraction < 1.0 or not 0.0 <= self.drop_fraction < 1.0:
            raise ValueError("outlier_fraction and drop_fraction must lie in [0, 1)")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["truth"] = self.truth.to_dict()
        return d

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _node_rng(seed, tree, level, path):
    return np.random.default_rng(np.random.SeedSequence([seed, tree, level, path]))


def vessel_segments(spec: PhantomSpec) -> list[tuple[float, float, float, float, float]]:
    """Line segments ``(x0, y0, x1, y1, width)`` of the phantom tree."""
    size = min(spec.width, spec.height)
    cx, cy = spec.width * 0.5, spec.height * 0.5
    segs = []

    def grow(tree, level, path, x, y, heading, width, length):
        rng = _node_rng(spec.seed, tree, level, path)
        n_sub = 4
        sub_len = length / n_sub
        for _ in range(n_sub):
            heading += rng.normal(0.0, 0.15)
            nx, ny = x + sub_len * math.cos(heading), y + sub_len * math.sin(heading)
            segs.append((x, y, nx, ny, width))
            x, y = nx, ny
        if level + 1 >= spec.depth:
            return
        spread = rng.uniform(0.35, 0.7)
        tilt = rng.normal(0.0, 0.1)
        for side, sign in enumerate((-1.0, 1.0)):
            grow(tree, level + 1, 2 * path + side, x, y, heading + sign * spread + tilt,
                 width * spec.width_decay, length * rng.uniform(0.6, 0.8))

    root_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xFFFF]))
    ox = cx + root_rng.uniform(-0.05, 0.05) * size
    oy = cy + root_rng.uniform(-0.05, 0.05) * size
    phase = root_rng.uniform(0, 2 * math.pi)
    for tree in range(spec.branches):
        heading = phase + 2 * math.pi * tree / spec.branches
        grow(tree, 0, 1, ox, oy, heading, spec.root_width, 0.22 * size)
    return segs


def _render(segs, width, height) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for x0, y0, x1, y1, w in segs:
        rad = max(w / 2.0, 0.5)
        xa = int(max(math.floor(min(x0, x1) - rad), 0))
        xb = int(min(math.ceil(max(x0, x1) + rad), width - 1))
        ya = int(max(math.floor(min(y0, y1) - rad), 0))
        yb = int(min(math.ceil(max(y0, y1) + rad), height - 1))
        if xa > xb or ya > yb:
            continue
        gx, gy = np.meshgrid(np.arange(xa, xb + 1), np.arange(ya, yb + 1))
        dx, dy = x1 - x0, y1 - y0
        seg2 = dx * dx + dy * dy
        if seg2 > 0:
            t = np.clip(((gx - x0) * dx + (gy - y0) * dy) / seg2, 0.0, 1.0)
        else:
            t = np.zeros(gx.shape)
        px, py = x0 + t * dx - gx, y0 + t * dy - gy
        mask[ya:yb + 1, xa:xb + 1] |= px * px + py * py <= rad * rad
    return mask


def gen_phantom(spec: PhantomSpec):
    """Render ``(image, mask)``.

    Vessel pixels get ``intensity * contrast_falloff ** (r / r_max)`` where
    ``r`` is the distance from the frame center, background is 0, then
    Gaussian noise is added and the result clipped to ``[0, 1]``.
    """
    mask = _render(vessel_segments(spec), spec.width, spec.height)
    yy, xx = np.mgrid[0:spec.height, 0:spec.width]
    r = np.hypot(xx - (spec.width - 1) / 2.0, yy - (spec.height - 1) / 2.0)
    r_max = math.hypot(spec.width / 2.0, spec.height / 2.0)
    contrast = spec.intensity * spec.contrast_falloff ** (r / r_max)
    image = np.where(mask, contrast, 0.0)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _NOISE_STREAM]))
        image = image + rng.normal(0.0, spec.noise_sigma, image.shape)
    return np.clip(image, 0.0, 1.0), mask


def perturb(mask, spec: WarpSpec, return_inliers: bool = False):
    """Warped, jittered, thinned vessel points plus uniform outliers.

    Returns ``(points, truth)``; inliers come first, in mask raster order.
    With ``return_inliers`` a boolean inlier flag per point is appended.
    """
    m = as_mask(mask)
    q = mask_to_points(m)
    n = q.shape[0]
    if n == 0:
        raise ValueError("cannot perturb an empty mask")
    rng = np.random.default_rng(spec.seed)
    n_keep = int(round((1.0 - spec.drop_fraction) * n))
    keep = np.sort(rng.choice(n, n_keep, replace=False)) if n_keep < n else np.arange(n)
    pts = apply(spec.truth, q[keep]).reshape(-1, 2)
    if spec.jitter_sigma > 0:
        pts = pts + rng.normal(0.0, spec.jitter_sigma, pts.shape)
    n_out = int(round(spec.outlier_fraction * n_keep))
    h, w = m.shape
    outliers = rng.uniform([0.0, 0.0], [w - 1.0, h - 1.0], size=(n_out, 2))
    points = np.vstack([pts, outliers])
    if return_inliers:
        inlier = np.zeros(points.shape[0], dtype=bool)
        inlier[:n_keep] = True
        return points, spec.truth, inlier
    return points, spec.truth


def load_spec(path, cls=PhantomSpec):
    with open(path) as fh:
        return cls.from_dict(json.load(fh))
