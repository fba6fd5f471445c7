"""Unsupervised vessel detection with a bank of oriented line top-hats.

Each scale of a Gaussian pyramid is filtered with the modified top-hat

    X - min(opening(closing(X, S), S), X)

for linear structuring elements ``S`` at several orientations. Responses
are combined by per-pixel maximum, binarized against a local mean, cleaned
by area opening and finally OR-ed across scales at full resolution.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from ._parallel import ordered_map
from .raster import as_gray, pyramid_expand, pyramid_reduce

__all__ = [
    "StructuringElement",
    "MorphParams",
    "linear_se",
    "square_se",
    "erode",
    "dilate",
    "closing",
    "opening",
    "modified_tophat",
    "combine_orientations",
    "adaptive_threshold",
    "area_open",
    "detect_vessels",
    "ScaleResult",
    "detect_scales",
]


@dataclass(frozen=True)
class StructuringElement:
    offsets: tuple[tuple[int, int], ...]  # (dx, dy)
    length: int
    angle: float

    def __len__(self) -> int:
        return len(self.offsets)


@dataclass
class MorphParams:
    num_scales: int = 2
    downsample_rate: int = 2
    angles: list[float] = field(default_factory=lambda: [20.0 * k for k in range(9)])
    se_length_per_scale: list[int] = field(default_factory=lambda: [6, 3])
    threshold_window: int = 31
    threshold_offset: float = 0.01
    min_area: int = 30

    def __post_init__(self):
        self.angles = [float(a) for a in self.angles]
        self.se_length_per_scale = [int(v) for v in self.se_length_per_scale]
        self.validate()

    def validate(self) -> None:
        if self.num_scales < 1:
            raise ValueError("num_scales must be >= 1")
        if len(self.se_length_per_scale) != self.num_scales:
            raise ValueError("se_length_per_scale needs one entry per scale")
        if not self.angles or any(not 0.0 <= a < 180.0 for a in self.angles):
            raise ValueError("angles must be non-empty and lie in [0, 180)")
        r = self.downsample_rate
        if r < 2 or r & (r - 1):
            raise ValueError("downsample_rate must be a power of two >= 2")
        if self.threshold_window < 3 or self.threshold_window % 2 == 0:
            raise ValueError("threshold_window must be odd and >= 3")
        if self.min_area < 1:
            raise ValueError("min_area must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MorphParams":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown MorphParams fields: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "MorphParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def linear_se(length: int, angle: float) -> StructuringElement:
    """Digital line of ``length`` pixels through the origin.

    One pixel per step along the dominant axis; the major coordinates run
    from ``-(L-1)/2`` to ``+(L-1)/2`` rounded half-up, so even lengths are
    shifted one pixel toward +x / +y. ``angle`` is in degrees with y down,
    so 45 degrees runs toward (+1, +1).
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if not 0.0 <= angle < 180.0:
        raise ValueError("angle must lie in [0, 180)")
    rad = math.radians(angle)
    c, s = math.cos(rad), math.sin(rad)
    offsets = []
    for i in range(length):
        m = math.floor(-(length - 1) / 2.0 + i + 0.5)
        if abs(c) >= abs(s):
            offsets.append((m, _round_half_away(m * s / c)))
        else:
            offsets.append((_round_half_away(m * c / s), m))
    return StructuringElement(tuple(offsets), length, float(angle))


def square_se(size: int = 3) -> StructuringElement:
    r = size // 2
    offs = tuple((dx, dy) for dy in range(-r, size - r) for dx in range(-r, size - r))
    return StructuringElement(offs, size, 0.0)


def _shift_reduce(arr: np.ndarray, offsets, reduce, fill) -> np.ndarray:
    """out[p] = reduce over in-bounds arr[p + o]; out-of-bounds samples ignored."""
    h, w = arr.shape
    out = np.full(arr.shape, fill, dtype=arr.dtype)
    for dx, dy in offsets:
        if abs(dx) >= w or abs(dy) >= h:
            continue
        ty = slice(max(0, -dy), min(h, h - dy))
        tx = slice(max(0, -dx), min(w, w - dx))
        sy = slice(max(0, dy), min(h, h + dy))
        sx = slice(max(0, dx), min(w, w + dx))
        reduce(out[ty, tx], arr[sy, sx], out=out[ty, tx])
    return out


def _fills(arr):
    if arr.dtype == bool:
        return True, False
    return np.inf, -np.inf


def erode(img: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Flat erosion: min of ``img[p + s]`` over the element, ignoring the outside."""
    hi, _ = _fills(img)
    return _shift_reduce(img, se.offsets, np.minimum, hi)


def dilate(img: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Flat dilation: max of ``img[p - s]`` over the element, ignoring the outside."""
    _, lo = _fills(img)
    reflected = [(-dx, -dy) for dx, dy in se.offsets]
    return _shift_reduce(img, reflected, np.maximum, lo)


def closing(img, se):
    return erode(dilate(img, se), se)


def opening(img, se):
    return dilate(erode(img, se), se)


def modified_tophat(img, se: StructuringElement) -> np.ndarray:
    x = np.asarray(img, dtype=np.float64)
    y = opening(closing(x, se), se)
    return x - np.minimum(y, x)


def combine_orientations(responses) -> np.ndarray:
    responses = [np.asarray(r, dtype=np.float64) for r in responses]
    if not responses:
        raise ValueError("need at least one response")
    shape = responses[0].shape
    if any(r.shape != shape for r in responses):
        raise ValueError("orientation responses differ in shape")
    out = responses[0].copy()
    for r in responses[1:]:
        np.maximum(out, r, out=out)
    return out


def adaptive_threshold(response, window: int, offset: float) -> np.ndarray:
    """``response > local_mean + offset`` with an edge-replicated square window."""
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    r = np.asarray(response, dtype=np.float64)
    local_mean = ndimage.uniform_filter(r, size=window, mode="nearest")
    return r > local_mean + offset


_EIGHT = np.ones((3, 3), dtype=bool)


def area_open(mask, min_area: int) -> np.ndarray:
    """Drop 8-connected components with fewer than ``min_area`` pixels."""
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    m = np.asarray(mask, dtype=bool)
    if min_area == 1:
        return m.copy()
    labels, n = ndimage.label(m, structure=_EIGHT)
    if n == 0:
        return m.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels]


@dataclass
class ScaleResult:
    """Full-resolution outputs of one pyramid level."""

    level: int
    mask: np.ndarray
    response: np.ndarray


def _expand_to(arr, shapes):
    # walk back up the pyramid one octave at a time
    for h, w in reversed(shapes):
        arr = pyramid_expand(arr, w, h)
    return arr


def detect_scales(img, params: MorphParams | None = None) -> list[ScaleResult]:
    params = params or MorphParams()
    x = as_gray(img)
    steps = int(math.log2(params.downsample_rate))

    results = []
    shapes: list[tuple[int, int]] = []
    level_img = x
    for s in range(params.num_scales):
        if s > 0:
            for _ in range(steps):
                if min(level_img.shape) < 2:
                    raise ValueError(
                        f"image {x.shape} too small for {params.num_scales} scales"
                    )
                shapes.append(level_img.shape)
                level_img = pyramid_reduce(level_img)
        length = params.se_length_per_scale[s]
        ses = [linear_se(length, a) for a in params.angles]
        responses = ordered_map(lambda se: modified_tophat(level_img, se), ses)
        response = combine_orientations(responses)
        binary = adaptive_threshold(
            response, params.threshold_window, params.threshold_offset
        )
        binary = area_open(binary, params.min_area)
        results.append(
            ScaleResult(s, _expand_to(binary, shapes), _expand_to(response, shapes))
        )
    return results


def detect_vessels(img, params: MorphParams | None = None):
    """Return ``(mask, soft)`` for a gray image.

    The mask is the union of every scale's binary map; the soft map is the
    per-pixel maximum of the expanded orientation-combined responses.
    """
    scales = detect_scales(img, params)
    mask = np.zeros(scales[0].mask.shape, dtype=bool)
    soft = np.zeros(scales[0].mask.shape)
    for sr in scales:
        mask |= sr.mask
        np.maximum(soft, sr.response, out=soft)
    return mask, np.clip(soft, 0.0, 1.0)
