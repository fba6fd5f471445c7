"""Carry a binary vessel map across modalities with an estimated transform."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .geometry import TransformParams, apply
from .morphvessel import closing, square_se
from .raster import as_gray, as_mask, mask_to_points, save_gray, save_mask

__all__ = ["TrainingPair", "warp_mask", "overlap_mask", "make_training_pair", "write_training_pair"]

_CLOSE3 = square_se(3)


@dataclass
class TrainingPair:
    image: np.ndarray
    labels: np.ndarray
    roi: np.ndarray

    def __post_init__(self):
        if not (self.image.shape == self.labels.shape == self.roi.shape):
            raise ValueError("image, labels and roi must share dimensions")


def warp_mask(mask, t: TransformParams, out_w: int, out_h: int) -> np.ndarray:
    """Forward-splat every true pixel through ``t``, then a 3x3 closing.

    Poly2 maps have no closed-form inverse, so pixels are pushed rather than
    pulled; the closing seals the one-pixel holes splatting leaves in thin
    structures.
    """
    m = as_mask(mask)
    out = np.zeros((out_h, out_w), dtype=bool)
    pts = mask_to_points(m)
    if pts.shape[0] == 0:
        return out
    with np.errstate(all="ignore"):
        try:
            mapped = apply(t, pts).reshape(-1, 2)
        except ZeroDivisionError:
            keep = (t.beta[6] * pts[:, 0] + t.beta[7] * pts[:, 1] + 1.0) != 0.0
            mapped = apply(t, pts[keep]).reshape(-1, 2)
    ok = np.all(np.isfinite(mapped), axis=1)
    xi = np.floor(mapped[ok, 0] + 0.5)
    yi = np.floor(mapped[ok, 1] + 0.5)
    inside = (xi >= 0) & (xi < out_w) & (yi >= 0) & (yi < out_h)
    out[yi[inside].astype(np.int64), xi[inside].astype(np.int64)] = True
    return closing(out, _CLOSE3)


def overlap_mask(src_fov, t: TransformParams, dst_fov) -> np.ndarray:
    """Pixels imaged in both modalities: warped source FOV AND destination FOV."""
    dst = as_mask(dst_fov)
    h, w = dst.shape
    return warp_mask(src_fov, t, w, h) & dst


def make_training_pair(fa, cf_vessels, t: TransformParams, cf_fov=None, fa_fov=None) -> TrainingPair:
    """Transferred labels on the FA frame, restricted to the common field of view.

    Missing FOV masks default to the full frame of their image.
    """
    img = as_gray(fa)
    vessels = as_mask(cf_vessels)
    cf_fov = np.ones(vessels.shape, dtype=bool) if cf_fov is None else as_mask(cf_fov)
    fa_fov = np.ones(img.shape, dtype=bool) if fa_fov is None else as_mask(fa_fov)
    if cf_fov.shape != vessels.shape:
        raise ValueError("CF FOV and CF vessel map differ in shape")
    if fa_fov.shape != img.shape:
        raise ValueError("FA FOV and FA image differ in shape")
    h, w = img.shape
    roi = overlap_mask(cf_fov, t, fa_fov)
    labels = warp_mask(vessels, t, w, h) & roi
    return TrainingPair(img, labels, roi)


def write_training_pair(pair: TrainingPair, prefix: str, extra: dict | None = None) -> dict:
    """Write ``<prefix>_img.png``, ``_lbl.png``, ``_roi.png`` and a JSON manifest entry."""
    paths = {k: f"{prefix}_{k}.png" for k in ("img", "lbl", "roi")}
    parent = os.path.dirname(os.path.abspath(prefix))
    os.makedirs(parent, exist_ok=True)
    save_gray(pair.image, paths["img"])
    save_mask(pair.labels, paths["lbl"])
    save_mask(pair.roi, paths["roi"])
    entry = {
        "image": paths["img"],
        "labels": paths["lbl"],
        "roi": paths["roi"],
        "label_pixels": int(pair.labels.sum()),
        "roi_pixels": int(pair.roi.sum()),
        **(extra or {}),
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(entry, fh, indent=2)
    return entry
