"""Image and mask containers, PNG I/O and the Gaussian pyramid.

Images are plain 2-D numpy arrays indexed ``[y, x]``:

* gray images and soft maps are ``float64`` with values in ``[0, 1]``
* binary masks are ``bool``
* point sets are ``(N, 2)`` float arrays of ``(x, y)`` pixel-center
  coordinates, origin at the top-left pixel, y pointing down.
"""
from __future__ import annotations

import os

import numpy as np
from PIL import Image

__all__ = [
    "as_gray",
    "as_mask",
    "as_points",
    "load_gray",
    "load_mask",
    "save_gray",
    "save_mask",
    "save_soft",
    "pyramid_reduce",
    "pyramid_expand",
    "mask_to_points",
    "BINOMIAL_KERNEL",
]

BINOMIAL_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def as_gray(img) -> np.ndarray:
    """Validate and return a float64 copy-free view of a gray image."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("intensities must be finite and lie in [0, 1]")
    return arr


def as_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D mask, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 2))
    arr = arr.reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    return arr


# ---------------------------------------------------------------- file I/O


def _read_png(path: str | os.PathLike) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    try:
        im = Image.open(path)
        im.load()
    except Exception as exc:  # PIL raises a zoo of types for bad files
        raise ValueError(f"unsupported image file {path}: {exc}") from exc
    if im.width == 0 or im.height == 0:
        raise ValueError(f"zero-dimension image: {path}")

    if im.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(im, dtype=np.float64) / 65535.0
    elif im.mode in ("L", "P", "1"):
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    elif im.mode in ("RGB", "RGBA", "LA"):
        # ITU-R 601 luma, as PIL's own L conversion but without its rounding
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        arr = rgb @ np.array([0.299, 0.587, 0.114])
    else:
        raise ValueError(f"unsupported PNG mode {im.mode!r}: {path}")
    return np.clip(arr, 0.0, 1.0)


def load_gray(path: str | os.PathLike) -> np.ndarray:
    """Load an 8- or 16-bit PNG as intensities in ``[0, 1]``.

    Values are divided by the bit-depth maximum (255 or 65535). RGB files are
    collapsed to luma.
    """
    return _read_png(path)


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Load a mask PNG; any non-zero pixel is a vessel."""
    return _read_png(path) > 0.0


def save_mask(mask, path: str | os.PathLike) -> None:
    """Write an 8-bit PNG with vessel = 255 and background = 0."""
    m = as_mask(mask)
    Image.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(path)


def save_gray(img, path: str | os.PathLike) -> None:
    """Write a gray image as an 8-bit PNG (rounded)."""
    g = as_gray(img)
    Image.fromarray(np.round(g * 255.0).astype(np.uint8), mode="L").save(path)


def save_soft(soft, path: str | os.PathLike) -> None:
    """Write a soft map as a 16-bit PNG with value ``round(p * 65535)``."""
    s = as_gray(soft)
    Image.fromarray(np.round(s * 65535.0).astype(np.uint16)).save(path)


# ----------------------------------------------------------------- pyramid


def _smooth_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0), (0, 0)]
    pad[axis] = (2, 2)
    padded = np.pad(arr, pad, mode="edge")
    n = arr.shape[axis]
    out = np.zeros_like(arr)
    for k, w in enumerate(BINOMIAL_KERNEL):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(k, k + n)
        out += w * padded[tuple(sl)]
    return out


def pyramid_reduce(img) -> np.ndarray:
    """Binomial 1-4-6-4-1 smoothing (edge replicated) then 2x decimation.

    Output shape is ``(ceil(h/2), ceil(w/2))``; samples are taken at even
    input coordinates so reduced pixel ``i`` sits over input pixel ``2i``.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or min(arr.shape) < 2:
        raise ValueError(f"pyramid_reduce needs at least 2x2 input, got {arr.shape}")
    smoothed = _smooth_axis(_smooth_axis(arr, 1), 0)
    out = smoothed[::2, ::2]
    # convex weights can still leave the input range by an ulp
    return np.clip(out, arr.min(), arr.max())


def _source_coords(n_src: int, n_dst: int) -> np.ndarray:
    x = np.arange(n_dst, dtype=np.float64)
    if (n_dst + 1) // 2 == n_src:
        # pyramid relation: reduced pixel i sits over full-res pixel 2i
        src = x / 2.0
    elif n_dst == 1:
        src = np.zeros(1)
    else:
        src = x * (n_src - 1) / (n_dst - 1)
    return np.clip(src, 0.0, n_src - 1)


def _bilinear(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    h, w = arr.shape
    ys = _source_coords(h, target_h)
    xs = _source_coords(w, target_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]

    top_l = arr[np.ix_(y0, x0)]
    top_r = arr[np.ix_(y0, x1)]
    bot_l = arr[np.ix_(y1, x0)]
    bot_r = arr[np.ix_(y1, x1)]
    top = top_l + tx * (top_r - top_l)
    bot = bot_l + tx * (bot_r - bot_l)
    return top + ty * (bot - top)


def pyramid_expand(img, target_w: int, target_h: int) -> np.ndarray:
    """Bilinear upsampling to exactly ``(target_h, target_w)``.

    Boolean input is upsampled as a {0, 1} field and re-binarized at 0.5, so
    the result is again a mask.
    """
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError("pyramid_expand expects a 2-D array")
    h, w = arr.shape
    if target_w < w or target_h < h:
        raise ValueError(
            f"target {target_w}x{target_h} is smaller than input {w}x{h}"
        )
    if arr.dtype == bool:
        up = _bilinear(arr.astype(np.float64), target_h, target_w)
        return up >= 0.5
    return _bilinear(arr.astype(np.float64), target_h, target_w)


def mask_to_points(mask) -> np.ndarray:
    """Pixel-center ``(x, y)`` coordinates of every true pixel, row-major."""
    m = as_mask(mask)
    ys, xs = np.nonzero(m)
    return np.column_stack([xs, ys]).astype(np.float64)
