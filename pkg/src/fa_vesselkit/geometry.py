"""Planar transform family used by the registration cascade.

Models, in increasing order of freedom, with their parameter vectors:

=========== == ==================================================
euclidean    3 theta, tx, ty
similarity   4 s, theta, tx, ty
affine       6 a1..a6: x' = a1 + a2 u + a3 v, y' = a4 + a5 u + a6 v
projective   8 h1..h8: x' = (h1 u + h2 v + h3) / (h7 u + h8 v + 1), ...
poly2       12 b1..b12: x' = b1 + b2 u + b3 v + b4 u^2 + b5 uv + b6 v^2,
                        y' = b7 + b8 u + ... + b12 v^2
=========== == ==================================================

All functions accept a single point ``(2,)`` or a batch ``(N, 2)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MODELS",
    "PARAM_COUNT",
    "TransformParams",
    "NormFrame",
    "identity",
    "apply",
    "jacobian",
    "promote",
    "make_norm_frame",
    "normalize",
    "denormalize_params",
    "poly2_fit",
]

MODELS = ("euclidean", "similarity", "affine", "projective", "poly2")
PARAM_COUNT = {"euclidean": 3, "similarity": 4, "affine": 6, "projective": 8, "poly2": 12}

_IDENTITY = {
    "euclidean": [0.0, 0.0, 0.0],
    "similarity": [1.0, 0.0, 0.0, 0.0],
    "affine": [0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    "projective": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    "poly2": [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
}


@dataclass(frozen=True)
class TransformParams:
    model: str
    beta: tuple[float, ...]

    def __post_init__(self):
        model = self.model.lower()
        if model not in PARAM_COUNT:
            raise ValueError(f"unknown transform model {self.model!r}")
        beta = tuple(float(b) for b in np.asarray(self.beta, dtype=np.float64).ravel())
        if len(beta) != PARAM_COUNT[model]:
            raise ValueError(
                f"{model} needs {PARAM_COUNT[model]} parameters, got {len(beta)}"
            )
        if not all(np.isfinite(beta)):
            raise ValueError("transform parameters must be finite")
        if model == "similarity" and beta[0] <= 0:
            raise ValueError("similarity scale must be positive")
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "beta", beta)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.beta)

    def with_beta(self, beta) -> "TransformParams":
        return TransformParams(self.model, tuple(beta))

    def to_dict(self) -> dict:
        return {"model": self.model, "beta": list(self.beta)}

    @classmethod
    def from_dict(cls, data: dict) -> "TransformParams":
        return cls(data["model"], tuple(data["beta"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "TransformParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def identity(model: str = "poly2") -> TransformParams:
    return TransformParams(model, tuple(_IDENTITY[model.lower()]))


def _uv(q):
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = q.reshape(-1, 2)
    return q[:, 0], q[:, 1], single


def _quad_basis(u, v):
    one = np.ones_like(u)
    return np.stack([one, u, v, u * u, u * v, v * v], axis=1)


def apply(t: TransformParams, q) -> np.ndarray:
    """Map point(s) ``q`` through ``t``."""
    u, v, single = _uv(q)
    b = t.beta
    m = t.model
    if m == "euclidean":
        th, tx, ty = b
        c, s = np.cos(th), np.sin(th)
        x, y = c * u - s * v + tx, s * u + c * v + ty
    elif m == "similarity":
        sc, th, tx, ty = b
        c, s = sc * np.cos(th), sc * np.sin(th)
        x, y = c * u - s * v + tx, s * u + c * v + ty
    elif m == "affine":
        x = b[0] + b[1] * u + b[2] * v
        y = b[3] + b[4] * u + b[5] * v
    elif m == "projective":
        den = b[6] * u + b[7] * v + 1.0
        if np.any(den == 0.0):
            raise ZeroDivisionError("point lies on the homography's line at infinity")
        x = (b[0] * u + b[1] * v + b[2]) / den
        y = (b[3] * u + b[4] * v + b[5]) / den
    else:
        basis = _quad_basis(u, v)
        beta = np.asarray(b)
        x = basis @ beta[:6]
        y = basis @ beta[6:]
    out = np.column_stack([x, y])
    return out[0] if single else out


def jacobian(t: TransformParams, q) -> np.ndarray:
    """Analytic d apply(t, q) / d beta, shape ``(2, k)`` or ``(N, 2, k)``."""
    u, v, single = _uv(q)
    b = t.beta
    m = t.model
    n = u.shape[0]
    J = np.zeros((n, 2, PARAM_COUNT[m]))
    if m == "euclidean":
        th = b[0]
        c, s = np.cos(th), np.sin(th)
        J[:, 0, 0] = -s * u - c * v
        J[:, 1, 0] = c * u - s * v
        J[:, 0, 1] = 1.0
        J[:, 1, 2] = 1.0
    elif m == "similarity":
        sc, th = b[0], b[1]
        c, s = np.cos(th), np.sin(th)
        J[:, 0, 0] = c * u - s * v
        J[:, 1, 0] = s * u + c * v
        J[:, 0, 1] = sc * (-s * u - c * v)
        J[:, 1, 1] = sc * (c * u - s * v)
        J[:, 0, 2] = 1.0
        J[:, 1, 3] = 1.0
    elif m == "affine":
        J[:, 0, 0] = 1.0
        J[:, 0, 1] = u
        J[:, 0, 2] = v
        J[:, 1, 3] = 1.0
        J[:, 1, 4] = u
        J[:, 1, 5] = v
    elif m == "projective":
        den = b[6] * u + b[7] * v + 1.0
        if np.any(den == 0.0):
            raise ZeroDivisionError("point lies on the homography's line at infinity")
        nx = b[0] * u + b[1] * v + b[2]
        ny = b[3] * u + b[4] * v + b[5]
        J[:, 0, 0] = u / den
        J[:, 0, 1] = v / den
        J[:, 0, 2] = 1.0 / den
        J[:, 1, 3] = u / den
        J[:, 1, 4] = v / den
        J[:, 1, 5] = 1.0 / den
        J[:, 0, 6] = -u * nx / den**2
        J[:, 0, 7] = -v * nx / den**2
        J[:, 1, 6] = -u * ny / den**2
        J[:, 1, 7] = -v * ny / den**2
    else:
        basis = _quad_basis(u, v)
        J[:, 0, :6] = basis
        J[:, 1, 6:] = basis
    return J[0] if single else J


# --------------------------------------------------------------- promotion


def _to_affine(t: TransformParams) -> np.ndarray:
    b = t.beta
    if t.model == "euclidean":
        th, tx, ty = b
        sc = 1.0
    elif t.model == "similarity":
        sc, th, tx, ty = b
    else:
        return np.array(b)
    c, s = sc * np.cos(th), sc * np.sin(th)
    return np.array([tx, c, -s, ty, s, c])


def _affine_to_poly2(a) -> np.ndarray:
    return np.array([a[0], a[1], a[2], 0, 0, 0, a[3], a[4], a[5], 0, 0, 0], dtype=float)


def poly2_fit(src, dst) -> TransformParams:
    """Least-squares poly2 mapping ``src`` onto ``dst`` (conditioned internally)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape[0] < 6:
        raise ValueError("poly2 fit needs at least 6 points")
    frame = make_norm_frame(src)
    un = normalize(src, frame)
    basis = _quad_basis(un[:, 0], un[:, 1])
    coef, *_ = np.linalg.lstsq(basis, dst, rcond=None)
    fitted = TransformParams("poly2", tuple(np.concatenate([coef[:, 0], coef[:, 1]])))
    # fitted acts on normalized input and returns raw output
    return denormalize_params(fitted, frame, NormFrame((0.0, 0.0), 1.0))


def promote(t: TransformParams, to_model: str, domain=None, grid: int = 20) -> TransformParams:
    """Re-express ``t`` in a higher model of the chain.

    All promotions are exact except projective -> poly2, which is a least
    squares fit to the homography's action on a ``grid x grid`` lattice over
    ``domain = (xmin, ymin, xmax, ymax)``.
    """
    to_model = to_model.lower()
    if to_model not in MODELS:
        raise ValueError(f"unknown transform model {to_model!r}")
    src_rank, dst_rank = MODELS.index(t.model), MODELS.index(to_model)
    if dst_rank < src_rank:
        raise ValueError(f"cannot demote {t.model} to {to_model}")
    if dst_rank == src_rank:
        return t
    if to_model == "similarity":
        th, tx, ty = t.beta
        return TransformParams("similarity", (1.0, th, tx, ty))
    if to_model == "affine":
        return TransformParams("affine", tuple(_to_affine(t)))
    if to_model == "projective":
        a = _to_affine(t)
        return TransformParams("projective", (a[1], a[2], a[0], a[4], a[5], a[3], 0.0, 0.0))
    # poly2
    if t.model != "projective":
        return TransformParams("poly2", tuple(_affine_to_poly2(_to_affine(t))))
    if domain is None:
        raise ValueError("projective -> poly2 promotion needs a domain")
    xmin, ymin, xmax, ymax = map(float, domain)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"empty promotion domain {domain}")
    gx, gy = np.meshgrid(np.linspace(xmin, xmax, grid), np.linspace(ymin, ymax, grid))
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return poly2_fit(pts, apply(t, pts))


# ---------------------------------------------------------- normalization


@dataclass(frozen=True)
class NormFrame:
    """Similarity ``q -> scale * (q - center)`` used for conditioning."""

    center: tuple[float, float]
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("NormFrame scale must be positive")


def make_norm_frame(points) -> NormFrame:
    """Frame putting the centroid at 0 and the RMS radius at 1."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("cannot build a frame from an empty point set")
    c = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - c) ** 2, axis=1)))
    if rms == 0.0:
        raise ValueError("zero spread: all points coincide")
    return NormFrame((float(c[0]), float(c[1])), float(1.0 / rms))


def normalize(points, frame: NormFrame) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return (pts - np.asarray(frame.center)) * frame.scale


def _poly2_pre_post(beta, a, c, k, d):
    """Poly2 coefficients of ``k * (P(a*q + c) - d)``, with ``a``, ``k`` scalars."""
    beta = np.asarray(beta, dtype=np.float64)
    cx, cy = c
    out = np.empty(12)
    for row in range(2):
        b0, bu, bv, buu, buv, bvv = beta[6 * row: 6 * row + 6]
        # substitute U = a u + cx, V = a v + cy
        const = b0 + bu * cx + bv * cy + buu * cx**2 + buv * cx * cy + bvv * cy**2
        lin_u = a * (bu + 2 * buu * cx + buv * cy)
        lin_v = a * (bv + buv * cx + 2 * bvv * cy)
        out[6 * row: 6 * row + 6] = [
            k * (const - d[row]),
            k * lin_u,
            k * lin_v,
            k * a * a * buu,
            k * a * a * buv,
            k * a * a * bvv,
        ]
    return out


def denormalize_params(t: TransformParams, frame_src: NormFrame, frame_dst: NormFrame) -> TransformParams:
    """Raw-pixel parameters for a transform estimated between normalized frames.

    The result satisfies ``apply(raw, q) == denorm_dst(apply(t, norm_src(q)))``.
    A Euclidean transform only stays Euclidean when both frames share a scale.
    """
    a = frame_src.scale
    c = -a * np.asarray(frame_src.center)  # norm_src(q) = a*q + c
    k = 1.0 / frame_dst.scale
    d = -np.asarray(frame_dst.center) * frame_dst.scale  # denorm(p) = k*(p - d)
    b = t.beta
    m = t.model
    if m == "poly2":
        return TransformParams("poly2", tuple(_poly2_pre_post(b, a, c, k, d)))
    if m in ("euclidean", "similarity"):
        if m == "euclidean":
            th, tx, ty = b
            sc = 1.0
        else:
            sc, th, tx, ty = b
        new_sc = k * sc * a
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        new_t = k * (sc * R @ c + np.array([tx, ty]) - d)
        if m == "euclidean":
            if not np.isclose(new_sc, 1.0, rtol=1e-12, atol=0.0):
                raise ValueError("euclidean transform needs frames with equal scale")
            return TransformParams("euclidean", (th, new_t[0], new_t[1]))
        return TransformParams("similarity", (new_sc, th, new_t[0], new_t[1]))
    if m == "affine":
        A = np.array([[b[1], b[2]], [b[4], b[5]]])
        off = np.array([b[0], b[3]])
        newA = k * a * A
        newb = k * (A @ c + off - d)
        return TransformParams("affine", (newb[0], newA[0, 0], newA[0, 1], newb[1], newA[1, 0], newA[1, 1]))
    # projective: H_raw = Post * H * Pre, renormalized so that h9 = 1
    H = np.array([[b[0], b[1], b[2]], [b[3], b[4], b[5]], [b[6], b[7], 1.0]])
    pre = np.array([[a, 0, c[0]], [0, a, c[1]], [0, 0, 1.0]])
    post = np.array([[k, 0, -k * d[0]], [0, k, -k * d[1]], [0, 0, 1.0]])
    Hr = post @ H @ pre
    if Hr[2, 2] == 0:
        raise ValueError("denormalized homography maps the origin to infinity")
    Hr = Hr / Hr[2, 2]
    return TransformParams("projective", tuple(Hr.ravel()[:8]))
