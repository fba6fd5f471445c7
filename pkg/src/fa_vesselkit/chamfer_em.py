"""Robust parametric chamfer registration in an EM framework.

Each moving point ``q_j`` has a latent inlier flag. Inlier squared chamfer
distances follow an exponential law with rate ``lam``; outliers are uniform
on ``[0, d_max]``. The E-step yields inlier posteriors ``p_j``, the M-step
re-estimates ``(pi, lam)`` in closed form and refines the transform by
Levenberg-Marquardt on the posterior-weighted mean chamfer distance.

Registration runs a cascade of models (euclidean -> ... -> poly2), each
warm-started from the previous one, with the EM loop active at every stage.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .distance import DistanceField, distance_field
from .geometry import (
    MODELS,
    NormFrame,
    TransformParams,
    apply,
    denormalize_params,
    identity,
    jacobian,
    make_norm_frame,
    normalize,
    promote,
)
from .raster import as_points, mask_to_points

__all__ = [
    "DistanceField",
    "distance_field",
    "EMConfig",
    "EMState",
    "StageReport",
    "RegistrationReport",
    "RateUpdate",
    "alignment_errors",
    "e_step",
    "m_step_rates",
    "q_function",
    "lm_minimize",
    "register",
]

log = logging.getLogger(__name__)

_UNIT_FRAME = NormFrame((0.0, 0.0), 1.0)


@dataclass
class EMConfig:
    d_max: float | None = None  # px^2; None -> squared reference diagonal
    pi0: float = 0.9
    lambda0: float | None = None  # None -> 1 / mean(d) at the initial transform
    em_tol: float = 1e-4
    em_max_iters: int = 50
    lm_sigma0: float = 1e-3
    lm_factor: float = 10.0
    lm_max_iters: int = 100
    lambda_max: float = 1e6
    max_points: int = 60000
    seed: int = 0
    use_em: bool = True
    stages: list[str] = field(default_factory=lambda: list(MODELS))
    grid_init: dict | None = None

    def __post_init__(self):
        if self.d_max is not None and not self.d_max > 0:
            raise ValueError("d_max must be positive")
        if not 0.0 < self.pi0 < 1.0:
            raise ValueError("pi0 must lie in (0, 1)")
        if self.lambda0 is not None and not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not self.lm_factor > 1.0:
            raise ValueError("lm_factor must exceed 1")
        self.stages = [s.lower() for s in self.stages]
        if not self.stages or any(s not in MODELS for s in self.stages):
            raise ValueError(f"stages must be drawn from {MODELS}")
        ranks = [MODELS.index(s) for s in self.stages]
        if ranks != sorted(ranks) or len(set(ranks)) != len(ranks):
            raise ValueError("stages must be strictly increasing in the model chain")
        if self.grid_init is not None:
            self.grid_init = {**GRID_DEFAULTS, **self.grid_init}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EMConfig":
        extra = set(data) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown EMConfig fields: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "EMConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


GRID_DEFAULTS = {
    "translation_frac": 0.10,  # of the reference width
    "translation_step": 8.0,  # px
    "rotation_range": 10.0,  # degrees
    "rotation_step": 2.0,
    "score_points": 2000,
}


@dataclass
class EMState:
    t: TransformParams
    pi: float
    lam: float
    posteriors: np.ndarray
    weighted_error: float


@dataclass
class StageReport:
    model: str
    iterations: int
    weighted_error: float
    converged: bool
    pi: float
    lam: float


@dataclass
class RegistrationReport:
    final: TransformParams
    stages: list[StageReport]
    posteriors: np.ndarray
    distances: np.ndarray
    point_index: np.ndarray  # indices into the moving set actually used
    pi: float
    lam: float
    converged: bool

    def to_dict(self) -> dict:
        return {
            "final": self.final.to_dict(),
            "stages": [asdict(s) for s in self.stages],
            "pi": self.pi,
            "lambda": self.lam,
            "converged": self.converged,
            "num_points": int(self.posteriors.size),
        }


# --------------------------------------------------------------- pieces


def _lookup(field: DistanceField, pred: np.ndarray):
    """Nearest reference point for each predicted location, clamped to the grid."""
    finite = np.all(np.isfinite(pred), axis=1)
    safe = np.where(finite[:, None], pred, 0.0)
    cx = np.clip(np.floor(safe[:, 0] + 0.5), 0, field.width - 1).astype(np.int64)
    cy = np.clip(np.floor(safe[:, 1] + 0.5), 0, field.height - 1).astype(np.int64)
    near = np.column_stack([field.nearest_x[cy, cx], field.nearest_y[cy, cx]]).astype(np.float64)
    r = near - pred
    d = np.sum(r * r, axis=1)
    d[~finite] = np.inf
    return d, r


def alignment_errors(field: DistanceField, t: TransformParams, targets):
    """Squared chamfer distances ``d`` and residual vectors ``r`` for each target.

    ``r_j = nearest(round(T(q_j))) - T(q_j)`` and ``d_j = |r_j|^2``. Points
    landing outside the grid look up the nearest border cell.
    """
    q = as_points(targets)
    if q.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 2))
    return _lookup(field, apply(t, q))


def e_step(d, pi: float, lam: float, d_max: float) -> np.ndarray:
    """Posterior inlier probability for each squared distance."""
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("squared distances must be finite")
    if not (0.0 <= pi <= 1.0 and lam > 0 and d_max > 0):
        raise ValueError("need 0 <= pi <= 1, lam > 0, d_max > 0")
    inlier = pi * lam * np.exp(-lam * d)
    outlier = (1.0 - pi) / d_max
    if outlier == 0.0:
        return np.ones_like(d)
    return inlier / (inlier + outlier)


class RateUpdate(NamedTuple):
    pi: float
    lam: float
    capped: bool = False  # lam hit lambda_max
    skipped: bool = False  # no posterior mass; lam left unchanged


def m_step_rates(p, d, lam_prev: float | None = None, lambda_max: float = 1e6) -> RateUpdate:
    """Closed-form ``pi = mean(p)``, ``lam = sum(p) / sum(p d)``."""
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if p.shape != d.shape or p.size == 0:
        raise ValueError("p and d must be non-empty and aligned")
    mass = float(np.sum(p))
    pi = mass / p.size
    if mass == 0.0:
        return RateUpdate(pi, lam_prev if lam_prev is not None else float("nan"), False, True)
    spread = float(np.sum(p * d))
    if spread <= 0.0 or mass / spread > lambda_max:
        return RateUpdate(pi, lambda_max, True, False)
    return RateUpdate(pi, mass / spread)


def q_function(pi: float, lam: float, p, d, d_max: float) -> float:
    """Expected complete-data log-likelihood as a function of ``(pi, lam)``."""
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    inl = p * (-lam * d + math.log(pi) + math.log(lam))
    out = (1.0 - p) * (math.log(1.0 - pi) - math.log(d_max))
    return float(np.sum(inl + out))


class _Problem:
    """Chamfer residuals for targets mapped through a transform in a normalized frame."""

    def __init__(self, field: DistanceField, targets, frame: NormFrame | None):
        self.field = field
        self.frame = frame or _UNIT_FRAME
        self.q = normalize(as_points(targets), self.frame)
        self.k = 1.0 / self.frame.scale
        self.c = np.asarray(self.frame.center)

    def predict(self, t):
        try:
            with np.errstate(all="ignore"):
                return apply(t, self.q) * self.k + self.c
        except ZeroDivisionError:
            return np.full(self.q.shape, np.inf)

    def errors(self, t):
        return _lookup(self.field, self.predict(t))

    def jac(self, t):
        return jacobian(t, self.q) * self.k


def _lm(problem: _Problem, weights, init: TransformParams, cfg: EMConfig):
    w = np.asarray(weights, dtype=np.float64)
    n = max(w.size, 1)
    t = init
    beta = init.vector
    d, r = problem.errors(t)
    err = float(np.sum(w * d)) / n
    sigma = cfg.lm_sigma0
    k = beta.size
    iters = 0
    while iters < cfg.lm_max_iters:
        iters += 1
        J = problem.jac(t)
        A = np.einsum("n,nik,nil->kl", w, J, J)
        g = np.einsum("n,nik,ni->k", w, J, r)
        try:
            delta = np.linalg.solve(A + sigma * np.eye(k), g)
        except np.linalg.LinAlgError:
            sigma *= cfg.lm_factor
            if sigma > 1e16:
                log.warning("LM normal matrix singular even at sigma=%g", sigma)
                break
            continue
        step = float(np.linalg.norm(delta))
        try:
            cand = t.with_beta(beta + delta)
        except ValueError:  # e.g. a similarity scale crossing zero
            cand = None
        if cand is not None:
            d_new, r_new = problem.errors(cand)
            err_new = float(np.sum(w * d_new)) / n
        else:
            err_new = math.inf
        if err_new < err:
            improvement = (err - err_new) / max(err, 1e-300)
            t, beta, d, r, err = cand, beta + delta, d_new, r_new, err_new
            sigma /= cfg.lm_factor
            if step < cfg.em_tol or improvement < cfg.em_tol:
                break
        else:
            sigma *= cfg.lm_factor
            if step < cfg.em_tol or sigma > 1e16:
                break
    return t, d, r, err, iters


def lm_minimize(field: DistanceField, targets, weights, init: TransformParams,
                cfg: EMConfig | None = None, frame: NormFrame | None = None) -> TransformParams:
    """Minimize ``mean_j(w_j * d_j)`` over the parameters of ``init``'s model.

    Solves ``(sum w J^T J + sigma I) delta = sum w J^T r`` per step; a step is
    kept only if it lowers the weighted error, with sigma divided by
    ``lm_factor`` on success and multiplied on failure. With ``frame`` the
    parameters act on normalized target coordinates and return raw pixels.
    """
    cfg = cfg or EMConfig()
    t, *_ = _lm(_Problem(field, targets, frame), weights, init, cfg)
    return t


# ------------------------------------------------------------ registration


def _grid_search(problem: _Problem, t0: TransformParams, spec: dict, width: int, rng):
    """Coarse translation/rotation scan scored by unweighted mean squared distance."""
    n = problem.q.shape[0]
    if n > spec["score_points"]:
        sub = np.sort(rng.choice(n, spec["score_points"], replace=False))
    else:
        sub = np.arange(n)
    scorer = _Problem.__new__(_Problem)
    scorer.field, scorer.frame, scorer.k, scorer.c = problem.field, problem.frame, problem.k, problem.c
    scorer.q = problem.q[sub]

    span = spec["translation_frac"] * width
    step = spec["translation_step"]
    shifts = np.arange(-span, span + 1e-9, step) if step > 0 else np.zeros(1)
    rot = spec["rotation_range"]
    rstep = spec["rotation_step"]
    angles = np.arange(-rot, rot + 1e-9, rstep) if rstep > 0 else np.zeros(1)

    th0, tx0, ty0 = t0.beta
    best = (math.inf, t0)
    s = problem.frame.scale
    for a in np.radians(angles):
        for dx in shifts:
            for dy in shifts:
                cand = TransformParams("euclidean", (th0 + a, tx0 + dx * s, ty0 + dy * s))
                d, _ = scorer.errors(cand)
                score = float(np.mean(d))
                if score < best[0]:
                    best = (score, cand)
    return best[1]


def _action_change(problem: _Problem, a: TransformParams, b: TransformParams) -> float:
    diff = problem.predict(a) - problem.predict(b)
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1)))) * problem.frame.scale


def register(reference, moving, cfg: EMConfig | None = None, init: TransformParams | None = None) -> RegistrationReport:
    """Register ``moving`` (mask or points) onto the ``reference`` mask.

    The returned transform maps moving coordinates into reference pixels and
    is always poly2 (the last stage is promoted if the cascade stops early).
    """
    cfg = cfg or EMConfig()
    ref = np.asarray(reference, dtype=bool)
    if ref.ndim != 2:
        raise ValueError("reference must be a 2-D mask")
    mov = np.asarray(moving)
    q_all = mask_to_points(mov) if (mov.ndim == 2 and mov.dtype == bool) else as_points(mov)
    if q_all.shape[0] == 0:
        raise ValueError("moving point set is empty")
    if not ref.any():
        raise ValueError("reference mask is empty")

    rng = np.random.default_rng(cfg.seed)
    index = np.arange(q_all.shape[0])
    if q_all.shape[0] > cfg.max_points:
        index = np.sort(rng.choice(q_all.shape[0], cfg.max_points, replace=False))
    q = q_all[index]

    field = distance_field(ref)
    h, w = ref.shape
    d_max = cfg.d_max if cfg.d_max is not None else float(h * h + w * w)
    try:
        frame = make_norm_frame(q)
    except ValueError:
        frame = NormFrame(tuple(q[0]), 1.0)  # single point: translation only is meaningful
    problem = _Problem(field, q, frame)
    qn = normalize(q, frame)
    domain = (*qn.min(axis=0), *qn.max(axis=0))
    if domain[2] <= domain[0] or domain[3] <= domain[1]:
        domain = (-1.0, -1.0, 1.0, 1.0)

    t = _normalized_init(init, frame, cfg.stages[0])
    if cfg.grid_init is not None:
        if t.model != "euclidean":
            raise ValueError("grid_init needs the cascade to start at euclidean")
        t = _grid_search(problem, t, cfg.grid_init, w, rng)

    d, _ = problem.errors(t)
    pi = cfg.pi0
    mean_d = float(np.mean(d))
    lam = cfg.lambda0 if cfg.lambda0 is not None else (1.0 / mean_d if mean_d > 0 else cfg.lambda_max)
    lam = min(lam, cfg.lambda_max)
    p = np.ones_like(d)

    stages: list[StageReport] = []
    all_converged = True
    for model in cfg.stages:
        t = promote(t, model, domain=domain)
        stage_start = None
        converged = False
        it = 0
        err = math.nan
        for it in range(1, cfg.em_max_iters + 1):
            if cfg.use_em:
                p = e_step(d, pi, lam, d_max)
                upd = m_step_rates(p, d, lam, cfg.lambda_max)
                new_pi, new_lam = upd.pi, upd.lam
            else:
                p = np.ones_like(d)
                new_pi, new_lam = pi, lam
            if stage_start is None:
                stage_start = float(np.mean(p * d))
            t_new, d, _, err, _ = _lm(problem, p, t, cfg)
            change = max(
                abs(new_pi - pi),
                abs(new_lam - lam) / lam,
                _action_change(problem, t_new, t),
            )
            t, pi, lam = t_new, new_pi, new_lam
            if change < cfg.em_tol:
                converged = True
                break
        diverged = err > stage_start * (1 + 1e-9) + 1e-12
        if diverged:
            log.warning("stage %s: weighted error rose from %g to %g", model, stage_start, err)
        all_converged &= converged and not diverged
        stages.append(StageReport(model, it, err, converged and not diverged, pi, lam))
        log.info("stage %s: %d EM iterations, weighted error %.6g", model, it, err)

    if cfg.use_em:
        p = e_step(d, pi, lam, d_max)
    final = denormalize_params(promote(t, "poly2", domain=domain), frame, frame)
    return RegistrationReport(final, stages, p, d, index, pi, lam, all_converged)


def _normalized_init(init: TransformParams | None, frame: NormFrame, first: str) -> TransformParams:
    if init is None:
        return identity(first)
    # a raw-pixel initial transform expressed in the shared normalized frame
    inv = NormFrame(
        (-frame.center[0] * frame.scale, -frame.center[1] * frame.scale), 1.0 / frame.scale
    )
    t = denormalize_params(init, inv, inv)
    if MODELS.index(t.model) > MODELS.index(first):
        raise ValueError(f"initial {t.model} transform is above the first stage {first}")
    return promote(t, first)
