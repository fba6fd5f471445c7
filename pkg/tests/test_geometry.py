import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fa_vesselkit.geometry import (
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


def _random_params(model, rng):
    if model == "euclidean":
        return TransformParams(model, (rng.uniform(-0.5, 0.5), *rng.uniform(-20, 20, 2)))
    if model == "similarity":
        return TransformParams(model, (rng.uniform(0.8, 1.2), rng.uniform(-0.5, 0.5), *rng.uniform(-20, 20, 2)))
    if model == "affine":
        b = np.array([0, 1, 0, 0, 0, 1.0]) + rng.normal(0, 0.1, 6)
        return TransformParams(model, tuple(b))
    if model == "projective":
        b = np.array([1, 0, 0, 0, 1, 0, 0, 0.0]) + rng.normal(0, 0.05, 8)
        b[6:] = rng.normal(0, 1e-3, 2)
        return TransformParams(model, tuple(b))
    b = np.array(identity("poly2").beta) + rng.normal(0, 0.05, 12)
    b[[3, 4, 5, 9, 10, 11]] = rng.normal(0, 1e-3, 6)
    return TransformParams(model, tuple(b))


def test_apply_examples():
    q = np.array([3.0, 4.0])
    assert np.allclose(apply(TransformParams("euclidean", (math.pi / 2, 1, 2)), q), [-3.0, 5.0])
    assert np.allclose(apply(TransformParams("similarity", (2.0, 0.0, 1, -1)), q), [7.0, 7.0])
    assert np.allclose(apply(TransformParams("affine", (1, 2, 0, 0, 0, 3)), q), [7.0, 12.0])
    h = TransformParams("projective", (1, 0, 0, 0, 1, 0, 0.1, 0))
    assert np.allclose(apply(h, q), [3 / 1.3, 4 / 1.3])
    p = np.zeros(12)
    p[3] = 1.0  # x' = u^2
    p[11] = 1.0  # y' = v^2
    assert np.allclose(apply(TransformParams("poly2", tuple(p)), q), [9.0, 16.0])


@pytest.mark.parametrize("model", MODELS)
def test_identity_is_identity(model):
    pts = np.random.default_rng(0).uniform(-50, 50, (20, 2))
    assert np.allclose(apply(identity(model), pts), pts, atol=1e-12)


def test_apply_shapes():
    t = identity("affine")
    assert apply(t, [1.0, 2.0]).shape == (2,)
    assert apply(t, np.zeros((5, 2))).shape == (5, 2)
    assert jacobian(t, [1.0, 2.0]).shape == (2, 6)
    assert jacobian(t, np.zeros((5, 2))).shape == (5, 2, 6)


def test_params_validation(tmp_path):
    with pytest.raises(ValueError):
        TransformParams("affine", (1.0, 2.0))
    with pytest.raises(ValueError):
        TransformParams("similarity", (0.0, 0, 0, 0))
    with pytest.raises(ValueError):
        TransformParams("affine", (np.nan, 1, 0, 0, 0, 1))
    with pytest.raises(ValueError):
        TransformParams("thin-plate", ())
    t = TransformParams("projective", tuple(np.arange(8) * 0.1))
    t.save(tmp_path / "t.json")
    assert TransformParams.load(tmp_path / "t.json") == t


def test_projective_singular_raises():
    h = TransformParams("projective", (1, 0, 0, 0, 1, 0, 1.0, 0))
    with pytest.raises(ZeroDivisionError):
        apply(h, [-1.0, 0.0])


def _fd_jacobian(t, q, eps=1e-6):
    beta = np.array(t.beta)
    cols = []
    for i in range(len(beta)):
        hi, lo = beta.copy(), beta.copy()
        step = eps * max(1.0, abs(beta[i]))
        hi[i] += step
        lo[i] -= step
        cols.append((apply(t.with_beta(hi), q) - apply(t.with_beta(lo), q)) / (2 * step))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("model", MODELS)
def test_jacobian_matches_finite_differences(model):
    rng = np.random.default_rng(11)
    for _ in range(100):
        t = _random_params(model, rng)
        q = rng.uniform(-10, 10, 2)
        J = jacobian(t, q)
        fd = _fd_jacobian(t, q)
        rel = np.linalg.norm(J - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel < 1e-6, (model, rel)


def test_poly2_jacobian_at_point():
    J = jacobian(identity("poly2"), [2.0, 3.0])
    assert J[0].tolist() == [1, 2, 3, 4, 6, 9, 0, 0, 0, 0, 0, 0]
    assert J[1].tolist() == [0, 0, 0, 0, 0, 0, 1, 2, 3, 4, 6, 9]


@pytest.mark.parametrize("src", MODELS[:-1])
def test_promotion_chain_exact(src):
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 512, (1000, 2))
    for _ in range(5):
        t = _random_params(src, rng)
        if src == "projective":
            t = t.with_beta(np.r_[t.beta[:6], 0.0, 0.0])
        for dst in MODELS[MODELS.index(src) + 1:]:
            up = promote(t, dst, domain=(0, 0, 512, 512))
            assert up.model == dst
            err = np.max(np.abs(apply(up, pts) - apply(t, pts)))
            assert err < (1e-9 if src == "projective" else 1e-10), (src, dst, err)


def test_projective_to_poly2_is_a_fit():
    h = TransformParams("projective", (1, 0, 0, 0, 1, 0, 1e-4, -5e-5))
    up = promote(h, "poly2", domain=(0, 0, 100, 100))
    pts = np.random.default_rng(0).uniform(0, 100, (200, 2))
    assert np.max(np.abs(apply(up, pts) - apply(h, pts))) < 0.05
    with pytest.raises(ValueError):
        promote(h, "poly2")


def test_promote_rejects_demotion():
    with pytest.raises(ValueError):
        promote(identity("affine"), "similarity")
    assert promote(identity("affine"), "affine") == identity("affine")


def test_norm_frame_two_points():
    f = make_norm_frame([(0, 0), (2, 0)])
    assert f.center == (1.0, 0.0)
    assert f.scale == 1.0
    assert np.allclose(normalize(np.array([[0, 0], [2, 0]]), f), [[-1, 0], [1, 0]])


def test_norm_frame_unit_rms():
    pts = np.random.default_rng(1).uniform(0, 900, (300, 2))
    n = normalize(pts, make_norm_frame(pts))
    assert np.allclose(n.mean(axis=0), 0, atol=1e-12)
    assert math.isclose(np.sqrt(np.mean(np.sum(n**2, axis=1))), 1.0, rel_tol=1e-12)


def test_norm_frame_degenerate():
    with pytest.raises(ValueError):
        make_norm_frame([(3, 3), (3, 3)])
    with pytest.raises(ValueError):
        make_norm_frame(np.zeros((0, 2)))


@pytest.mark.parametrize("model", MODELS)
def test_denormalize_round_trip(model):
    rng = np.random.default_rng(7)
    raw_pts = rng.uniform(0, 700, (50, 2))
    fs = make_norm_frame(raw_pts)
    fd = NormFrame((300.0, 200.0), fs.scale if model == "euclidean" else 0.004)
    t = _random_params(model, rng)
    if model == "projective":
        t = t.with_beta(np.r_[t.beta[:6], 0.05, -0.03])
    raw = denormalize_params(t, fs, fd)
    assert raw.model == model
    expected = apply(t, normalize(raw_pts, fs)) / fd.scale + np.asarray(fd.center)
    assert np.allclose(apply(raw, raw_pts), expected, atol=1e-8)


def test_denormalize_euclidean_needs_equal_scales():
    with pytest.raises(ValueError):
        denormalize_params(identity("euclidean"), NormFrame((0, 0), 1.0), NormFrame((0, 0), 2.0))


@given(st.floats(-3, 3), st.floats(-100, 100), st.floats(-100, 100), st.floats(0.5, 2.0))
def test_similarity_preserves_ratios(th, tx, ty, s):
    t = TransformParams("similarity", (s, th, tx, ty))
    a, b = np.array([1.0, 2.0]), np.array([-4.0, 7.0])
    d0 = np.linalg.norm(a - b)
    d1 = np.linalg.norm(apply(t, a) - apply(t, b))
    assert math.isclose(d1, s * d0, rel_tol=1e-9)
