import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fa_vesselkit.morphvessel import (
    MorphParams,
    adaptive_threshold,
    area_open,
    combine_orientations,
    detect_scales,
    detect_vessels,
    linear_se,
    modified_tophat,
)
from oracles import brute_tophat, flood_components, sliding_mean_replicated


@pytest.mark.parametrize(
    "length,angle,expected",
    [
        (3, 0.0, {(-1, 0), (0, 0), (1, 0)}),
        (3, 90.0, {(0, -1), (0, 0), (0, 1)}),
        (5, 45.0, {(-2, -2), (-1, -1), (0, 0), (1, 1), (2, 2)}),
        (1, 120.0, {(0, 0)}),
    ],
)
def test_linear_se_examples(length, angle, expected):
    assert set(linear_se(length, angle).offsets) == expected


@pytest.mark.parametrize("angle", [20.0 * k for k in range(9)])
@pytest.mark.parametrize("length", [3, 5, 6, 7, 11])
def test_linear_se_shape(length, angle):
    se = linear_se(length, angle)
    offs = se.offsets
    assert len(offs) == length == len(set(offs))
    assert (0, 0) in offs
    if length % 2:
        assert set(offs) == {(-dx, -dy) for dx, dy in offs}


def test_linear_se_even_length_default():
    assert [dx for dx, _ in linear_se(6, 0.0).offsets] == [-2, -1, 0, 1, 2, 3]


def test_linear_se_rejects_bad_input():
    with pytest.raises(ValueError):
        linear_se(0, 0.0)
    with pytest.raises(ValueError):
        linear_se(3, 180.0)


def test_tophat_constant_is_zero():
    out = modified_tophat(np.full((9, 9), 0.4), linear_se(5, 40.0))
    assert np.all(out == 0.0)


def test_tophat_single_bright_pixel():
    img = np.zeros((5, 5))
    img[2, 2] = 1.0
    out = modified_tophat(img, linear_se(3, 0.0))
    assert out[2, 2] == 1.0
    assert np.array_equal(out, brute_tophat(img, linear_se(3, 0.0).offsets))


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("length,angle", [(3, 0.0), (6, 20.0), (6, 100.0), (4, 160.0), (7, 45.0)])
def test_tophat_matches_brute_force(seed, length, angle):
    img = np.random.default_rng(seed).random((16, 16))
    se = linear_se(length, angle)
    assert np.array_equal(modified_tophat(img, se), brute_tophat(img, se.offsets))


@given(
    arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.floats(0, 1)),
    st.integers(1, 7),
    st.sampled_from([20.0 * k for k in range(9)]),
)
def test_tophat_bounds(img, length, angle):
    out = modified_tophat(img, linear_se(length, angle))
    assert np.all(out >= 0.0)
    assert np.all(out <= img)


def test_combine_orientations():
    r1 = np.random.default_rng(0).random((6, 6))
    r2 = np.random.default_rng(1).random((6, 6))
    assert np.array_equal(combine_orientations([r1]), r1)
    assert np.array_equal(combine_orientations([np.zeros((6, 6)), r2]), r2)
    both = combine_orientations([r1, r2])
    for y in range(6):
        for x in range(6):
            assert both[y, x] == max(r1[y, x], r2[y, x])
    with pytest.raises(ValueError):
        combine_orientations([r1, np.zeros((5, 6))])
    with pytest.raises(ValueError):
        combine_orientations([])


def test_adaptive_threshold_constant():
    img = np.full((7, 7), 0.3)
    assert not adaptive_threshold(img, 3, 0.01).any()
    assert adaptive_threshold(img, 3, -0.01).all()


def test_adaptive_threshold_hand_case():
    img = np.zeros((5, 5))
    img[2, 2] = 1.0
    out = adaptive_threshold(img, 3, 0.0)
    expected = img > sliding_mean_replicated(img, 3)
    assert np.array_equal(out, expected)
    assert set(zip(*np.nonzero(out))) == {(2, 2)}


def test_adaptive_threshold_random_against_sliding_mean():
    img = np.random.default_rng(5).random((12, 10))
    mean = sliding_mean_replicated(img, 5)
    out = adaptive_threshold(img, 5, 0.02)
    # skip pixels within rounding distance of the threshold
    clear = np.abs(img - (mean + 0.02)) > 1e-9
    assert np.array_equal(out[clear], (img > mean + 0.02)[clear])


def test_adaptive_threshold_even_window():
    with pytest.raises(ValueError):
        adaptive_threshold(np.zeros((5, 5)), 4, 0.0)


def test_area_open_examples():
    rnd = np.random.default_rng(2).random((10, 10)) < 0.3
    assert np.array_equal(area_open(rnd, 1), rnd)
    single = np.zeros((5, 5), bool)
    single[2, 2] = True
    assert not area_open(single, 2).any()

    m = np.zeros((12, 12), bool)
    m[0, 0:3] = True  # 3 pixels
    m[5:7, 5:10] = True  # 10 pixels
    out = area_open(m, 5)
    expected = np.zeros_like(m)
    expected[5:7, 5:10] = True
    assert np.array_equal(out, expected)


def test_area_open_uses_eight_connectivity():
    diag = np.eye(6, dtype=bool)
    assert np.array_equal(area_open(diag, 6), diag)


@given(arrays(bool, st.tuples(st.integers(1, 14), st.integers(1, 14))), st.integers(1, 8))
def test_area_open_matches_flood_fill(mask, min_area):
    expected = np.zeros_like(mask)
    for comp in flood_components(mask):
        if len(comp) >= min_area:
            for y, x in comp:
                expected[y, x] = True
    assert np.array_equal(area_open(mask, min_area), expected)


def test_params_defaults_and_json(tmp_path):
    p = MorphParams()
    assert p.num_scales == 2 and p.downsample_rate == 2
    assert p.angles == [0.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0]
    assert p.se_length_per_scale == [6, 3]
    path = tmp_path / "m.json"
    path.write_text(json.dumps(p.to_dict()))
    assert MorphParams.from_json(path) == p
    with pytest.raises(ValueError):
        MorphParams(num_scales=2, se_length_per_scale=[6])
    with pytest.raises(ValueError):
        MorphParams(angles=[180.0])
    with pytest.raises(ValueError):
        MorphParams.from_dict({"bogus": 1})


def test_detect_all_zero_image():
    mask, soft = detect_vessels(np.zeros((64, 64)))
    assert not mask.any()
    assert np.all(soft == 0)


def test_detect_too_small_image():
    with pytest.raises(ValueError):
        detect_vessels(np.zeros((1, 1)))


def _phantomish(seed=0, size=96):
    rng = np.random.default_rng(seed)
    img = rng.normal(0.2, 0.02, (size, size))
    img[size // 3, 5:-5] += 0.5
    for i in range(10, size - 10):
        img[i, i // 2 + 10] += 0.4
    return np.clip(img, 0, 1)


def test_or_fusion_monotone_and_recomputable():
    img = _phantomish()
    one = detect_vessels(img, MorphParams(num_scales=1, se_length_per_scale=[6]))[0]
    mask, soft = detect_vessels(img)
    assert np.all(mask[one])
    scales = detect_scales(img)
    assert np.array_equal(mask, scales[0].mask | scales[1].mask)
    assert np.array_equal(soft, np.clip(np.maximum(scales[0].response, scales[1].response), 0, 1))


def test_detect_finds_planted_line():
    img = _phantomish(1)
    mask, _ = detect_vessels(img)
    assert mask[96 // 3, 20:76].mean() > 0.9


def test_shift_invariance_dyadic():
    # dyadic grid values keep every sum exact so bit-identity is meaningful
    img = np.round(_phantomish(2) * 0.7 * 4096) / 4096
    params = MorphParams(threshold_offset=0.0)
    base = detect_vessels(img, params)[0]
    shifted = detect_vessels(img + 0.25, params)[0]
    assert np.array_equal(base, shifted)
