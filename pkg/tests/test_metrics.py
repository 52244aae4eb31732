import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aquarender.exceptions import ContractViolationError, NormalizationError
from aquarender.metrics import (
    ColorPatchSet,
    TrackSet,
    baseline_grayworld,
    baseline_histeq,
    color_accuracy,
    color_consistency,
    intensity_normalize,
    rmse_depth_norm,
    rmse_rgb,
)


class TestIntensityNormalize:
    def test_gray_value(self):
        out = intensity_normalize((0.2, 0.2, 0.2))
        np.testing.assert_allclose(out, 1 / math.sqrt(3), atol=1e-12)

    def test_scale_invariance(self, rng):
        v = rng.uniform(0.01, 1.0, 3)
        np.testing.assert_allclose(intensity_normalize(v), intensity_normalize(2 * v),
                                   atol=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(NormalizationError):
            intensity_normalize((0.0, 0.0, 0.0))

    def test_unit_length(self, rng):
        v = rng.uniform(0.01, 1.0, (10, 3))
        norms = np.linalg.norm(intensity_normalize(v), axis=-1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)

    def test_sum_mode(self):
        out = intensity_normalize((0.2, 0.3, 0.5), mode="sum")
        np.testing.assert_allclose(out, (0.2, 0.3, 0.5), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(v=hnp.arrays(np.float64, 3, elements=st.floats(1e-4, 1.0)),
       scale=st.floats(1e-3, 1e3))
def test_normalize_scale_invariance_property(v, scale):
    np.testing.assert_allclose(intensity_normalize(v), intensity_normalize(scale * v),
                               atol=1e-9)


class TestColorAccuracy:
    def test_exact_match_is_zero(self):
        patches = {"red": np.tile([0.7, 0.1, 0.1], (5, 1))}
        refs = {"red": np.array([0.7, 0.1, 0.1])}
        acc = color_accuracy(ColorPatchSet(patches=patches, references=refs))
        assert acc["red"] == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_unit_vectors(self):
        patches = {"p": np.tile([1.0, 0.0, 0.0], (3, 1))}
        refs = {"p": np.array([0.0, 1.0, 0.0])}
        acc = color_accuracy(ColorPatchSet(patches=patches, references=refs))
        assert acc["p"] == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_empty_patch_rejected(self):
        with pytest.raises(ContractViolationError):
            ColorPatchSet(patches={"p": np.zeros((0, 3))},
                          references={"p": np.array([1.0, 0, 0])})

    def test_missing_reference_rejected(self):
        with pytest.raises(ContractViolationError):
            ColorPatchSet(patches={"p": np.ones((2, 3))}, references={})


class TestColorConsistency:
    def test_identical_observations(self):
        tracks = TrackSet(tracks=[np.tile([0.4, 0.3, 0.2], (4, 1))])
        np.testing.assert_allclose(color_consistency(tracks), 0.0, atol=1e-15)

    def test_two_point_variance(self):
        # (1,0,0) and (0,1,0) stay unit vectors; R channel values {1, 0}
        tracks = TrackSet(tracks=[np.array([[1.0, 0, 0], [0, 1.0, 0]])])
        out = color_consistency(tracks)
        np.testing.assert_allclose(out, [0.25, 0.25, 0.0], atol=1e-12)

    def test_short_track_rejected(self):
        with pytest.raises(ContractViolationError):
            TrackSet(tracks=[np.ones((1, 3))])

    def test_brightness_invariance(self, rng):
        obs = rng.uniform(0.1, 0.9, (6, 3))
        scales = rng.uniform(0.2, 3.0, (6, 1))
        a = color_consistency(TrackSet(tracks=[obs]))
        b = color_consistency(TrackSet(tracks=[obs * scales]))
        np.testing.assert_allclose(a, b, atol=1e-9)


class TestRmse:
    def test_equal_is_zero(self, rng):
        img = rng.uniform(0, 1, (5, 6, 3))
        np.testing.assert_array_equal(rmse_rgb(img, img), np.zeros(3))

    def test_constant_offset_single_channel(self):
        a = np.full((4, 4, 3), 0.4)
        b = a.copy()
        b[:, :, 1] += 0.1
        np.testing.assert_allclose(rmse_rgb(a, b), [0.0, 0.1, 0.0], atol=1e-12)

    def test_symmetry(self, rng):
        a = rng.uniform(0, 1, (5, 6, 3))
        b = rng.uniform(0, 1, (5, 6, 3))
        np.testing.assert_allclose(rmse_rgb(a, b), rmse_rgb(b, a), atol=1e-15)

    def test_depth_masked(self):
        a = np.array([[1.0, 0.0], [2.0, 3.0]])
        b = np.array([[1.5, 9.0], [2.0, 0.0]])
        # only (0,0) and (1,0) are valid in both
        assert rmse_depth_norm(a, b) == pytest.approx(math.sqrt(0.25 / 2), abs=1e-12)

    def test_depth_empty_mask_rejected(self):
        with pytest.raises(ContractViolationError):
            rmse_depth_norm(np.zeros((2, 2)), np.zeros((2, 2)))


class TestHistEq:
    def test_constant_image_maps_to_one(self):
        img = np.full((4, 4, 3), 0.3)
        np.testing.assert_array_equal(baseline_histeq(img), np.ones((4, 4, 3)))

    def test_uniform_ramp_near_identity(self):
        # all 256 levels once per channel: CDF of uniform is identity (+1 bin)
        levels = np.arange(256) / 255.0
        img = np.stack([levels.reshape(16, 16)] * 3, axis=2)
        out = baseline_histeq(img)
        assert np.abs(out - img).max() <= 1.0 / 255.0 + 1e-12

    def test_rank_preservation(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        out = baseline_histeq(img)
        for ch in range(3):
            order_in = np.argsort(img[:, :, ch].ravel(), kind="stable")
            vals_out = out[:, :, ch].ravel()[order_in]
            assert np.all(np.diff(vals_out) >= -1e-15)

    def test_output_in_unit_interval(self, rng):
        out = baseline_histeq(rng.uniform(0, 1, (6, 6, 3)))
        assert out.min() >= 0.0 and out.max() <= 1.0


def _tv_to_uniform(channel):
    bins = np.round(channel * 255.0).astype(np.int64)
    hist = np.bincount(bins.ravel(), minlength=256) / bins.size
    return 0.5 * np.abs(hist - 1.0 / 256.0).sum()


@settings(max_examples=40, deadline=None)
@given(img=hnp.arrays(np.float64, (8, 9, 3), elements=st.floats(0.0, 1.0)))
def test_histeq_tv_to_uniform_does_not_increase(img):
    out = baseline_histeq(img)
    for ch in range(3):
        if np.unique(np.round(img[:, :, ch] * 255)).size < 2:
            continue
        assert _tv_to_uniform(out[:, :, ch]) <= _tv_to_uniform(img[:, :, ch]) + 1e-12


class TestGrayWorld:
    def test_gains_from_channel_means(self):
        img = np.stack([np.full((4, 4), 0.2), np.full((4, 4), 0.4),
                        np.full((4, 4), 0.6)], axis=2)
        out = baseline_grayworld(img)
        np.testing.assert_allclose(out[0, 0], [0.4, 0.4, 0.4], atol=1e-12)

    def test_gray_image_unchanged(self):
        img = np.full((5, 5, 3), 0.37)
        np.testing.assert_allclose(baseline_grayworld(img), img, atol=1e-12)

    def test_preserves_pixel_ratios_pre_clamp(self, rng):
        img = rng.uniform(0.1, 0.4, (6, 6, 3))
        out = baseline_grayworld(img)
        ratio_in = img[0, 0, 0] / img[3, 3, 0]
        ratio_out = out[0, 0, 0] / out[3, 3, 0]
        assert ratio_out == pytest.approx(ratio_in, rel=1e-9)

    def test_zero_mean_channel_rejected(self):
        img = np.zeros((3, 3, 3))
        img[:, :, 0] = 0.5
        with pytest.raises(ContractViolationError):
            baseline_grayworld(img)

    def test_post_clamp_means_close(self, rng):
        img = rng.uniform(0.05, 0.5, (12, 12, 3))
        out = baseline_grayworld(img)
        means = out.mean(axis=(0, 1))
        assert np.abs(means - means.mean()).max() < 1e-9
