import math

import numpy as np
import pytest

from aquarender.exceptions import AmbiguityError, InvalidParameterError
from aquarender.physics import (
    CameraParams,
    RenderModel,
    WaterParams,
    normalize_depth,
    render,
    vignette_mask,
)
from aquarender.restoration import (
    baseline_attenuation_only,
    estimate_depth,
    invert_render,
    restore_monocular,
    saturation_mask,
)

from conftest import random_model, random_scene

WATER = WaterParams(eta=(0.45, 0.25, 0.12), beta=(0.05, 0.10, 0.15))
CAM = CameraParams(a=0.1, b=0.01, c=0.001, k=1.0)
MODEL = RenderModel(water=WATER, camera=CAM, noise_sigma=0.0, max_altitude=2.0)


def gray_scene(h=48, w=64, value=0.5, depth_range=(0.3, 1.8)):
    img = np.full((h, w, 3), value)
    ramp = np.linspace(*depth_range, h)[:, None]
    depth = np.broadcast_to(ramp, (h, w)).copy()
    return img, depth


class TestInvertRender:
    def test_round_trip_random_scenes(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            model = random_model(rng)
            img, depth = random_scene(rng)
            uw = render(img, depth, model, seed=0)
            restored = invert_render(uw, depth, model)
            unclamped = ~saturation_mask(uw)
            err = (restored - img)[unclamped]
            assert np.sqrt(np.mean(err ** 2)) < 1e-6

    def test_near_identity_model(self, rng):
        water = WaterParams(eta=(1e-9, 1e-9, 1e-9), beta=(0.0, 0.0, 0.0))
        cam = CameraParams(a=1e-12, b=0.0, c=1e-12, k=1.0)
        model = RenderModel(water=water, camera=cam)
        uw = rng.uniform(0.05, 0.95, (6, 7, 3))
        out = invert_render(uw, np.full((6, 7), 1.0), model)
        np.testing.assert_allclose(out, uw, atol=1e-8)

    def test_single_pixel_hand_value(self):
        # inverse of the gray forward example: blue channel at r = 2
        water = WaterParams(eta=(0.4, 0.2, 0.1), beta=(0.05, 0.1, 0.15))
        cam = CameraParams(a=1e-12, b=0.0, c=1e-12, k=1.0)
        model = RenderModel(water=water, camera=cam)
        uw_blue = 0.5 * math.exp(-0.2) + 0.15 * (1 - math.exp(-0.2))
        uw = np.full((1, 1, 3), uw_blue)
        out = invert_render(uw, np.full((1, 1), 2.0), model)
        assert out[0, 0, 2] == pytest.approx(0.5, abs=1e-9)

    def test_missing_depth_passes_through(self, rng):
        model = random_model(rng)
        img, depth = random_scene(rng)
        uw = render(img, depth, model, seed=0)
        depth[2, 3] = 0.0
        out = invert_render(uw, depth, model, zero_is_missing=True)
        np.testing.assert_array_equal(out[2, 3], uw[2, 3])


class TestEstimateDepth:
    def test_gray_scene_round_trip(self):
        img, depth = gray_scene()
        uw = render(img, depth, MODEL, seed=0)
        est = estimate_depth(uw, MODEL)
        true_rel = normalize_depth(depth, MODEL.max_altitude)
        rmse = np.sqrt(np.mean((est - true_rel) ** 2))
        assert rmse < 0.02

    def test_flat_depth_constant_estimate(self):
        img = np.full((16, 20, 3), 0.5)
        uw = render(img, np.full((16, 20), 1.2), MODEL, seed=0)
        est = estimate_depth(uw, MODEL)
        assert est.max() - est.min() < 0.01
        assert est[8, 10] == pytest.approx(0.6, abs=0.01)

    def test_error_shrinks_with_grid_refinement(self):
        # refine_tol = 1 disables golden-section polish, isolating the grid
        img, depth = gray_scene(24, 32)
        uw = render(img, depth, MODEL, seed=0)
        true_rel = normalize_depth(depth, MODEL.max_altitude)
        errs = []
        for grid in (8, 64):
            est = estimate_depth(uw, MODEL, grid_size=grid, refine_tol=1.0,
                                 median_pass=False)
            errs.append(np.sqrt(np.mean((est - true_rel) ** 2)))
        assert errs[1] < errs[0]
        assert errs[1] < 0.02

    def test_refinement_reaches_tolerance_floor(self):
        img, depth = gray_scene(24, 32)
        uw = render(img, depth, MODEL, seed=0)
        true_rel = normalize_depth(depth, MODEL.max_altitude)
        est = estimate_depth(uw, MODEL, grid_size=64, refine_tol=1e-6,
                             median_pass=False)
        assert np.sqrt(np.mean((est - true_rel) ** 2)) < 1e-6

    def test_degenerate_eta_rejected(self):
        water = WaterParams(eta=(0.2, 0.2, 0.2), beta=(0.05, 0.1, 0.15))
        model = RenderModel(water=water, camera=CAM)
        with pytest.raises(AmbiguityError):
            estimate_depth(np.full((8, 8, 3), 0.4), model)

    def test_output_in_unit_interval(self, rng):
        img, depth = gray_scene(16, 20)
        uw = render(img, depth, MODEL, seed=0)
        est = estimate_depth(uw, MODEL)
        assert est.min() >= 0.0 and est.max() <= 1.0

    def test_bad_grid_rejected(self):
        with pytest.raises(InvalidParameterError):
            estimate_depth(np.full((4, 4, 3), 0.5), MODEL, grid_size=1)


class TestRestoreMonocular:
    def test_gray_scene_restoration(self):
        img, depth = gray_scene()
        uw = render(img, depth, MODEL, seed=0)
        result = restore_monocular(uw, MODEL)
        per_channel = np.sqrt(np.mean((result.restored - img) ** 2, axis=(0, 1)))
        assert np.all(per_channel < 0.03)
        assert result.depth_rel.shape == depth.shape
        assert result.restored.shape == img.shape
        assert result.residual.shape == depth.shape
        assert result.depth_rel.min() >= 0.0 and result.depth_rel.max() <= 1.0

    def test_degenerate_eta_propagates(self):
        water = WaterParams(eta=(0.2, 0.2, 0.2), beta=(0.0, 0.0, 0.0))
        model = RenderModel(water=water, camera=CAM)
        with pytest.raises(AmbiguityError):
            restore_monocular(np.full((8, 8, 3), 0.4), model)

    def test_deterministic(self):
        img, depth = gray_scene(16, 20)
        uw = render(img, depth, MODEL, seed=0)
        a = restore_monocular(uw, MODEL)
        b = restore_monocular(uw, MODEL)
        np.testing.assert_array_equal(a.restored, b.restored)
        np.testing.assert_array_equal(a.depth_rel, b.depth_rel)
        np.testing.assert_array_equal(a.residual, b.residual)

    def test_residual_matches_recomputed_forward_error(self):
        img, depth = gray_scene(16, 20)
        uw = render(img, depth, MODEL, seed=0)
        result = restore_monocular(uw, MODEL)
        # recompute the model error at the returned (alpha, r) independently
        r = result.depth_rel * MODEL.max_altitude
        h, w = uw.shape[:2]
        v = vignette_mask(w, h, MODEL.camera)
        g2 = (uw / MODEL.camera.k) * v[:, :, None]
        e = np.exp(-r[:, :, None] * MODEL.water.eta[None, None, :])
        b = MODEL.water.beta[None, None, :] * (1.0 - e)
        alpha = np.sum(e * (g2 - b), axis=2) / np.sum(e * e, axis=2)
        resid = np.sum((g2 - alpha[:, :, None] * e - b) ** 2, axis=2)
        np.testing.assert_allclose(result.residual, resid, atol=1e-9)

    def test_view_consistency_two_ranges(self):
        # one gray scene point rendered at two ranges restores to equal colors
        img = np.full((12, 12, 3), 0.55)
        colors = []
        for r in (0.7, 1.6):
            uw = render(img, np.full((12, 12), r), MODEL, seed=0)
            res = restore_monocular(uw, MODEL)
            colors.append(res.restored[6, 6])
        assert np.abs(colors[0] - colors[1]).max() < 0.02


class TestBaselineAttenuationOnly:
    def test_near_zero_eta_is_identity(self, rng):
        uw = rng.uniform(0.1, 0.9, (5, 6, 3))
        out = baseline_attenuation_only(uw, np.full((5, 6), 2.0),
                                        (1e-12, 1e-12, 1e-12))
        np.testing.assert_allclose(out, uw, atol=1e-9)

    def test_inverse_of_pure_attenuation(self):
        uw_val = 0.8 * math.exp(-0.7)
        uw = np.full((3, 3, 3), uw_val)
        out = baseline_attenuation_only(uw, np.full((3, 3), 2.0), (0.35, 0.35, 0.35))
        assert out[1, 1, 0] == pytest.approx(0.8, abs=1e-9)

    def test_differs_from_full_inverse_with_backscatter(self):
        img, depth = gray_scene(8, 10)
        uw = render(img, depth, MODEL, seed=0)
        full = invert_render(uw, depth, MODEL)
        att = baseline_attenuation_only(uw, depth, MODEL.water.eta)
        assert np.abs(full - att).max() > 1e-3

    def test_invalid_eta_rejected(self):
        with pytest.raises(InvalidParameterError):
            baseline_attenuation_only(np.full((2, 2, 3), 0.5), np.ones((2, 2)),
                                      (0.0, 0.1, 0.1))


class TestSaturationMask:
    def test_flags_bounds(self):
        img = np.full((2, 2, 3), 0.5)
        img[0, 0, 1] = 1.0
        img[1, 1, 2] = 0.0
        mask = saturation_mask(img)
        np.testing.assert_array_equal(mask, [[True, False], [False, True]])
