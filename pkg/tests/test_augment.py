import json

import numpy as np
import pytest
from scipy import ndimage

from aerialclr import augment as aug


def _rand_img(rng, h=32, w=32):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


class TestGeometricOps:
    def test_rot90_explicit_permutation(self):
        img = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        out = aug.rotate90(img, 1)
        # counterclockwise quarter turn: out[i, j] = img[j, W-1-i]
        expect = np.stack([[img[0, 1], img[1, 1]], [img[0, 0], img[1, 0]]])
        np.testing.assert_array_equal(out, expect)

    def test_rot90_four_times_identity(self):
        rng = np.random.default_rng(0)
        img = _rand_img(rng)
        out = img
        for _ in range(4):
            out = aug.rotate90(out, 1)
        np.testing.assert_array_equal(out, img)

    def test_rot90_composition(self):
        rng = np.random.default_rng(1)
        img = _rand_img(rng)
        np.testing.assert_array_equal(aug.rotate90(aug.rotate90(img, 1), 2),
                                      aug.rotate90(img, 3))

    def test_rot90_nonsquare_swaps_dims(self):
        img = np.zeros((8, 12, 3), dtype=np.uint8)
        assert aug.rotate90(img, 1).shape == (12, 8, 3)

    def test_hflip_involution(self):
        rng = np.random.default_rng(2)
        img = _rand_img(rng)
        np.testing.assert_array_equal(aug.hflip(aug.hflip(img)), img)

    def test_crop_bounds_checked(self):
        img = np.zeros((16, 16, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            aug.crop(img, 10, 10, 8)

    def test_random_crop_uniform_and_legal(self):
        rng = np.random.default_rng(3)
        img = _rand_img(rng, 40, 40)
        for _ in range(200):
            patch, (x, y) = aug.random_crop(img, 17, rng)
            assert patch.shape == (17, 17, 3)
            np.testing.assert_array_equal(patch, img[y:y + 17, x:x + 17])


class TestPhotometricOps:
    def test_brightness_scales_float(self):
        rng = np.random.default_rng(4)
        f = rng.uniform(0, 255, size=(8, 8, 3)).astype(np.float32)
        np.testing.assert_allclose(aug.adjust_brightness(f, 0.7), 0.7 * f, rtol=1e-6)

    def test_brightness_uint8_rounding(self):
        rng = np.random.default_rng(5)
        img = _rand_img(rng)
        # factors exact in binary make the float32 path bit-predictable
        for factor in (0.75, 1.25, 0.5):
            out = aug.adjust_brightness(img, factor)
            ref = np.clip(np.rint(img.astype(np.float64) * factor), 0, 255)
            np.testing.assert_array_equal(out, ref.astype(np.uint8))
        out = aug.adjust_brightness(img, 1.3)
        exact = np.clip(img.astype(np.float64) * 1.3, 0, 255)
        assert np.abs(out.astype(np.float64) - exact).max() <= 1.0

    def test_contrast_identity_and_collapse(self):
        rng = np.random.default_rng(6)
        f = rng.uniform(0, 255, size=(8, 8, 3)).astype(np.float32)
        np.testing.assert_allclose(aug.adjust_contrast(f, 1.0), f, atol=1e-4)
        flat = aug.adjust_contrast(f, 0.0)
        assert np.ptp(flat) < 1e-4  # constant image at the luma mean
        mean = float((f @ aug.REC601).mean())
        np.testing.assert_allclose(flat.ravel()[0], mean, rtol=1e-5)

    def test_saturation_zero_is_grayscale(self):
        rng = np.random.default_rng(7)
        f = rng.uniform(0, 255, size=(8, 8, 3)).astype(np.float32)
        out = aug.adjust_saturation(f, 0.0)
        np.testing.assert_allclose(out[..., 0], out[..., 1], atol=1e-4)
        np.testing.assert_allclose(out[..., 1], out[..., 2], atol=1e-4)
        np.testing.assert_allclose(out[..., 0], f @ aug.REC601, rtol=1e-5)

    def test_grayscale_weights(self):
        rng = np.random.default_rng(8)
        img = _rand_img(rng)
        out = aug.grayscale(img)
        manual = np.rint(img.astype(np.float64) @ [0.299, 0.587, 0.114])
        np.testing.assert_allclose(out[..., 0].astype(np.float64), manual, atol=1.0)
        np.testing.assert_array_equal(out[..., 0], out[..., 1])
        np.testing.assert_array_equal(out[..., 1], out[..., 2])

    def test_hue_zero_identity_uint8(self):
        rng = np.random.default_rng(9)
        img = _rand_img(rng)
        np.testing.assert_array_equal(aug.adjust_hue(img, 0.0), img)

    def test_hue_wraps(self):
        rng = np.random.default_rng(10)
        img = _rand_img(rng)
        np.testing.assert_array_equal(aug.adjust_hue(img, 0.3),
                                      aug.adjust_hue(img, 0.3 - 1.0))

    def test_hue_full_turn_identity(self):
        rng = np.random.default_rng(11)
        img = _rand_img(rng)
        np.testing.assert_array_equal(aug.adjust_hue(img, 1.0), img)


class TestBlur:
    def test_constant_image_invariant(self):
        img = np.full((16, 16, 3), 77, dtype=np.uint8)
        np.testing.assert_array_equal(aug.gaussian_blur(img, 1.5), img)

    def test_matches_full_2d_convolution(self):
        # separable route vs an independent dense 2-D convolution
        rng = np.random.default_rng(12)
        f = rng.uniform(0, 255, size=(24, 24, 3)).astype(np.float64)
        sigma, radius = 1.3, 11
        xs = np.arange(-radius, radius + 1, dtype=np.float64)
        k1 = np.exp(-(xs**2) / (2 * sigma**2))
        k1 /= k1.sum()
        k2 = np.outer(k1, k1)
        ref = np.stack([ndimage.convolve(f[..., c], k2, mode="reflect")
                        for c in range(3)], axis=2)
        out = aug.gaussian_blur(f.astype(np.float32), sigma, radius=radius)
        np.testing.assert_allclose(out, ref, rtol=1e-4, atol=1e-3)

    def test_blur_reduces_variance(self):
        rng = np.random.default_rng(13)
        img = _rand_img(rng, 32, 32)
        out = aug.gaussian_blur(img, 2.0)
        assert out.astype(float).var() < img.astype(float).var()

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError):
            aug.gaussian_blur(np.zeros((4, 4, 3), np.uint8), 0.0)


class TestColorSpec:
    def test_spec_replay_deterministic(self):
        cfg = aug.AugmentConfig()
        rng = np.random.default_rng(14)
        img = _rand_img(rng, 24, 24)
        spec = aug.sample_color_spec(np.random.default_rng(5), cfg)
        a = aug.apply_color_spec(img, spec, cfg)
        b = aug.apply_color_spec(img, spec, cfg)
        np.testing.assert_array_equal(a, b)

    def test_spec_json_serializable(self):
        cfg = aug.AugmentConfig()
        spec = aug.sample_color_spec(np.random.default_rng(6), cfg)
        parsed = json.loads(json.dumps(spec))
        assert parsed["order"] == spec["order"]

    def test_factor_ranges(self):
        cfg = aug.AugmentConfig()
        for seed in range(50):
            spec = aug.sample_color_spec(np.random.default_rng(seed), cfg)
            f = spec["factors"]
            assert 0.6 <= f["brightness"] <= 1.4
            assert 0.6 <= f["contrast"] <= 1.4
            assert 0.6 <= f["saturation"] <= 1.4
            assert -0.1 <= f["hue"] <= 0.1
            assert sorted(spec["order"]) == ["brightness", "contrast",
                                             "hue", "saturation"]

    def test_probability_switches(self):
        cfg = aug.AugmentConfig(p_gray=1.0, p_blur=0.0)
        spec = aug.sample_color_spec(np.random.default_rng(0), cfg)
        assert spec["gray"] is True and spec["blur_sigma"] is None
        cfg = aug.AugmentConfig(p_gray=0.0, p_blur=1.0)
        spec = aug.sample_color_spec(np.random.default_rng(0), cfg)
        assert spec["gray"] is False and spec["blur_sigma"] is not None


class TestViewSamplers:
    CFG = aug.AugmentConfig(crop_size=16)

    def test_two_view_traces_differ(self):
        rng = np.random.default_rng(15)
        patch = _rand_img(rng, 32, 32)
        views, trace = aug.two_view_sample(patch, np.random.default_rng(3), self.CFG)
        assert set(views) == {"q", "k"}
        assert trace["q"] != trace["k"]
        assert views["q"].shape == (16, 16, 3)

    def test_three_view_names(self):
        rng = np.random.default_rng(16)
        patch = _rand_img(rng, 32, 32)
        views, trace = aug.three_view_sample(patch, np.random.default_rng(4), self.CFG)
        assert set(views) == {"q1", "q2", "k"}
        assert len({json.dumps(trace[n]) for n in trace}) == 3

    def test_geo_pairing_exact(self):
        # the key must be the rotated color view: same color chain as q1,
        # same rotation as q2, checked at pixel level over many draws
        rng = np.random.default_rng(17)
        for seed in range(30):
            patch = _rand_img(rng, 40, 40)
            views, trace = aug.geo_view_sample(patch, np.random.default_rng(seed),
                                               self.CFG)
            k = trace["rot_k"]
            assert k in (1, 2, 3)
            np.testing.assert_array_equal(views["k"], aug.rotate90(views["q1"], k))
            np.testing.assert_array_equal(views["q2"], aug.rotate90(views["base"], k))
            # undoing the rotation recovers the color view exactly
            np.testing.assert_array_equal(aug.rotate90(views["k"], -k), views["q1"])

    def test_geo_base_is_plain_crop(self):
        rng = np.random.default_rng(18)
        patch = _rand_img(rng, 40, 40)
        views, trace = aug.geo_view_sample(patch, np.random.default_rng(1), self.CFG)
        x, y = trace["crop"]
        ref = patch[y:y + 16, x:x + 16]
        if trace["flip"]:
            ref = ref[:, ::-1]
        np.testing.assert_array_equal(views["base"], ref)

    def test_sampler_registry_covers_strategies(self):
        assert set(aug.VIEW_SAMPLERS) == {"moco_v2", "moco_cld", "moco_geo",
                                          "geocld", "mixco"}


class TestTensorConversion:
    def test_normalize_stack_matches_manual(self):
        rng = np.random.default_rng(19)
        stack = rng.integers(0, 256, size=(4, 8, 8, 3), dtype=np.uint8)
        mean = np.array([0.4, 0.5, 0.3])
        std = np.array([0.2, 0.25, 0.3])
        out = aug.normalize_stack(stack, mean, std)
        assert out.shape == (4, 3, 8, 8) and out.dtype == np.float32
        manual = (stack[2, 3, 4, 1] / 255.0 - 0.5) / 0.25
        np.testing.assert_allclose(out[2, 1, 3, 4], manual, rtol=1e-5)

    def test_channel_stats(self):
        rng = np.random.default_rng(20)
        imgs = [rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8) for _ in range(5)]
        mean, std = aug.channel_stats(imgs)
        flat = np.concatenate([im.reshape(-1, 3) for im in imgs]).astype(np.float64) / 255
        np.testing.assert_allclose(mean, flat.mean(axis=0), rtol=1e-9)
        np.testing.assert_allclose(std, flat.std(axis=0), atol=1e-7)
