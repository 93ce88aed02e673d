import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from depthfocus.optics import (CameraModel, DomainError, FocalStack, Scene, StackValidationError,
                               coc_diameter, coc_sigma_px, default_focus_distances, depth_to_disparity,
                               disparity_to_depth, gaussian_blur, layer_index, make_scene, render_frame,
                               render_stack, thin_lens_coc)

CAM = CameraModel()


class TestCoc:
    def test_in_focus_is_zero(self):
        assert coc_diameter(CAM, 1.3, 1.3) == 0.0

    def test_hand_value(self):
        # 0.05^2 / (2 * 1) * |1 - 1/2| = 6.25e-4
        assert coc_diameter(CameraModel(focal_length=0.05, f_number=2), 1.0, 2.0) == pytest.approx(6.25e-4, rel=1e-14)

    def test_identity_on_grid(self):
        z, d_f = np.meshgrid(np.linspace(0.6, 5.0, 10), np.linspace(0.5, 4.9, 10))
        z, d_f = z.ravel(), d_f.ravel()
        c = coc_diameter(CAM, d_f, z)
        lhs = c * CAM.f_number * z
        rhs = CAM.focal_length ** 2 * np.sign(z - d_f)
        nz = z != d_f
        assert np.all(np.abs(lhs[nz] - rhs[nz]) <= 1e-12 * np.abs(rhs[nz]))

    def test_sign_change_at_focus(self):
        assert coc_diameter(CAM, 2.0, 1.9) < 0 < coc_diameter(CAM, 2.0, 2.1)

    def test_magnitude_decreases_beyond_focus(self):
        z = np.linspace(1.1, 5.0, 50)
        assert np.all(np.diff(np.abs(coc_diameter(CAM, 1.0, z))) < 0)

    @pytest.mark.parametrize("z", [0.0, -1.0])
    def test_nonpositive_depth(self, z):
        with pytest.raises(DomainError):
            coc_diameter(CAM, 1.0, z)

    def test_thin_lens_hand_value(self):
        # f^2 |z - d_f| / (N z (d_f - f)) = 0.0025 * 1 / (2 * 2 * 0.95)
        assert thin_lens_coc(CAM, 1.0, 2.0) == pytest.approx(0.0025 / 3.8, rel=1e-14)
        assert thin_lens_coc(CAM, 2.0, 1.0) < 0

    def test_thin_lens_depends_on_focus(self):
        assert thin_lens_coc(CAM, 1.0, 3.0) != thin_lens_coc(CAM, 2.0, 3.0)


class TestSigma:
    def test_zero_in_focus(self):
        assert coc_sigma_px(CAM, 2.0, 2.0) == 0.0

    def test_printed_law_value(self):
        cam = CameraModel(pixel_pitch=1e-4, coc_model="printed")
        assert coc_sigma_px(cam, 1.0, 2.0) == pytest.approx(3.125, rel=1e-12)

    def test_clamped(self):
        cam = CameraModel(pixel_pitch=1e-7)
        assert coc_sigma_px(cam, 4.0, 0.01) == 8.0


class TestDisparity:
    def test_unit(self):
        bf = CAM.baseline * CAM.focal_length
        assert depth_to_disparity(np.array(bf), CAM) == pytest.approx(1.0)

    def test_small_baseline_value(self):
        cam = CameraModel(baseline=0.01, focal_length=0.05)
        assert depth_to_disparity(0.5, cam) == pytest.approx(1e-3, rel=1e-12)

    def test_round_trip(self):
        d = np.random.default_rng(0).uniform(0.1, 10, (8, 8))
        np.testing.assert_allclose(disparity_to_depth(depth_to_disparity(d, CAM), CAM), d, rtol=1e-12)

    def test_nonpositive(self):
        with pytest.raises(DomainError):
            depth_to_disparity(np.array([1.0, 0.0]), CAM)
        with pytest.raises(DomainError):
            disparity_to_depth(np.array([-1.0]), CAM)


def constant_scene(z, seed=0, size=32):
    rng = np.random.default_rng(seed)
    return Scene(rng.uniform(0, 1, (size, size, 3)), np.full((size, size), z))


class TestRender:
    def test_in_focus_constant_scene_is_identity(self):
        scene = constant_scene(1.5)
        np.testing.assert_allclose(render_frame(scene, CAM, 1.5), scene.image, atol=1e-6)

    def test_constant_scene_matches_global_gaussian(self):
        scene = constant_scene(4.0)
        sigma = coc_sigma_px(CAM, 0.6, 4.0)
        assert sigma > 1
        oracle = ndimage.gaussian_filter(scene.image, sigma=(sigma, sigma, 0), mode="reflect", truncate=3.0)
        np.testing.assert_allclose(render_frame(scene, CAM, 0.6), oracle, atol=1e-5)

    def test_blur_matches_scipy(self):
        img = np.random.default_rng(3).uniform(size=(20, 17))
        np.testing.assert_allclose(gaussian_blur(img, 1.7), ndimage.gaussian_filter(img, 1.7, truncate=3.0), atol=1e-12)

    def test_front_layer_interior_sharp(self):
        rng = np.random.default_rng(1)
        depth = np.full((48, 48), 4.5)
        depth[8:40, 8:40] = 0.8
        scene = Scene(rng.uniform(0, 1, (48, 48, 3)), depth)
        out = render_frame(scene, CAM, 0.8)
        back_sigma = coc_sigma_px(CAM, 0.8, 4.5)
        m = int(np.ceil(3 * back_sigma)) + 1
        np.testing.assert_allclose(out[8 + m:40 - m, 8 + m:40 - m], scene.image[8 + m:40 - m, 8 + m:40 - m],
                                   atol=1e-12)

    def test_range_and_energy(self):
        scene = constant_scene(3.0, size=40)
        out = render_frame(scene, CAM, 0.5)
        assert out.min() >= 0 and out.max() <= 1
        assert abs(out.sum() / scene.image.sum() - 1) < 0.02

    def test_stack_ordering(self):
        scene = make_scene(2)
        stack = render_stack(scene, CAM, default_focus_distances())
        assert len(stack) == 10 and stack.frames.shape == (10, 64, 64, 3)
        assert np.all(np.diff(stack.focus_distances) > 0)
        single = render_stack(scene, CAM, [1.0])
        assert len(single) == 1

    def test_unsorted_distances_rejected(self):
        with pytest.raises(StackValidationError):
            render_stack(make_scene(2), CAM, [2.0, 1.0])

    def test_default_distances(self):
        d = default_focus_distances()
        assert d[0] == pytest.approx(0.5) and d[-1] == pytest.approx(5.0)
        np.testing.assert_allclose(np.diff(1 / d), np.diff(1 / d)[0])


class TestScene:
    def test_deterministic(self):
        a, b = make_scene(11), make_scene(11)
        assert a.image.tobytes() == b.image.tobytes() and a.depth.tobytes() == b.depth.tobytes()

    def test_shapes_and_range(self):
        s = make_scene(5)
        assert s.image.shape == (64, 64, 3) and s.depth.shape == (64, 64)
        assert s.depth.min() >= 0.5 and s.depth.max() <= 5.0

    def test_layer_diversity(self):
        for seed in range(50):
            s = make_scene(seed)
            assert len(np.unique(layer_index(s.depth, 0.5, 5.0))) >= 3

    def test_requires_patch_multiple(self):
        with pytest.raises(ValueError):
            make_scene(0, 60, 64)


class TestStackValidation:
    def test_not_ascending(self):
        with pytest.raises(StackValidationError, match="ascending"):
            FocalStack(np.zeros((2, 4, 4, 3)), [2.0, 2.0], CAM)

    def test_count_mismatch(self):
        with pytest.raises(StackValidationError, match="3 frames but 2"):
            FocalStack(np.zeros((3, 4, 4, 3)), [1.0, 2.0], CAM)

    def test_prefix(self):
        stack = FocalStack(np.zeros((3, 4, 4, 3)), [1.0, 2.0, 3.0], CAM)
        assert len(stack.prefix(2)) == 2
        with pytest.raises(StackValidationError):
            stack.prefix(0)


@settings(max_examples=40, deadline=None)
@given(d_f=st.floats(0.5, 5.0), z=st.floats(0.5, 5.0))
def test_sigma_bounds(d_f, z):
    s = coc_sigma_px(CAM, d_f, z)
    assert 0.0 <= s <= 8.0
