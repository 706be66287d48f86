"""MPI structure, compositing, warping and rendering tests."""

import numpy as np
import pytest

from mpifield.autodiff import Tape, Tensor, mean, parameter
from mpifield.errors import ShapeError
from mpifield.geometry import CameraView, Intrinsics, PlaneStack, disparity_depths
from mpifield.mpi import (
    MultiplaneImage,
    PlaneRenderer,
    composite,
    compositing_weights,
    pseudo_depth,
    render_base,
    warp_mpi,
    weighted_plane_sum,
)
from mpifield.synthetic import SceneModel, SyntheticSceneSpec, aligned_spec, \
    generate_synthetic, mpi_from_scene

from helpers import check_param_grad, image_psnr


def make_cam(fx=80.0, w=64, h=48, R=None, t=None):
    return CameraView(Intrinsics(fx, fx, w / 2, h / 2, w, h),
                      np.eye(3) if R is None else R,
                      np.zeros(3) if t is None else np.asarray(t, float))


def random_mpi(rng, D=5, H=8, W=10, features=0):
    cam = make_cam(w=W, h=H)
    planes = disparity_depths(1.0, 6.0, D)
    base = rng.random((D, 3, H, W)).astype(np.float32)
    alpha = rng.random((D, 1, H, W)).astype(np.float32)
    feats = rng.random((D, features, H, W)).astype(np.float32) if features else None
    return MultiplaneImage(cam, planes, base, alpha, feats)


class TestComposite:
    def test_single_opaque_plane_passes_color(self):
        colors = np.full((1, 3, 2, 2), 0.7, np.float32)
        alphas = np.ones((1, 1, 2, 2), np.float32)
        out = composite(colors, alphas)
        np.testing.assert_allclose(out, 0.7, atol=1e-7)

    def test_two_plane_hand_derived_over(self):
        # front (0,1,0) a=0.5 over back (1,0,0) a=1 -> (0.5, 0.5, 0)
        colors = np.zeros((2, 3, 1, 1), np.float32)
        colors[0, 1] = 1.0   # front green (index 0 = nearest)
        colors[1, 0] = 1.0   # back red
        alphas = np.zeros((2, 1, 1, 1), np.float32)
        alphas[0] = 0.5
        alphas[1] = 1.0
        out = composite(colors, alphas)
        np.testing.assert_allclose(out[:, 0, 0], [0.5, 0.5, 0.0], atol=1e-7)

    def test_all_transparent_gives_black(self):
        rng = np.random.default_rng(0)
        colors = rng.random((4, 3, 3, 3)).astype(np.float32)
        alphas = np.zeros((4, 1, 3, 3), np.float32)
        np.testing.assert_array_equal(composite(colors, alphas), 0.0)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            composite(np.zeros((2, 3, 4, 4)), np.zeros((3, 1, 4, 4)))

    @pytest.mark.parametrize("seed", range(10))
    def test_weight_form_equals_recursive_over(self, seed):
        rng = np.random.default_rng(seed)
        D = int(rng.integers(1, 8))
        colors = rng.random((D, 3, 4, 5)).astype(np.float32)
        alphas = rng.random((D, 1, 4, 5)).astype(np.float32)
        w = compositing_weights(alphas)
        weighted = (w * colors).sum(axis=0)
        # independent recursive back-to-front over
        out = np.zeros((3, 4, 5), dtype=np.float64)
        for d in range(D - 1, -1, -1):
            out = colors[d] * alphas[d] + (1.0 - alphas[d]) * out
        np.testing.assert_allclose(weighted, out, atol=1e-6)
        np.testing.assert_allclose(composite(colors, alphas), out, atol=1e-6)

    def test_weight_sum_identity(self):
        rng = np.random.default_rng(3)
        alphas = rng.random((6, 1, 3, 4)).astype(np.float32)
        w = compositing_weights(alphas)
        np.testing.assert_allclose(w.sum(axis=0), 1.0 - np.prod(1.0 - alphas, axis=0),
                                   atol=1e-6)

    def test_single_plane_weight(self):
        alphas = np.full((1, 1, 2, 2), 0.3, np.float32)
        np.testing.assert_allclose(compositing_weights(alphas), 0.3, atol=1e-7)

    def test_opaque_nearest_takes_all(self):
        alphas = np.array([1.0, 0.4, 0.9], np.float32).reshape(3, 1, 1, 1)
        w = compositing_weights(alphas)
        np.testing.assert_allclose(w[:, 0, 0, 0], [1.0, 0.0, 0.0], atol=1e-7)

    def test_occlusion_independence(self):
        rng = np.random.default_rng(5)
        colors = rng.random((4, 3, 3, 3)).astype(np.float32)
        alphas = rng.random((4, 1, 3, 3)).astype(np.float32)
        alphas[0] = 1.0
        out1 = composite(colors, alphas)
        colors2 = colors.copy()
        colors2[1:] = rng.random((3, 3, 3, 3))
        out2 = composite(colors2, alphas)
        np.testing.assert_allclose(out1, out2, atol=1e-6)

    def test_output_range_bounded(self):
        rng = np.random.default_rng(7)
        colors = rng.random((5, 3, 4, 4)).astype(np.float32)
        alphas = rng.random((5, 1, 4, 4)).astype(np.float32)
        out = composite(colors, alphas)
        assert out.min() >= 0.0 and out.max() <= 1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients_vs_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        colors = rng.random((3, 2, 3, 3)).astype(np.float32)
        alphas = (rng.random((3, 1, 3, 3)) * 0.9 + 0.05).astype(np.float32)

        def build_c(p):
            return mean(composite(p, Tensor(alphas)) * 2.0)

        ok, worst, _, _ = check_param_grad(build_c, colors)
        assert ok, f"color grad seed {seed}: {worst}"

        def build_a(p):
            return mean(composite(Tensor(colors), p).abs())

        ok, worst, _, _ = check_param_grad(build_a, alphas)
        assert ok, f"alpha grad seed {seed}: {worst}"

    def test_weighted_plane_sum_matches_manual(self):
        rng = np.random.default_rng(9)
        vals = rng.random((4, 6, 3, 3)).astype(np.float32)
        alphas = rng.random((4, 1, 3, 3)).astype(np.float32)
        w = compositing_weights(alphas)
        out = weighted_plane_sum(vals, w)
        np.testing.assert_allclose(out, (w * vals).sum(axis=0), atol=1e-6)

        def build(p):
            return mean(weighted_plane_sum(p, w))

        ok, worst, _, _ = check_param_grad(build, vals)
        assert ok, f"grad: {worst}"


class TestMultiplaneImage:
    def test_rejects_out_of_range_alpha(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ShapeError):
            MultiplaneImage(make_cam(), disparity_depths(1, 4, 2),
                            rng.random((2, 3, 4, 4)).astype(np.float32),
                            np.full((2, 1, 4, 4), 1.5, np.float32))

    def test_rejects_plane_count_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ShapeError):
            MultiplaneImage(make_cam(), disparity_depths(1, 4, 3),
                            rng.random((2, 3, 4, 4)).astype(np.float32),
                            rng.random((2, 1, 4, 4)).astype(np.float32))


class TestWarp:
    def test_reference_view_identity_is_bitwise(self):
        rng = np.random.default_rng(1)
        mpi = random_mpi(rng)
        warped = warp_mpi(mpi, mpi.ref_cam)
        assert np.array_equal(warped.colors.data, mpi.base_color)
        assert np.array_equal(warped.alphas.data, mpi.alpha)
        assert warped.validity.min() == 1.0
        out = render_base(mpi, mpi.ref_cam)
        direct = composite(mpi.base_color, mpi.alpha)
        assert np.array_equal(out, direct)

    def test_translation_shifts_by_disparity(self):
        # plane content shifts by fx*b/depth pixels per plane
        rng = np.random.default_rng(2)
        D, H, W = 3, 32, 48
        cam = make_cam(fx=60.0, w=W, h=H)
        planes = disparity_depths(2.0, 8.0, D)
        base = np.zeros((D, 3, H, W), np.float32)
        base[:, :, :, W // 2] = 1.0   # vertical stripe on every plane
        alpha = np.full((D, 1, H, W), 0.0, np.float32)
        mpi = MultiplaneImage(cam, planes, base, alpha)
        b = 0.4
        # t = +b means the camera center sits at world x = -b (moved left),
        # so plane content shifts right by fx*b/depth
        tgt = make_cam(fx=60.0, w=W, h=H, t=[b, 0, 0])
        warped = warp_mpi(mpi, tgt)
        for d, depth in enumerate(planes.depths):
            shift = 60.0 * b / depth
            row = warped.colors.data[d, 0, H // 2]
            com = (row * np.arange(W)).sum() / row.sum()
            assert com == pytest.approx(W // 2 + shift, abs=0.05)

    def test_far_outside_frustum_is_transparent(self):
        rng = np.random.default_rng(3)
        mpi = random_mpi(rng)
        tgt = make_cam(w=10, h=8, t=[50.0, 0.0, 0.0])
        warped = warp_mpi(mpi, tgt)
        assert warped.validity.max() == 0.0
        out = composite(warped.colors.data, warped.alphas.data)
        np.testing.assert_array_equal(out, 0.0)

    def test_validity_gates_alpha(self):
        rng = np.random.default_rng(4)
        mpi = random_mpi(rng, D=3, H=12, W=16)
        tgt = make_cam(w=16, h=12, t=[-1.0, 0.0, 0.0])
        warped = warp_mpi(mpi, tgt)
        invalid = warped.validity == 0.0
        assert invalid.any()
        assert np.all(warped.alphas.data[invalid] == 0.0)


class TestRenderOracle:
    @pytest.fixture(scope="class")
    def scene(self):
        near, far = 1.1, 7.0
        spec = SyntheticSceneSpec(width=96, height=64, focal=80.0,
                                  texture_px=(8.0, 26.0), coverage=0.3,
                                  cam_lateral=0.4, cam_vertical=0.25,
                                  cam_forward=0.1, focus_depth=2.0)
        spec = aligned_spec(spec, near, far, 48, (2, 24, 45))
        ds, model = generate_synthetic(spec, 6, ts=0.5)
        ds.near, ds.far = near, far
        planes = disparity_depths(near, far, 48)
        mpi = mpi_from_scene(model, ds.ref_cam, planes, t=0.5)
        return ds, model, mpi

    def test_novel_view_matches_ray_traced_oracle(self, scene):
        ds, model, mpi = scene
        for photo in ds.photos[1:4]:
            warped = warp_mpi(mpi, photo.cam)
            pred = composite(warped.colors.data, warped.alphas.data)
            valid = warped.validity.min(axis=0)[0] >= 1.0
            gt = model.render(photo.cam, 0.5)
            psnr = image_psnr(pred, gt, valid[None])
            assert psnr > 40.0, f"photo {photo.id}: {psnr:.1f} dB"

    def test_fused_renderer_matches_modular_path(self, scene):
        ds, model, mpi = scene
        renderer = PlaneRenderer(mpi)
        for photo in ds.photos[1:4]:
            fused = renderer.render_base(photo.cam)
            warped = warp_mpi(mpi, photo.cam)
            modular = composite(warped.colors.data, warped.alphas.data)
            assert np.abs(fused - modular).max() < 1e-5


class TestPseudoDepth:
    def test_single_opaque_plane_depth(self):
        cam = make_cam(w=6, h=4)
        planes = PlaneStack(np.array([5.0]))
        base = np.zeros((1, 3, 4, 6), np.float32)
        alpha = np.ones((1, 1, 4, 6), np.float32)
        mpi = MultiplaneImage(cam, planes, base, alpha)
        depth, valid = pseudo_depth(mpi)
        assert valid.all()
        np.testing.assert_allclose(depth, 5.0, atol=1e-5)

    def test_two_plane_weighted_mean_disparity(self):
        # weights 0.5/0.5 at disparities 1 and 0.5 -> mean 0.75 -> depth 4/3
        cam = make_cam(w=4, h=4)
        planes = PlaneStack(np.array([1.0, 2.0]))
        base = np.zeros((2, 3, 4, 4), np.float32)
        alpha = np.zeros((2, 1, 4, 4), np.float32)
        alpha[0] = 0.5
        alpha[1] = 1.0   # back weight = 1 * (1-0.5) = 0.5
        mpi = MultiplaneImage(cam, planes, base, alpha)
        depth, valid = pseudo_depth(mpi)
        assert valid.all()
        np.testing.assert_allclose(depth, 4.0 / 3.0, rtol=1e-5)

    def test_transparent_mpi_is_invalid(self):
        rng = np.random.default_rng(0)
        mpi = random_mpi(rng)
        mpi.alpha[:] = 0.0
        depth, valid = pseudo_depth(mpi)
        assert not valid.any()
        np.testing.assert_array_equal(depth, 0.0)
