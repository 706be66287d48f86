"""Tensor/tape unit tests: gradient checks against the finite-difference
oracle, tape semantics, and the Adam reference transcript."""

import numpy as np
import pytest

from mpifield.autodiff import (
    Adam,
    AdamState,
    Tape,
    Tensor,
    adam_step,
    avg_downsample2,
    bilinear_sample,
    concat,
    conv2d,
    grad_x,
    grad_y,
    matmul,
    mean,
    parameter,
    sigmoid,
    stack,
    sum_,
    warp_stack,
)
from mpifield.errors import DivergenceError, ShapeError

from helpers import check_param_grad, grad_close, numerical_grad


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)

    def test_relu_negative_value_and_grad(self):
        p = parameter([-2.0])
        with Tape([p]) as tape:
            loss = sum_(p.relu())
            tape.backward(loss)
        assert loss.data == 0.0
        assert p.grad[0] == 0.0

    def test_abs_gradient_matches_central_difference(self):
        # frozen from the oracle: d|x|/dx at x=3 is 1
        def build(p):
            return sum_(p.abs())

        ok, worst, analytic, numeric = check_param_grad(build, np.array([3.0]))
        assert ok, f"worst rel err {worst}"
        assert analytic[0] == pytest.approx(1.0, abs=1e-6)

    def test_add_broadcast_shapes_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))

    @pytest.mark.parametrize("seed", range(10))
    def test_elementwise_chain_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 4)).astype(np.float32)
        w = rng.normal(size=(3, 4)).astype(np.float32)

        def build(p):
            return mean((p * w + 0.3).sigmoid() * (p + 1.0).abs())

        ok, worst, _, _ = check_param_grad(build, x)
        assert ok, f"seed {seed}: worst rel err {worst}"

    def test_div_gradcheck(self):
        rng = np.random.default_rng(7)
        x = (rng.random((4, 4)) + 1.0).astype(np.float32)

        def build(p):
            return mean(Tensor(np.ones((4, 4), np.float32)) / (p * p + 0.5))

        ok, worst, _, _ = check_param_grad(build, x)
        assert ok, f"worst rel err {worst}"


class TestConv2d:
    def test_identity_1x1_conv(self):
        x = np.random.default_rng(0).random((2, 5, 5)).astype(np.float32)
        w = np.zeros((2, 2, 1, 1), dtype=np.float32)
        w[0, 0] = 1.0
        w[1, 1] = 1.0
        out = conv2d(Tensor(x), Tensor(w))
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_ones_kernel_center_sum(self):
        x = np.ones((1, 5, 5), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        out = conv2d(Tensor(x), Tensor(w), stride=1, padding=1)
        assert out.shape == (1, 5, 5)
        assert out.data[0, 2, 2] == pytest.approx(9.0)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    @pytest.mark.parametrize("seed", range(10))
    def test_gradcheck_input_and_weights(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 4, 4)).astype(np.float32)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32) * 0.5
        stride = 2 if seed % 2 else 1

        def build_x(p):
            return mean(conv2d(p, Tensor(w), stride=stride, padding=1).sigmoid())

        ok, worst, _, _ = check_param_grad(build_x, x)
        assert ok, f"input grad, seed {seed}: worst {worst}"

        def build_w(p):
            return mean(conv2d(Tensor(x), p, stride=stride, padding=1).sigmoid())

        ok, worst, _, _ = check_param_grad(build_w, w)
        assert ok, f"weight grad, seed {seed}: worst {worst}"

    def test_batched_matches_single(self):
        rng = np.random.default_rng(3)
        x = rng.random((4, 2, 6, 6)).astype(np.float32)
        w = rng.random((3, 2, 3, 3)).astype(np.float32)
        batched = conv2d(Tensor(x), Tensor(w), padding=1).data
        for n in range(4):
            single = conv2d(Tensor(x[n]), Tensor(w), padding=1).data
            np.testing.assert_allclose(batched[n], single, atol=1e-6)


class TestBilinearSample:
    def test_identity_grid_is_exact(self):
        rng = np.random.default_rng(1)
        src = rng.random((3, 6, 7)).astype(np.float32)
        ys, xs = np.mgrid[0:6, 0:7].astype(np.float32)
        grid = np.stack([xs, ys], axis=-1)
        out, valid = bilinear_sample(Tensor(src), grid)
        np.testing.assert_array_equal(out.data, src)
        assert valid.min() == 1.0

    def test_halfway_interpolation(self):
        src = np.zeros((1, 1, 2), dtype=np.float32)
        src[0, 0, 1] = 1.0
        grid = np.array([[[0.5, 0.0]]], dtype=np.float32)
        out, valid = bilinear_sample(Tensor(src), grid)
        assert out.data[0, 0, 0] == pytest.approx(0.5)
        assert valid[0, 0] == 1.0

    def test_out_of_bounds_returns_zero_invalid(self):
        src = np.ones((1, 4, 4), dtype=np.float32)
        grid = np.array([[[-0.5, 1.0], [3.5, 1.0], [1.0, 7.0]]], dtype=np.float32)
        out, valid = bilinear_sample(Tensor(src), grid)
        assert np.all(out.data == 0.0)
        assert np.all(valid == 0.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_src_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        src = rng.random((2, 5, 6)).astype(np.float32)
        grid = np.stack([
            rng.random((3, 4)) * 4.6 + 0.2,
            rng.random((3, 4)) * 3.6 + 0.2,
        ], axis=-1).astype(np.float32)

        def build(p):
            out, _ = bilinear_sample(p, grid)
            return mean(out * out)

        ok, worst, _, _ = check_param_grad(build, src)
        assert ok, f"seed {seed}: worst rel err {worst}"

    def test_warp_stack_matches_bilinear_per_plane(self):
        rng = np.random.default_rng(5)
        src = rng.random((3, 2, 8, 8)).astype(np.float32)
        hs = np.tile(np.eye(3), (3, 1, 1))
        hs[1, 0, 2] = 0.7   # shift x
        hs[2, 1, 2] = -0.3  # shift y
        warped, valid = warp_stack(Tensor(src), hs, (8, 8))
        for d in range(3):
            ys, xs = np.mgrid[0:8, 0:8].astype(np.float64)
            pts = np.stack([xs, ys, np.ones_like(xs)], axis=-1) @ hs[d].T
            grid = (pts[..., :2] / pts[..., 2:]).astype(np.float32)
            ref, vref = bilinear_sample(Tensor(src[d]), grid)
            np.testing.assert_allclose(warped.data[d], ref.data, atol=1e-5)
            np.testing.assert_allclose(valid[d, 0], vref, atol=0)


class TestReductions:
    def test_gradient_of_constant_image_is_zero(self):
        img = np.full((1, 4, 5), 0.7, dtype=np.float32)
        assert np.all(grad_x(Tensor(img)).data == 0.0)
        assert np.all(grad_y(Tensor(img)).data == 0.0)

    def test_avg_downsample_of_2x2_block(self):
        img = np.array([[[0.0, 0.0], [1.0, 1.0]]], dtype=np.float32)
        out = avg_downsample2(Tensor(img))
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == pytest.approx(0.5)

    def test_avg_downsample_crops_odd(self):
        img = np.arange(15, dtype=np.float32).reshape(1, 3, 5)
        out = avg_downsample2(Tensor(img))
        assert out.shape == (1, 1, 2)

    def test_mean_gradient_is_uniform(self):
        p = parameter(np.arange(12, dtype=np.float32).reshape(3, 4))
        with Tape([p]) as tape:
            tape.backward(mean(p))
        np.testing.assert_allclose(p.grad, np.full((3, 4), 1.0 / 12.0), atol=1e-8)

    def test_forward_difference_definition(self):
        a = np.array([[[1.0, 3.0, 6.0]]], dtype=np.float32)
        gx = grad_x(Tensor(a))
        np.testing.assert_allclose(gx.data, [[[2.0, 3.0]]])

    @pytest.mark.parametrize("seed", range(5))
    def test_pyramid_ops_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.random((2, 6, 6)).astype(np.float32)

        def build(p):
            lvl = avg_downsample2(p)
            return mean(grad_x(lvl).abs()) + mean(grad_y(p).abs()) + 0.5 * mean(p)

        ok, worst, _, _ = check_param_grad(build, x)
        assert ok, f"seed {seed}: worst rel err {worst}"


class TestTape:
    def test_square_loss_gradient(self):
        p = parameter([3.0])
        with Tape([p]) as tape:
            tape.backward(sum_(p * p))
        assert p.grad[0] == pytest.approx(6.0)

    def test_unused_parameter_gets_zero(self):
        p = parameter([3.0])
        q = parameter([2.0])
        with Tape([p, q]) as tape:
            tape.backward(sum_(p * p))
        assert q.grad is not None and q.grad[0] == 0.0

    def test_non_scalar_loss_rejected(self):
        p = parameter([1.0, 2.0])
        with Tape([p]) as tape:
            loss = p * p
            with pytest.raises(ShapeError):
                tape.backward(loss)

    def test_backward_linearity(self):
        rng = np.random.default_rng(0)
        x = rng.random((3, 3)).astype(np.float32)

        def run(parts):
            p = parameter(x.copy())
            with Tape([p]) as tape:
                if parts == "both":
                    loss = mean(p * p) + mean(p.sigmoid())
                elif parts == "a":
                    loss = mean(p * p)
                else:
                    loss = mean(p.sigmoid())
                tape.backward(loss)
            return p.grad.copy()

        np.testing.assert_allclose(run("both"), run("a") + run("b"), atol=1e-6)

    def test_composite_graph_gradcheck(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 5, 5)).astype(np.float32)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32) * 0.3

        def build(p):
            return mean(conv2d(p, Tensor(w), padding=1).relu())

        ok, worst, _, _ = check_param_grad(build, x)
        assert ok, f"worst rel err {worst}"

    def test_grads_zeroed_on_tape_entry(self):
        p = parameter([2.0])
        with Tape([p]) as tape:
            tape.backward(sum_(p * p))
        first = p.grad.copy()
        with Tape([p]) as tape:
            tape.backward(sum_(p * p))
        np.testing.assert_allclose(p.grad, first)
        with Tape([p], accumulate=True) as tape:
            tape.backward(sum_(p * p))
        np.testing.assert_allclose(p.grad, 2 * first)

    def test_concat_stack_matmul_gradcheck(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 2)).astype(np.float32)
        w = rng.normal(size=(2, 3)).astype(np.float32)

        def build(p):
            joined = concat([p, p * 2.0], axis=0)          # [6,2]
            piled = stack([joined, joined], axis=0)        # [2,6,2]
            return mean(matmul(piled.reshape(12, 2), Tensor(w)).sigmoid())

        ok, worst, _, _ = check_param_grad(build, x)
        assert ok, f"worst rel err {worst}"


class TestAdam:
    def test_zero_gradient_leaves_parameter_unchanged(self):
        p = parameter([1.5])
        p.grad = np.zeros(1, dtype=np.float32)
        state = AdamState([p])
        adam_step([p], state, lr=0.1)
        assert p.data[0] == pytest.approx(1.5)

    @pytest.mark.parametrize("g", [1.0, -2.5, 0.3])
    def test_first_step_is_lr_times_sign(self, g):
        # bias-corrected first step: -lr * g / (|g| + eps) ~ -lr * sign(g)
        p = parameter([0.0])
        p.grad = np.array([g], dtype=np.float32)
        adam_step([p], AdamState([p]), lr=0.1)
        assert p.data[0] == pytest.approx(-0.1 * np.sign(g), abs=1e-6)

    def test_two_steps_match_scalar_reference(self):
        # independent scalar Adam transcript, same constant gradient
        g, lr, b1, b2, eps = 0.7, 0.05, 0.9, 0.999, 1e-8
        theta, m, v = 1.0, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

        p = parameter([1.0])
        state = AdamState([p])
        for _ in range(2):
            p.grad = np.array([g], dtype=np.float32)
            adam_step([p], state, lr=lr)
        assert p.data[0] == pytest.approx(theta, abs=1e-6)
        assert state.step_count == 2

    def test_divergence_detection_names_parameter(self):
        p = parameter([1.0])
        p.op = "alpha_logits"
        p.grad = np.array([np.inf], dtype=np.float32)
        with pytest.raises(DivergenceError, match="alpha_logits"):
            adam_step([p], AdamState([p]), lr=0.1)

    def test_determinism_across_runs(self):
        def run():
            rng = np.random.default_rng(42)
            p = parameter(rng.normal(size=(8,)).astype(np.float32))
            opt = Adam([p], lr=1e-2)
            for _ in range(50):
                with Tape([p]) as tape:
                    loss = mean((p * p - 0.5).abs())
                    tape.backward(loss)
                opt.step()
            return p.data.copy()

        a, b = run(), run()
        assert np.array_equal(a, b)
