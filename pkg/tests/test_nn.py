"""Layer math against independent naive-loop oracles and hand results."""

import numpy as np
import pytest

from gazenet import nn


def naive_conv2d(x, w, b, padding="valid"):
    """Reference correlation: plain loops, nothing shared with the engine."""
    n, ic, h, ww = x.shape
    oc, _, k, _ = w.shape
    if padding == "same":
        p = (k - 1) // 2
        xp = np.zeros((n, ic, h + k - 1, ww + k - 1), x.dtype)
        xp[:, :, p : p + h, p : p + ww] = x
        x, h, ww = xp, h + k - 1, ww + k - 1
    oh, ow = h - k + 1, ww - k + 1
    out = np.zeros((n, oc, oh, ow), np.float64)
    for s in range(n):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(ic):
                        for di in range(k):
                            for dj in range(k):
                                acc += float(x[s, c, i + di, j + dj]) * float(w[o, c, di, dj])
                    out[s, o, i, j] = acc + float(b[o])
    return out


def naive_maxpool(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), x.dtype)
    for s in range(n):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[s, ch, i, j] = x[s, ch, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()
    return out


def naive_dense(x, w, b):
    out = np.zeros((x.shape[0], w.shape[1]), np.float64)
    for s in range(x.shape[0]):
        for o in range(w.shape[1]):
            acc = 0.0
            for i in range(x.shape[1]):
                acc += float(x[s, i]) * float(w[i, o])
            out[s, o] = acc + float(b[o])
    return out


class TestConv2d:
    def test_matches_naive_oracle_random(self, rng):
        for _ in range(8):
            n, ic, oc = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
            k = int(rng.choice([3, 5]))
            h, w = int(rng.integers(k, 9)), int(rng.integers(k, 9))
            pad = str(rng.choice(["valid", "same"]))
            x = rng.standard_normal((n, ic, h, w)).astype(np.float32)
            wt = rng.standard_normal((oc, ic, k, k)).astype(np.float32)
            b = rng.standard_normal(oc).astype(np.float32)
            got = nn.conv2d(x, wt, b, pad)
            np.testing.assert_allclose(got, naive_conv2d(x, wt, b, pad), atol=1e-5)

    def test_all_ones_kernel_sums_window(self):
        x = np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3)
        out = nn.conv2d(x, np.ones((1, 1, 3, 3), np.float32), np.zeros(1, np.float32))
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 45.0

    def test_identity_kernel_same_padding(self, rng):
        kernel = np.zeros((1, 1, 3, 3), np.float32)
        kernel[0, 0, 1, 1] = 1.0
        x = rng.standard_normal((2, 1, 6, 7)).astype(np.float32)
        out = nn.conv2d(x, kernel, np.zeros(1, np.float32), "same")
        assert np.array_equal(out, x)

    def test_zero_kernel_gives_bias(self, rng):
        x = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
        b = np.array([1.5, -2.0], np.float32)
        out = nn.conv2d(x, np.zeros((2, 3, 3, 3), np.float32), b)
        assert np.all(out[:, 0] == 1.5) and np.all(out[:, 1] == -2.0)

    @pytest.mark.parametrize("k", [3, 5])
    def test_shape_laws(self, k, rng):
        x = rng.standard_normal((1, 2, 12, 10)).astype(np.float32)
        w = rng.standard_normal((4, 2, k, k)).astype(np.float32)
        b = np.zeros(4, np.float32)
        assert nn.conv2d(x, w, b, "valid").shape == (1, 4, 12 - k + 1, 10 - k + 1)
        assert nn.conv2d(x, w, b, "same").shape == (1, 4, 12, 10)

    def test_linear_in_input_with_zero_bias(self, rng):
        x = rng.standard_normal((1, 2, 8, 8)).astype(np.float32)
        w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        b = np.zeros(3, np.float32)
        np.testing.assert_allclose(nn.conv2d(3.0 * x, w, b), 3.0 * nn.conv2d(x, w, b),
                                   rtol=1e-5, atol=1e-5)

    def test_channel_mismatch_names_layer(self, rng):
        x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((2, 2, 3, 3)).astype(np.float32)
        with pytest.raises(nn.ShapeError, match="conv9"):
            nn.conv2d(x, w, np.zeros(2, np.float32), name="conv9")

    def test_input_smaller_than_kernel_rejected(self, rng):
        x = rng.standard_normal((1, 1, 2, 2)).astype(np.float32)
        w = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
        with pytest.raises(nn.ShapeError):
            nn.conv2d(x, w, np.zeros(1, np.float32))

    def test_backward_matches_finite_differences(self, rng):
        x = rng.standard_normal((2, 2, 6, 7))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        up = rng.standard_normal((2, 3, 4, 5))
        gx, gw, gb = nn.conv2d_backward(up, x, w)
        h = 1e-6

        def loss(xv, wv, bv):
            return float(np.sum(nn.conv2d(xv, wv, bv) * up))

        for arr, grad, pick in ((x, gx, 6), (w, gw, 6), (b, gb, 3)):
            flat = arr.reshape(-1)
            gflat = np.asarray(grad).reshape(-1)
            for idx in rng.choice(flat.size, size=pick, replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                lp = loss(x, w, b)
                flat[idx] = orig - h
                lm = loss(x, w, b)
                flat[idx] = orig
                assert abs((lp - lm) / (2 * h) - gflat[idx]) < 1e-4

    def test_forward_deterministic_bitwise(self, rng):
        x = rng.standard_normal((3, 2, 10, 12)).astype(np.float32)
        w = rng.standard_normal((4, 2, 5, 5)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        a = nn.conv2d(x, w, b)
        assert np.array_equal(a, nn.conv2d(x, w, b))


class TestMaxpool:
    def test_single_window(self):
        x = np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2)
        assert nn.maxpool2x2(x)[0, 0, 0, 0] == 4.0

    def test_constant_input(self):
        x = np.full((1, 2, 4, 6), 7.0, np.float32)
        assert np.all(nn.maxpool2x2(x) == 7.0)

    def test_matches_naive_oracle(self, rng):
        x = rng.standard_normal((2, 3, 8, 6)).astype(np.float32)
        np.testing.assert_array_equal(nn.maxpool2x2(x), naive_maxpool(x))

    def test_odd_dims_rejected(self, rng):
        with pytest.raises(nn.ShapeError, match="even"):
            nn.maxpool2x2(rng.standard_normal((1, 1, 5, 4)).astype(np.float32))

    def test_backward_routes_to_argmax(self):
        x = np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2)
        up = np.ones((1, 1, 1, 1), np.float32)
        gx = nn.maxpool2x2_backward(up, x)
        np.testing.assert_array_equal(gx[0, 0], [[0, 0], [0, 1]])

    def test_backward_tie_takes_first_row_major(self):
        x = np.full((1, 1, 2, 2), 5.0, np.float32)
        gx = nn.maxpool2x2_backward(np.ones((1, 1, 1, 1), np.float32), x)
        np.testing.assert_array_equal(gx[0, 0], [[1, 0], [0, 0]])

    def test_backward_conserves_gradient_mass(self, rng):
        x = rng.standard_normal((2, 2, 6, 8)).astype(np.float32)
        up = rng.standard_normal((2, 2, 3, 4)).astype(np.float32)
        gx = nn.maxpool2x2_backward(up, x)
        assert abs(gx.sum() - up.sum()) < 1e-4


class TestDense:
    def test_identity_weights(self, rng):
        x = rng.standard_normal((3, 4)).astype(np.float32)
        out = nn.dense(x, np.eye(4, dtype=np.float32), np.zeros(4, np.float32))
        np.testing.assert_array_equal(out, x)

    def test_zero_weights_give_bias(self, rng):
        x = rng.standard_normal((2, 4)).astype(np.float32)
        b = np.array([1.0, 2.0], np.float32)
        out = nn.dense(x, np.zeros((4, 2), np.float32), b)
        assert np.all(out == b)

    def test_hand_computed_example(self):
        w = np.array([[1, 1], [1, -1]], np.float32)
        out = nn.dense(np.array([[2.0, 3.0]], np.float32), w, np.zeros(2, np.float32))
        np.testing.assert_array_equal(out, [[5.0, -1.0]])

    def test_matches_naive_oracle(self, rng):
        x = rng.standard_normal((3, 7)).astype(np.float32)
        w = rng.standard_normal((7, 4)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        np.testing.assert_allclose(nn.dense(x, w, b), naive_dense(x, w, b), atol=1e-5)

    def test_width_mismatch_rejected(self, rng):
        with pytest.raises(nn.ShapeError, match="dense7"):
            nn.dense(rng.standard_normal((1, 3)), rng.standard_normal((4, 2)),
                     np.zeros(2), name="dense7")

    def test_backward(self, rng):
        x = rng.standard_normal((4, 5))
        w = rng.standard_normal((5, 3))
        up = rng.standard_normal((4, 3))
        gx, gw, gb = nn.dense_backward(up, x, w)
        np.testing.assert_allclose(gx, up @ w.T)
        np.testing.assert_allclose(gw, x.T @ up)
        np.testing.assert_allclose(gb, up.sum(axis=0))


class TestRelu:
    def test_examples(self):
        np.testing.assert_array_equal(nn.relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
        x = np.array([0.5, 3.0])
        np.testing.assert_array_equal(nn.relu(x), x)

    def test_backward_mask_with_zero_inactive(self):
        up = np.ones(3)
        grad = nn.relu_backward(up, np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(grad, [0, 0, 1])


class TestConcatPose:
    def test_appends_two_entries(self, rng):
        feats = rng.standard_normal((1, 500)).astype(np.float32)
        out = nn.concat_pose(feats, np.zeros((1, 2), np.float32))
        assert out.shape == (1, 502)
        assert out[0, -2] == 0.0 and out[0, -1] == 0.0

    def test_empty_features(self):
        out = nn.concat_pose(np.zeros((1, 0), np.float32),
                             np.array([[0.3, -0.1]], np.float32))
        np.testing.assert_allclose(out, [[0.3, -0.1]], atol=1e-7)

    def test_backward_splits_shapes(self, rng):
        g = rng.standard_normal((4, 502))
        gf, gp = nn.concat_pose_backward(g)
        assert gf.shape == (4, 500) and gp.shape == (4, 2)
        np.testing.assert_array_equal(np.concatenate([gf, gp], axis=1), g)


class TestEuclideanLoss:
    def test_zero_at_target(self, rng):
        p = rng.standard_normal((5, 2))
        loss, grad = nn.euclidean_loss(p, p.copy())
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(p))

    def test_hand_example(self):
        loss, grad = nn.euclidean_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]))
        assert loss == 0.5
        np.testing.assert_array_equal(grad, [[1.0, 0.0]])

    def test_batch_count_scales_inverse(self):
        pred = np.array([[1.0, 0.0]])
        target = np.array([[0.0, 0.0]])
        loss1, grad1 = nn.euclidean_loss(pred, target)
        padded_pred = np.vstack([pred, np.zeros((3, 2))])
        padded_target = np.vstack([target, np.zeros((3, 2))])
        loss4, grad4 = nn.euclidean_loss(padded_pred, padded_target)
        assert loss4 == pytest.approx(loss1 / 4)
        np.testing.assert_allclose(grad4[0], grad1[0] / 4)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(nn.ShapeError):
            nn.euclidean_loss(np.zeros((2, 2)), np.zeros((3, 2)))


class TestSgd:
    def test_plain_step(self):
        p = {"w": np.array([1.0, 2.0], np.float32)}
        g = {"w": np.array([0.5, -0.5], np.float32)}
        nn.sgd_step(p, g, {}, lr=1.0, momentum=0.0)
        np.testing.assert_allclose(p["w"], [0.5, 2.5])

    def test_zero_gradient_is_identity(self):
        p = {"w": np.array([1.0, 2.0], np.float32)}
        nn.sgd_step(p, {"w": np.zeros(2, np.float32)}, {}, lr=0.1, momentum=0.9)
        np.testing.assert_array_equal(p["w"], [1.0, 2.0])

    def test_two_momentum_steps_unrolled(self):
        p = {"w": np.zeros(1, np.float32)}
        g = {"w": np.ones(1, np.float32)}
        vel = {}
        nn.sgd_step(p, g, vel, lr=0.1, momentum=0.9)
        nn.sgd_step(p, g, vel, lr=0.1, momentum=0.9)
        np.testing.assert_allclose(p["w"], [-0.29], atol=1e-7)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(nn.ShapeError):
            nn.sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {}, 0.1, 0.9)

    def test_deterministic_bitwise(self, rng):
        def run():
            p = {"w": np.full((8, 8), 0.25, np.float32)}
            vel = {}
            g = {"w": rng0.standard_normal((8, 8)).astype(np.float32)}
            for _ in range(5):
                nn.sgd_step(p, g, vel, lr=0.01, momentum=0.9)
            return p["w"]

        rng0 = np.random.default_rng(3)
        a = run()
        rng0 = np.random.default_rng(3)
        b = run()
        assert np.array_equal(a, b)


class TestFiniteDiffCheck:
    def test_linear_dense_layer_tight(self, rng):
        w = rng.standard_normal((4, 3))
        x = rng.standard_normal((2, 4))
        target = rng.standard_normal((2, 3))
        pred = x @ w
        _, gpred = nn.euclidean_loss(pred, target)
        analytic = {"w": x.T @ gpred}

        def loss_fn(wv):
            return nn.euclidean_loss(x @ wv, target)[0]

        report = nn.finite_diff_check({"w": loss_fn}, {"w": w}, analytic,
                                      step=1e-3, tolerance=1e-6)
        assert report.passed
        assert report.max_error < 1e-6

    def test_sign_flip_fails(self, rng):
        w = rng.standard_normal((3, 2))
        x = rng.standard_normal((2, 3))
        target = rng.standard_normal((2, 2))
        _, gpred = nn.euclidean_loss(x @ w, target)
        analytic = {"w": -(x.T @ gpred)}

        def loss_fn(wv):
            return nn.euclidean_loss(x @ wv, target)[0]

        report = nn.finite_diff_check({"w": loss_fn}, {"w": w}, analytic,
                                      step=1e-3, tolerance=1e-6)
        assert not report.passed

    def test_non_finite_loss_reported_not_raised(self, rng):
        w = rng.standard_normal((2, 2))

        def loss_fn(wv):
            return float("nan")

        report = nn.finite_diff_check({"w": loss_fn}, {"w": w}, {"w": w},
                                      step=1e-3, tolerance=1e-6)
        assert not report.passed


def test_check_finite_raises_on_nan():
    with pytest.raises(FloatingPointError):
        nn.check_finite(np.array([1.0, np.nan]))
    arr = np.ones(3)
    assert nn.check_finite(arr) is arr
