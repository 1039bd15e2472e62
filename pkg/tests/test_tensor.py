"""Engine-level tests: forward oracles, backward rules, tape semantics."""

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from actlab.tensor import (
    ShapeError,
    Tape,
    Tensor,
    add,
    conv2d,
    dropout,
    gradcheck,
    linear,
    maxpool2,
    mul,
    reshape,
    scale,
    softmax_cross_entropy,
    tsum,
)

from oracles import (
    conv2d_nested,
    linear_nested,
    maxpool2_nested,
    rel_err,
    softmax_cross_entropy_direct,
)


def t64(a, requires_grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=requires_grad)


class TestConv2d:
    def test_single_center_tap(self):
        x = Tensor(np.full((1, 1, 1, 1), 2.0))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 3.0
        out = conv2d(x, Tensor(w), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, [[[[6.0]]]])

    def test_zero_weight_gives_bias(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)))
        b = np.array([1.5, -2.0])
        out = conv2d(x, Tensor(np.zeros((2, 3, 3, 3))), Tensor(b))
        np.testing.assert_array_equal(out.data, np.broadcast_to(b.reshape(1, 2, 1, 1), (2, 2, 4, 4)))

    def test_matches_nested_loop_oracle_bitwise_in_float64(self):
        rng = np.random.default_rng(42)
        for (n, ci, co, s) in [(1, 1, 1, 3), (2, 3, 5, 4), (3, 4, 2, 6)]:
            x = rng.standard_normal((n, ci, s, s))
            w = rng.standard_normal((co, ci, 3, 3))
            b = rng.standard_normal(co)
            out = conv2d(t64(x), t64(w), t64(b))
            expected = conv2d_nested(x, w, b)
            np.testing.assert_array_equal(out.data, expected)

    def test_float32_close_to_float64_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 8, 6, 6))
        w = rng.standard_normal((4, 8, 3, 3))
        b = rng.standard_normal(4)
        out = conv2d(Tensor(x.astype(np.float32)), Tensor(w.astype(np.float32)), Tensor(b.astype(np.float32)))
        expected = conv2d_nested(x, w, b)
        np.testing.assert_allclose(out.data, expected, rtol=1e-4, atol=1e-5)

    def test_channel_mismatch_names_dimension(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(ShapeError, match="C_in=3"):
            conv2d(x, w, Tensor(np.zeros(2)))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = t64(rng.standard_normal((2, 3, 4, 4)))
        w = t64(rng.standard_normal((2, 3, 3, 3)))
        b = t64(rng.standard_normal(2))
        err = gradcheck(lambda a, ww, bb: tsum(mul(conv2d(a, ww, bb), conv2d(a, ww, bb))), [x, w, b])
        assert err < 1e-7


class TestMaxPool2:
    def test_two_by_two(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        out = maxpool2(x)
        np.testing.assert_array_equal(out.data, [[[[4.0]]]])

    def test_constant_input_routes_grad_to_first_window_element(self):
        x = Tensor(np.full((1, 1, 2, 2), 5.0, dtype=np.float64), requires_grad=True)
        with Tape() as tape:
            out = maxpool2(x)
            loss = tsum(out)
            tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [[[[1.0, 0.0], [0.0, 0.0]]]])

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 3, 4, 4))
        out = maxpool2(t64(x))
        expected, argpos = maxpool2_nested(x)
        np.testing.assert_array_equal(out.data, expected)
        # gradient must land exactly on the oracle's argmax positions
        xt = t64(x, requires_grad=True)
        with Tape() as tape:
            loss = tsum(maxpool2(xt))
            tape.backward(loss)
        got = np.flatnonzero(xt.grad.reshape(2, 3, -1)[0, 0])
        want = np.sort(argpos[0, 0].reshape(-1))
        np.testing.assert_array_equal(got, want)

    def test_odd_spatial_dim_rejected(self):
        with pytest.raises(ShapeError, match="even"):
            maxpool2(Tensor(np.zeros((1, 1, 3, 4))))


class TestLinear:
    def test_identity_weight(self):
        x = np.array([[1.0, 2.0, 3.0]])
        out = linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_weight_broadcasts_bias(self):
        b = np.array([4.0, 5.0])
        out = linear(Tensor(np.ones((3, 7))), Tensor(np.zeros((2, 7))), Tensor(b))
        np.testing.assert_array_equal(out.data, np.tile(b, (3, 1)))

    def test_matches_nested_loop_oracle_bitwise_in_float64(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3))
        w = rng.standard_normal((4, 3))
        b = rng.standard_normal(4)
        out = linear(t64(x), t64(w), t64(b))
        np.testing.assert_array_equal(out.data, linear_nested(x, w, b))

    def test_feature_mismatch_names_dimension(self):
        with pytest.raises(ShapeError, match="F_in=3"):
            linear(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 5))), Tensor(np.zeros(2)))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        x = t64(rng.standard_normal((3, 4)))
        w = t64(rng.standard_normal((2, 4)))
        b = t64(rng.standard_normal(2))
        err = gradcheck(lambda a, ww, bb: tsum(mul(linear(a, ww, bb), linear(a, ww, bb))), [x, w, b])
        assert err < 1e-7


class TestDropout:
    def test_p_zero_is_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        out = dropout(x, 0.0, training=True, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(out.data, x.data)

    def test_eval_mode_is_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        out = dropout(x, 0.9, training=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_inverted_scaling_preserves_mean(self):
        # Monte Carlo: E[out] = E[x] regardless of p.
        x = Tensor(np.ones(100_000, dtype=np.float64))
        out = dropout(x, 0.5, training=True, rng=np.random.default_rng(123))
        assert abs(out.data.mean() - 1.0) < 0.01

    def test_backward_uses_same_mask(self):
        x = Tensor(np.ones((50, 50)), requires_grad=True)
        with Tape() as tape:
            out = dropout(x, 0.3, training=True, rng=np.random.default_rng(4))
            tape.backward(tsum(out))
        np.testing.assert_array_equal(x.grad, out.data)

    def test_bad_probability_rejected(self):
        x = Tensor(np.zeros(3))
        with pytest.raises(ValueError, match="probability"):
            dropout(x, 1.0, training=True, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="probability"):
            dropout(x, -0.1, training=True, rng=np.random.default_rng(0))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_over_100_classes(self):
        logits = Tensor(np.zeros((4, 100)))
        loss = softmax_cross_entropy(logits, np.array([0, 7, 50, 99]))
        np.testing.assert_allclose(loss.data, np.log(100.0), rtol=1e-6)

    def test_dominant_logit_at_label_drives_loss_to_zero(self):
        z = np.zeros((1, 5), dtype=np.float64)
        z[0, 2] = 1e4
        loss = softmax_cross_entropy(t64(z), np.array([2]))
        assert float(loss.data) == 0.0

    def test_matches_direct_formula_oracle(self):
        rng = np.random.default_rng(21)
        z = rng.standard_normal((2, 5))
        labels = np.array([3, 0])
        loss = softmax_cross_entropy(t64(z), labels)
        np.testing.assert_allclose(float(loss.data), softmax_cross_entropy_direct(z, labels), rtol=1e-12)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValueError, match=r"label out of range"):
            softmax_cross_entropy(Tensor(np.zeros((2, 5))), np.array([1, 5]))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        z = t64(rng.standard_normal((3, 6)))
        labels = np.array([0, 5, 2])
        err = gradcheck(lambda a: softmax_cross_entropy(a, labels), [z])
        assert err < 1e-9


class TestBackward:
    def test_identity_loss(self):
        x = Tensor(np.asarray(3.0), requires_grad=True)
        with Tape() as tape:
            tape.backward(x)
        np.testing.assert_array_equal(x.grad, 1.0)

    def test_sum_of_squares(self):
        x = t64([1.0, -2.0, 0.5], requires_grad=True)
        with Tape() as tape:
            loss = tsum(mul(x, x))
            tape.backward(loss)
        np.testing.assert_allclose(x.grad, 2.0 * x.data, rtol=1e-12)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with Tape() as tape:
            y = add(x, x)
            with pytest.raises(ShapeError, match="scalar"):
                tape.backward(y)

    def test_tensor_consumed_twice_sums_contributions(self):
        x = t64([2.0], requires_grad=True)
        with Tape() as tape:
            loss = tsum(add(mul(x, x), mul(x, x)))
            tape.backward(loss)
        np.testing.assert_allclose(x.grad, [8.0], rtol=1e-12)

    def test_off_path_tensor_holds_zero(self):
        x = t64([1.0, 2.0], requires_grad=True)
        y = t64([3.0, 4.0], requires_grad=True)
        with Tape() as tape:
            _unused = mul(y, y)
            loss = tsum(x)
            tape.backward(loss)
        np.testing.assert_array_equal(y.grad, np.zeros(2))
        np.testing.assert_array_equal(x.grad, np.ones(2))

    def test_three_layer_mlp_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        x = t64(rng.standard_normal((4, 6)))
        params = [
            t64(rng.standard_normal((5, 6)) * 0.5),
            t64(rng.standard_normal(5) * 0.5),
            t64(rng.standard_normal((4, 5)) * 0.5),
            t64(rng.standard_normal(4) * 0.5),
            t64(rng.standard_normal((3, 4)) * 0.5),
            t64(rng.standard_normal(3) * 0.5),
        ]
        labels = np.array([0, 2, 1, 2])

        def net(xx, w1, b1, w2, b2, w3, b3):
            h1 = linear(xx, w1, b1)
            h1 = mul(h1, h1)  # smooth nonlinearity keeps differences clean
            h2 = linear(h1, w2, b2)
            h2 = mul(h2, h2)
            return softmax_cross_entropy(linear(h2, w3, b3), labels)

        err = gradcheck(net, [x] + params, h=1e-5)
        assert err < 1e-5

    def test_gradient_accumulation_linearity(self):
        rng = np.random.default_rng(8)
        xd = rng.standard_normal((3, 3))
        a, b = 2.5, -1.25

        def grads_of(fn):
            x = t64(xd, requires_grad=True)
            with Tape() as tape:
                tape.backward(fn(x))
            return x.grad

        g1 = grads_of(lambda x: tsum(mul(x, x)))
        g2 = grads_of(lambda x: tsum(mul(mul(x, x), x)))
        combined = grads_of(lambda x: add(scale(tsum(mul(x, x)), a), scale(tsum(mul(mul(x, x), x)), b)))
        np.testing.assert_allclose(combined, a * g1 + b * g2, rtol=1e-10)


class TestGradcheck:
    def test_identity_has_zero_error(self):
        x = t64([1.0, 2.0])
        assert gradcheck(lambda a: tsum(a), [x]) < 1e-11

    def test_nondeterministic_function_rejected(self):
        rng = np.random.default_rng(0)
        x = t64([1.0])

        def noisy(a):
            return scale(tsum(a), float(rng.random()))

        with pytest.raises(ValueError, match="deterministic"):
            gradcheck(noisy, [x])

    def test_sampled_coordinates(self):
        rng = np.random.default_rng(1)
        x = t64(rng.standard_normal((10, 10)))
        err = gradcheck(lambda a: tsum(mul(a, a)), [x], sample_per_tensor=7, rng=rng)
        assert err < 1e-9

    def test_input_unused_by_function_checks_as_zero(self):
        x = t64([1.0, 2.0])
        unused = t64([5.0])
        assert gradcheck(lambda a, b: tsum(a), [x, unused]) < 1e-11


class TestDeterminismAndDtype:
    def test_same_seed_bitwise_identical(self):
        def run():
            rng = np.random.default_rng(77)
            x = Tensor(rng.standard_normal((2, 3, 8, 8)).astype(np.float32))
            w = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
            b = Tensor(rng.standard_normal(4).astype(np.float32))
            out = maxpool2(conv2d(x, w, b))
            return out.data

        np.testing.assert_array_equal(run(), run())

    def test_float64_batch_independence_bitwise(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((5, 3, 4, 4))
        w = t64(rng.standard_normal((2, 3, 3, 3)))
        b = t64(rng.standard_normal(2))
        full = conv2d(t64(x), w, b).data
        one = conv2d(t64(x[3:4]), w, b).data
        np.testing.assert_array_equal(one[0], full[3])

    def test_mixed_dtype_rejected(self):
        with pytest.raises(ShapeError, match="dtype"):
            linear(
                Tensor(np.zeros((1, 2)), dtype=np.float64),
                Tensor(np.zeros((2, 2)), dtype=np.float32),
                Tensor(np.zeros(2), dtype=np.float32),
            )

    def test_int_input_promoted_to_default_dtype(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float32


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(min_value=-3, max_value=3, allow_nan=False),
    b=st.floats(min_value=-3, max_value=3, allow_nan=False),
)
def test_backward_is_linear_in_the_loss(a, b):
    xd = np.array([0.7, -1.3, 2.1])

    def grads_of(fn):
        x = t64(xd, requires_grad=True)
        with Tape() as tape:
            tape.backward(fn(x))
        return x.grad

    g1 = grads_of(lambda x: tsum(mul(x, x)))
    g2 = grads_of(lambda x: tsum(x))
    combined = grads_of(lambda x: add(scale(tsum(mul(x, x)), a), scale(tsum(x), b)))
    np.testing.assert_allclose(combined, a * g1 + b * g2, rtol=1e-9, atol=1e-12)


def test_reshape_roundtrips_gradient():
    x = t64(np.arange(12.0).reshape(3, 4), requires_grad=True)
    with Tape() as tape:
        y = reshape(x, (2, 6))
        tape.backward(tsum(mul(y, y)))
    np.testing.assert_allclose(x.grad, 2.0 * x.data, rtol=1e-12)
