"""Activation math: exact origin behavior, analytic gradients, centering."""

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from actlab.activations import (
    BETA_RAW_INIT,
    ActivationKind,
    ZCSwishParams,
    activation_curves,
    apply_activation,
    find_centering_anchor,
    gelu,
    gelu_eval,
    relu,
    relu_eval,
    sigmoid,
    softplus,
    swish,
    swish_eval,
    zc_swish,
    zc_swish_eval,
)
from actlab.tensor import ShapeError, Tape, Tensor, gradcheck, tsum

from oracles import central_difference, rel_err

# softplus(BETA_RAW_FOR_UNIT_SLOPE) == 1 exactly in real arithmetic
BETA_RAW_FOR_UNIT_SLOPE = 0.5413248546129181

# frozen from a 50-digit evaluation of the forward formula
ZCSWISH_AT_ONE_DEFAULT_PARAMS = 0.7267690022456754
GELU_TANH_AT_ONE = 0.8411919906082767
SWISH_AT_ONE = 0.7310585786300049


def params_from(c, beta_raw, g, channels=1, dtype=np.float64, requires_grad=True):
    def vec(v):
        return Tensor(np.full(channels, v, dtype=dtype), requires_grad=requires_grad)

    return ZCSwishParams(c=vec(c), beta_raw=vec(beta_raw), g=vec(g))


class TestZCSwishForward:
    def test_origin_maps_to_exact_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = params_from(rng.uniform(-2, 2), rng.uniform(-3, 3), rng.uniform(-2, 2))
            out = zc_swish(Tensor(np.zeros((3, 1), dtype=np.float64)), p)
            assert np.all(out.data == 0.0)

    def test_reduces_to_swish_at_unit_parameters(self):
        p = params_from(0.0, BETA_RAW_FOR_UNIT_SLOPE, 1.0)
        out = zc_swish(Tensor(np.ones((1, 1), dtype=np.float64)), p)
        np.testing.assert_allclose(out.data, SWISH_AT_ONE, rtol=1e-9)

    def test_initial_parameters_at_one(self):
        p = ZCSwishParams.initial(1, dtype=np.float64)
        out = zc_swish(Tensor(np.ones((1, 1), dtype=np.float64)), p)
        assert abs(out.data.item() - ZCSWISH_AT_ONE_DEFAULT_PARAMS) < 1e-12

    def test_channel_mismatch_rejected(self):
        p = ZCSwishParams.initial(4)
        with pytest.raises(ShapeError, match="C=3"):
            zc_swish(Tensor(np.zeros((2, 3))), p)

    def test_per_channel_parameters_apply_to_their_channel(self):
        p = params_from(0.0, BETA_RAW_FOR_UNIT_SLOPE, 1.0, channels=2)
        p.g.data[:] = [1.0, 3.0]
        x = np.ones((1, 2, 2, 2), dtype=np.float64)
        out = zc_swish(Tensor(x), p)
        np.testing.assert_allclose(out.data[0, 1], 3.0 * out.data[0, 0], rtol=1e-12)

    def test_eval_path_agrees_with_op_path(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 1)) * 3
        p = params_from(0.3, -0.5, 1.7)
        op = zc_swish(Tensor(x, dtype=np.float64), p)
        ev = zc_swish_eval(x, c=0.3, beta=float(softplus(np.float64(-0.5))), g=1.7)
        np.testing.assert_allclose(op.data[:, 0], ev[:, 0], rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    c=st.floats(min_value=-2, max_value=2, allow_nan=False),
    beta_raw=st.floats(min_value=-3, max_value=3, allow_nan=False),
    g=st.floats(min_value=-2, max_value=2, allow_nan=False),
)
def test_origin_preservation_property(c, beta_raw, g):
    p64 = params_from(c, beta_raw, g, dtype=np.float64)
    out64 = zc_swish(Tensor(np.zeros((2, 1), dtype=np.float64)), p64)
    assert np.all(np.abs(out64.data) < 1e-12)
    p32 = params_from(c, beta_raw, g, dtype=np.float32)
    out32 = zc_swish(Tensor(np.zeros((2, 1), dtype=np.float32)), p32)
    assert np.all(np.abs(out32.data) < 1e-6)


def test_swish_reduction_elementwise_float32():
    rng = np.random.default_rng(42)
    x = (rng.standard_normal((64, 3, 5, 5)) * 4).astype(np.float32)
    p = params_from(0.0, BETA_RAW_FOR_UNIT_SLOPE, 1.0, channels=3, dtype=np.float32)
    zc = zc_swish(Tensor(x), p)
    sw = swish(Tensor(x))
    np.testing.assert_allclose(zc.data, sw.data, atol=1e-6)


class TestZCSwishBackward:
    def test_grad_x_at_anchor_is_half_gain(self):
        p = params_from(0.7, 0.2, 3.0)
        x = Tensor(np.full((1, 1), 0.7, dtype=np.float64), requires_grad=True)
        with Tape() as tape:
            tape.backward(tsum(zc_swish(x, p)))
        np.testing.assert_allclose(x.grad, 3.0 / 2.0, rtol=1e-12)

    def test_grad_g_equals_output_over_gain(self):
        p = params_from(0.4, -0.3, 2.0)
        x = Tensor(np.array([[1.3]]), dtype=np.float64)
        with Tape() as tape:
            out = zc_swish(x, p)
            tape.backward(tsum(out))
        np.testing.assert_allclose(p.g.grad, out.data[0] / 2.0, rtol=1e-12)

    def test_all_four_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            x = Tensor(rng.standard_normal((3, 2, 2, 2)) * 3, dtype=np.float64)
            p = params_from(rng.uniform(-1, 1), rng.uniform(-2, 2), rng.uniform(0.5, 2), channels=2)
            err = gradcheck(lambda xx, c, b, g: tsum(zc_swish(xx, ZCSwishParams(c, b, g))), [x, *p.tensors()])
            assert err < 1e-5

    def test_eq_grad_x_formula_against_independent_differences(self):
        # the closed form g*s*(1 + beta*u*(1-s)) over a wide grid
        xs = np.linspace(-6, 6, 200)
        c, beta, g = 0.35, 1.4, 1.8
        braw = float(np.log(np.expm1(beta)))  # softplus inverse
        p = params_from(c, braw, g)
        xt = Tensor(xs.reshape(-1, 1), dtype=np.float64, requires_grad=True)
        with Tape() as tape:
            tape.backward(tsum(zc_swish(xt, p)))
        h = 1e-6
        numeric = (zc_swish_eval(xs + h, c=c, beta=beta, g=g) - zc_swish_eval(xs - h, c=c, beta=beta, g=g)) / (2 * h)
        assert rel_err(xt.grad[:, 0], numeric) < 1e-8

    def test_parameter_gradients_reduce_over_batch_and_space(self):
        p = params_from(0.1, 0.0, 1.0, channels=2)
        x = Tensor(np.ones((4, 2, 3, 3)), dtype=np.float64)
        with Tape() as tape:
            tape.backward(tsum(zc_swish(x, p)))
        assert p.g.grad.shape == (2,)
        # 4*3*3 identical positions contribute identically
        single = Tensor(np.ones((1, 2, 1, 1)), dtype=np.float64)
        p2 = params_from(0.1, 0.0, 1.0, channels=2)
        with Tape() as tape:
            tape.backward(tsum(zc_swish(single, p2)))
        np.testing.assert_allclose(p.g.grad, 36.0 * p2.g.grad, rtol=1e-12)


class TestBaselines:
    def test_relu_values(self):
        out = relu(Tensor(np.array([-1.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 2.0])

    def test_swish_values(self):
        out = swish(Tensor(np.array([0.0, 1.0]), dtype=np.float64))
        assert out.data[0] == 0.0
        np.testing.assert_allclose(out.data[1], SWISH_AT_ONE, rtol=1e-12)

    def test_gelu_values(self):
        out = gelu(Tensor(np.array([0.0, 1.0]), dtype=np.float64))
        assert out.data[0] == 0.0
        assert abs(out.data[1] - GELU_TANH_AT_ONE) < 1e-6

    @pytest.mark.parametrize("fn", [gelu, swish])
    def test_smooth_baseline_gradients(self, fn):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal(40) * 3, dtype=np.float64)
        assert gradcheck(lambda a: tsum(fn(a)), [x]) < 1e-6

    def test_relu_gradient_away_from_kink(self):
        x = Tensor(np.array([-2.0, -0.5, 0.5, 2.0]), dtype=np.float64)
        assert gradcheck(lambda a: tsum(relu(a)), [x]) < 1e-10

    def test_apply_activation_dispatch(self):
        x = Tensor(np.array([[1.0]]), dtype=np.float64)
        assert apply_activation(x, ActivationKind.RELU).data.item() == 1.0
        with pytest.raises(ValueError, match="parameter triple"):
            apply_activation(x, ActivationKind.ZCSWISH)

    def test_kind_parsing(self):
        assert ActivationKind.parse(" ZCSwish ") is ActivationKind.ZCSWISH
        assert ActivationKind.RELU.params_per_channel == 0
        assert ActivationKind.ZCSWISH.params_per_channel == 3
        with pytest.raises(ValueError, match="unknown activation"):
            ActivationKind.parse("mish")


class TestSigmoidSoftplus:
    def test_sigmoid_bounds_and_softplus_positivity(self):
        # float64 sigmoid saturates to exactly 0 or 1 past |x| ~ 36.7, so
        # the strict bound is asserted over the representable range
        x = np.linspace(-36, 36, 10_001)
        s = sigmoid(x)
        assert np.all(s > 0) and np.all(s < 1)
        assert np.all(softplus(np.linspace(-700, 700, 10_001)) > 0)

    def test_softplus_at_documented_init(self):
        beta = softplus(np.float64(BETA_RAW_INIT))
        assert abs(beta - 1.0) < 1e-4

    def test_sigmoid_matches_naive_formula_in_safe_range(self):
        x = np.linspace(-30, 30, 1001)
        np.testing.assert_allclose(sigmoid(x), 1.0 / (1.0 + np.exp(-x)), rtol=1e-12)


class TestCenteringAnchor:
    def test_symmetric_two_point_sample(self):
        res = find_centering_anchor(np.array([-1.5, 1.5]), beta=1.0, tol=1e-10)
        assert res.converged
        assert abs(res.mean_at_c) < 1e-10

    def test_all_zero_sample_returns_zero_anchor(self):
        res = find_centering_anchor(np.zeros(100), beta=1.0, tol=1e-10)
        assert res.converged and res.c == 0.0 and res.mean_at_c == 0.0

    def test_standard_normal_sample(self):
        rng = np.random.default_rng(42)
        sample = rng.standard_normal(10_000)
        res = find_centering_anchor(sample, beta=1.0, tol=1e-8)
        assert res.converged
        assert abs(res.mean_at_c) < 1e-6
        # uncentered swish mean is strictly positive on the same sample
        assert float(np.mean(zc_swish_eval(sample, c=0.0, beta=1.0, g=1.0))) > 0.0

    def test_degenerate_constant_sample_reports_no_root(self):
        res = find_centering_anchor(np.full(10, 3.0), beta=1.0, tol=1e-8)
        assert not res.converged
        assert "bracket" in res.note or "sign change" in res.note

    def test_bad_arguments_rejected(self):
        with pytest.raises(ValueError, match="beta"):
            find_centering_anchor(np.ones(3), beta=0.0)
        with pytest.raises(ValueError, match="tol"):
            find_centering_anchor(np.ones(3), tol=0.0)


def test_swish_mean_shift_is_positive_on_zero_mean_gaussians():
    rng = np.random.default_rng(11)
    sample = rng.standard_normal(100_000)
    m = float(swish_eval(sample).mean())
    # one-sided z-test against mean <= 0
    se = float(swish_eval(sample).std(ddof=1)) / np.sqrt(sample.size)
    assert m > 0
    assert m / se > 3.09  # z beyond the 99.9th percentile


def test_activation_curves_columns_and_origin_row():
    xs = np.linspace(-4, 4, 9)
    cols = activation_curves(xs)
    assert list(cols) == ["x", "relu", "gelu", "swish", "zcswish"]
    at_zero = np.flatnonzero(xs == 0.0)[0]
    for name in ("relu", "gelu", "swish", "zcswish"):
        assert cols[name][at_zero] == 0.0
    np.testing.assert_allclose(cols["relu"], relu_eval(xs))
    np.testing.assert_allclose(cols["gelu"], gelu_eval(xs))


def test_gradcheck_named_examples():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal(30) * 2, dtype=np.float64)
    assert gradcheck(lambda a: tsum(swish(a)), [x]) < 1e-6
    p = params_from(0.2, 0.4, 1.3, channels=1)
    xt = Tensor(rng.standard_normal((10, 1)) * 2, dtype=np.float64)
    err = gradcheck(lambda xx, c, b, g: tsum(zc_swish(xx, ZCSwishParams(c, b, g))), [xt, *p.tensors()])
    assert err < 1e-5
