import math

import numpy as np
import pytest

from numeric_core import ops
from numeric_core.autodiff import backward, gradients
from numeric_core.gradcheck import finite_diff_grad, max_relative_error
from numeric_core.node import GraphError, Node, NonFiniteError, constant
from numeric_core.params import ParamStore


def leaf(value) -> Node:
    return Node(np.asarray(value, dtype=np.float64), requires_grad=True)


class TestDetach:
    def test_values_pass_through(self):
        x = leaf([1.5, -2.0])
        np.testing.assert_array_equal(ops.detach(x).value, x.value)

    def test_only_the_live_factor_contributes(self):
        x = leaf(3.0)
        (g,) = gradients(ops.detach(x) * x, [x])
        assert g == pytest.approx(3.0)

    def test_idempotent(self):
        x = leaf([0.5, 4.0])
        once, twice = ops.detach(x), ops.detach(ops.detach(x))
        np.testing.assert_array_equal(once.value, twice.value)
        assert not twice.requires_grad

    def test_detached_slot_gets_exact_zero(self):
        a, b = leaf(0.0), leaf(0.0)
        f = ops.log1p(ops.exp(ops.detach(a) - b))
        ga, gb = gradients(f, [a, b])
        assert ga == 0.0
        assert gb == pytest.approx(-0.5)


class TestBackward:
    def test_square(self):
        params = ParamStore()
        x = params.add("x", np.array(3.0))
        assert backward(x * x, params)["x"] == pytest.approx(6.0)

    def test_unreached_parameter_gets_zeros(self):
        params = ParamStore()
        x = params.add("x", np.array([1.0, 2.0]))
        params.add("unused", np.ones((2, 3)))
        grads = backward(ops.sum(x * x), params)
        np.testing.assert_array_equal(grads["unused"], np.zeros((2, 3)))

    def test_broadcast_add_sums_back(self):
        a, b = leaf(np.ones((3, 4))), leaf(np.zeros(4))
        _, gb = gradients(ops.sum(a + b), [a, b])
        np.testing.assert_array_equal(gb, np.full(4, 3.0))

    def test_non_scalar_loss_rejected(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(GraphError):
            gradients(x * 2.0, [x])

    def test_reused_node_accumulates(self):
        x = leaf(2.0)
        y = x * x + x * 3.0
        (g,) = gradients(y, [x])
        assert g == pytest.approx(7.0)

    def test_cross_entropy_matches_finite_differences(self, rng):
        params = ParamStore()
        params.add("logits", rng.normal(size=8))
        target = 5

        def f(p):
            return -ops.sum(ops.mul(ops.log_softmax(p["logits"]), np.eye(8)[target]))

        analytic = backward(f(params), params)
        numeric = finite_diff_grad(f, params)
        assert max_relative_error(analytic, numeric) < 1e-6


class TestLogSoftmax:
    def test_two_zeros(self):
        np.testing.assert_allclose(ops.log_softmax(np.zeros(2)).value, [-math.log(2)] * 2, atol=1e-15)

    def test_uniform_over_64(self):
        np.testing.assert_allclose(ops.log_softmax(np.zeros(64)).value, -math.log(64), atol=1e-12)
        assert -math.log(64) == pytest.approx(-4.1589, abs=1e-4)

    def test_shift_invariant(self, rng):
        z = rng.normal(size=10)
        np.testing.assert_allclose(ops.log_softmax(z + 7.3).value, ops.log_softmax(z).value, atol=1e-12)

    def test_large_logits_stay_finite(self):
        out = ops.log_softmax(np.array([1000.0, 0.0])).value
        assert np.all(np.isfinite(out))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ops.log_softmax(np.zeros(0))


class TestOps:
    def test_non_finite_raises_with_op_name(self):
        with pytest.raises(NonFiniteError) as info:
            ops.exp(constant(1000.0))
        assert info.value.op == "exp"

    def test_log1p_of_minus_one_is_non_finite(self):
        with pytest.raises(NonFiniteError):
            ops.log1p(constant(-1.0))

    def test_frozen_inputs_record_no_graph(self):
        out = ops.matmul(constant(np.ones((2, 2))), constant(np.ones((2, 2))))
        assert out.parents == ()
        assert not out.requires_grad

    def test_mask_fill_blocks_gradient(self):
        x = leaf([1.0, 2.0, 3.0])
        mask = np.array([False, True, False])
        (g,) = gradients(ops.sum(ops.mask_fill(x, mask, 0.0)), [x])
        np.testing.assert_array_equal(g, [1.0, 0.0, 1.0])

    def test_rsqrt(self):
        np.testing.assert_allclose(ops.rsqrt(np.array([4.0, 0.25])).value, [0.5, 2.0], rtol=1e-12)

    def test_rms_norm_unit_rms(self, rng):
        out = ops.rms_norm(rng.normal(size=(3, 16)), np.ones(16), eps=0.0).value
        np.testing.assert_allclose(np.sqrt((out ** 2).mean(axis=-1)), 1.0, rtol=1e-9)

    def test_transpose_and_concat_gradients(self, rng):
        params = ParamStore()
        params.add("a", rng.normal(size=(2, 3)))
        params.add("b", rng.normal(size=(3, 3)))
        weights = rng.normal(size=(5, 3))

        def f(p):
            stacked = ops.concat([ops.transpose(p["a"], (1, 0)), p["b"]], axis=1)
            return ops.sum(ops.mul(ops.transpose(stacked, (1, 0)), weights))

        assert max_relative_error(backward(f(params), params), finite_diff_grad(f, params)) < 1e-7


class TestFiniteDifferences:
    def test_quadratic(self):
        params = ParamStore()
        params.add("p", np.array([1.0, 2.0]))
        numeric = finite_diff_grad(lambda p: ops.sum(p["p"] * p["p"]), params)
        np.testing.assert_allclose(numeric["p"], [2.0, 4.0], atol=1e-8)

    def test_detached_input_has_zero_estimate(self):
        params = ParamStore()
        params.add("a", np.array(0.3))
        params.add("b", np.array(-0.2))
        numeric = finite_diff_grad(lambda p: ops.exp(ops.detach(p["a"]) - p["b"]), params)
        assert numeric["a"] == 0.0

    def test_two_layer_toy_model_agrees_with_backward(self, rng):
        params = ParamStore()
        params.add("w1", rng.normal(size=(3, 4)) * 0.5)
        params.add("b1", rng.normal(size=4) * 0.1)
        params.add("w2", rng.normal(size=(4, 5)) * 0.5)
        x = rng.normal(size=(6, 3))
        targets = np.eye(5)[rng.integers(5, size=6)]

        def f(p):
            hidden = ops.softplus(ops.matmul(x, p["w1"]) + p["b1"])
            logp = ops.log_softmax(ops.matmul(hidden, p["w2"]), axis=-1)
            return -ops.mean(ops.sum(ops.mul(logp, targets), axis=-1))

        assert max_relative_error(backward(f(params), params), finite_diff_grad(f, params)) < 1e-4

    def test_selected_coordinates_only(self):
        params = ParamStore()
        params.add("p", np.array([1.0, 2.0, 3.0]))
        params.add("q", np.array([5.0]))

        def f(p):
            return ops.sum(p["p"] * p["p"]) + ops.sum(p["q"])

        numeric = finite_diff_grad(f, params, coordinates={"p": [2]})
        assert set(numeric) == {"p"}
        assert np.isnan(numeric["p"][:2]).all()
        assert numeric["p"][2] == pytest.approx(6.0)
        assert max_relative_error(backward(f(params), params), numeric) < 1e-8

    def test_non_positive_eps_rejected(self):
        params = ParamStore()
        params.add("p", np.zeros(1))
        with pytest.raises(ValueError):
            finite_diff_grad(lambda p: ops.sum(p["p"]), params, eps=0.0)


class TestParamStore:
    def test_duplicate_name_rejected(self):
        params = ParamStore()
        params.add("w", np.zeros(2))
        with pytest.raises(KeyError):
            params.add("w", np.zeros(2))

    def test_frozen_snapshot_is_detached_copy(self):
        params = ParamStore()
        params.add("w", np.ones(3))
        frozen = params.frozen()
        frozen["w"].value[0] = 5.0
        assert params["w"].value[0] == 1.0
        assert not frozen["w"].requires_grad

    def test_load_arrays_checks_shapes(self):
        params = ParamStore()
        params.add("w", np.zeros((2, 2)))
        with pytest.raises(ValueError):
            params.load_arrays({"w": np.zeros(3)})
        with pytest.raises(KeyError):
            params.load_arrays({})
