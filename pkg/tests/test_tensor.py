"""Tensor engine tests: loop oracles for the conv pair, norm and activation
contracts, backward semantics, and finite-difference gradient checks."""

import numpy as np
import pytest
from oracles import conv2d_oracle, deconv2d_oracle

from lbpinpaint.tensor import (
    ConvParams,
    DimensionError,
    GraphError,
    NonFiniteError,
    Tensor,
    activation,
    clamp,
    concat,
    conv2d,
    grad_check,
    instance_norm,
    matmul,
    transposed_conv2d,
    weighted_sum,
)


class TestConv2d:
    def test_all_ones_sums_to_nine(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        b = Tensor(np.zeros(1))
        out = conv2d(x, w, b, ConvParams(1, 3, 1, 0))
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 9.0

    def test_appendix_layer_shape(self):
        x = Tensor(np.zeros((1, 2, 8, 8)))
        w = Tensor(np.zeros((64, 2, 4, 4)))
        b = Tensor(np.zeros(64))
        out = conv2d(x, w, b, ConvParams(64, 4, 2, 1))
        assert out.shape == (1, 64, 4, 4)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 3, 6, 6))
        w = rng.standard_normal((2, 3, 3, 3))
        b = rng.standard_normal(2)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), ConvParams(2, 3, 1, 0))
        ref = conv2d_oracle(x, w, b, 1, 0)
        assert np.max(np.abs(out.data - ref)) < 1e-12

    def test_randomized_shapes_match_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            bs = int(rng.integers(1, 3))
            cin = int(rng.integers(1, 4))
            f = int(rng.integers(1, 4))
            h = int(rng.integers(3, 9))
            wd = int(rng.integers(3, 9))
            k = int(rng.integers(1, min(h, wd) + 1))
            s = int(rng.integers(1, 3))
            p = int(rng.integers(0, 2))
            x = rng.standard_normal((bs, cin, h, wd))
            w = rng.standard_normal((f, cin, k, k))
            b = rng.standard_normal(f)
            out = conv2d(Tensor(x), Tensor(w), Tensor(b), ConvParams(f, k, s, p))
            ref = conv2d_oracle(x, w, b, s, p)
            assert np.max(np.abs(out.data - ref)) < 1e-12

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 4, 3, 3)))
        b = Tensor(np.zeros(2))
        with pytest.raises(DimensionError) as e:
            conv2d(x, w, b, ConvParams(2, 3, 1, 0))
        assert e.value.axis == 1

    def test_purity(self):
        rng = np.random.default_rng(3)
        x, w, b = rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
        p = ConvParams(3, 3, 2, 1)
        a = conv2d(Tensor(x), Tensor(w), Tensor(b), p).data
        c = conv2d(Tensor(x), Tensor(w), Tensor(b), p).data
        assert np.array_equal(a, c)


class TestTransposedConv2d:
    def test_doubling_contract(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        w = Tensor(np.ones((1, 1, 4, 4)))
        b = Tensor(np.zeros(1))
        out = transposed_conv2d(x, w, b, ConvParams(1, 4, 2, 1))
        assert out.shape == (1, 1, 4, 4)

    def test_adjoint_of_conv2d_random_instances(self):
        # exact adjointness needs geometry where the conv floor drops nothing:
        # (h + 2p - k) % s == 0, so deconv maps back to the original extent
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 15:
            cin = int(rng.integers(1, 4))
            f = int(rng.integers(1, 4))
            k = int(rng.integers(1, 5))
            s = int(rng.integers(1, 3))
            pad = int(rng.integers(0, 2))
            h = int(rng.integers(k, 9))
            if (h + 2 * pad - k) % s != 0:
                continue
            x = rng.standard_normal((1, cin, h, h))
            w = rng.standard_normal((f, cin, k, k))
            out_h = (h + 2 * pad - k) // s + 1
            y = rng.standard_normal((1, f, out_h, out_h))
            cx = conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(f)), ConvParams(f, k, s, pad)).data
            # conv weights (f, c, k, k) act as deconv weights (in=f, out=c, k, k)
            dy = transposed_conv2d(
                Tensor(y), Tensor(w), Tensor(np.zeros(cin)), ConvParams(cin, k, s, pad)
            ).data
            assert dy.shape == x.shape
            lhs = float((cx * y).sum())
            rhs = float((x * dy).sum())
            assert abs(lhs - rhs) < 1e-10
            checked += 1

    def test_matches_scatter_oracle_randomized(self):
        rng = np.random.default_rng(13)
        for _ in range(15):
            cin = int(rng.integers(1, 4))
            f = int(rng.integers(1, 4))
            k = int(rng.integers(2, 5))
            s = int(rng.integers(1, 3))
            pad = int(rng.integers(0, min(k, 2)))
            h = int(rng.integers(2, 6))
            x = rng.standard_normal((2, cin, h, h))
            w = rng.standard_normal((cin, f, k, k))
            b = rng.standard_normal(f)
            out = transposed_conv2d(Tensor(x), Tensor(w), Tensor(b), ConvParams(f, k, s, pad))
            ref = deconv2d_oracle(x, w, b, s, pad)
            assert np.max(np.abs(out.data - ref)) < 1e-12

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 2, 4, 4)))
        b = Tensor(np.zeros(2))
        with pytest.raises(DimensionError) as e:
            transposed_conv2d(x, w, b, ConvParams(2, 4, 2, 1))
        assert e.value.axis == 1


class TestInstanceNorm:
    def test_constant_plane_maps_to_zero(self):
        x = Tensor(np.full((1, 2, 3, 3), 7.0))
        out = instance_norm(x, eps=1e-5)
        assert np.all(out.data == 0.0)

    def test_standardizes_planes(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((2, 3, 6, 6)) * 4.0 + 2.0)
        out = instance_norm(x, eps=1e-5).data
        mu = out.mean(axis=(2, 3))
        var = out.var(axis=(2, 3))
        assert np.max(np.abs(mu)) < 1e-9
        assert np.max(np.abs(var - 1.0)) < 1e-6

    def test_hand_formula(self):
        eps = 1e-5
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
        out = instance_norm(x, eps=eps).data.reshape(-1)
        expected = (np.array([1.0, 2.0, 3.0, 4.0]) - 2.5) / np.sqrt(1.25 + eps)
        assert np.max(np.abs(out - expected)) < 1e-12

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            instance_norm(Tensor(np.zeros((1, 1, 2, 2))), eps=0.0)


class TestActivations:
    def test_leaky_relu_slope(self):
        out = activation(Tensor(np.array([[[[-1.0]]]])), "leaky_relu")
        assert out.item() == pytest.approx(-0.2, abs=1e-15)

    def test_tanh_range(self):
        rng = np.random.default_rng(9)
        out = activation(Tensor(rng.standard_normal((1, 1, 8, 8)) * 10), "tanh")
        assert np.all(out.data >= -1.0) and np.all(out.data <= 1.0)

    def test_sigmoid_at_zero(self):
        assert activation(Tensor(np.zeros((1, 1, 1, 1))), "sigmoid").item() == 0.5

    def test_relu_kink_uses_negative_side(self):
        x = Tensor(np.zeros((1, 1, 1, 2)), requires_grad=True)
        activation(x, "relu").sum().backward()
        assert np.all(x.grad == 0.0)
        x2 = Tensor(np.zeros((1, 1, 1, 2)), requires_grad=True)
        activation(x2, "leaky_relu").sum().backward()
        assert np.all(x2.grad == 0.2)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            activation(Tensor(np.zeros(1)), "gelu")


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 4, 5)), requires_grad=True)
        x.sum().backward()
        assert np.array_equal(x.grad, np.ones_like(x.data))

    def test_half_quadratic_gradient_is_x(self):
        data = np.random.default_rng(1).standard_normal((3, 4))
        x = Tensor(data, requires_grad=True)
        ((x * x).sum() * 0.5).backward()
        assert np.max(np.abs(x.grad - data)) < 1e-12

    def test_repeated_backward_accumulates(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = x.sum()
        loss.backward()
        loss.backward()
        assert np.all(x.grad == 2.0)

    def test_non_scalar_backward_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(GraphError):
            (x * 2.0).backward()

    def test_cycle_detected(self):
        x = Tensor(np.ones(1), requires_grad=True)
        y = x * 2.0
        y._parents = (y,)
        with pytest.raises(GraphError):
            y.backward()

    def test_detach_blocks_gradient(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        (x.detach() * 3.0).sum().backward()
        assert x.grad is None

    def test_non_finite_op_is_named(self):
        with pytest.raises(NonFiniteError) as e:
            Tensor(np.array([-1.0])).log()
        assert e.value.op == "log"


class TestStructuredOps:
    def test_concat_and_split_gradient(self):
        a = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
        b = Tensor(np.ones((1, 3, 2, 2)), requires_grad=True)
        out = concat([a, b], axis=1)
        assert out.shape == (1, 5, 2, 2)
        (out.sum() * 2.0).backward()
        assert np.all(a.grad == 2.0) and np.all(b.grad == 2.0)

    def test_concat_extent_mismatch(self):
        with pytest.raises(DimensionError):
            concat([Tensor(np.ones((1, 2, 2, 2))), Tensor(np.ones((1, 2, 3, 2)))], axis=1)

    def test_matmul_gradients(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        matmul(a, b).sum().backward()
        assert a.grad.shape == (3, 4) and b.grad.shape == (4, 2)

    def test_clamp_gradient_gate(self):
        x = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
        clamp(x, 0.0, 1.0).sum().backward()
        assert np.array_equal(x.grad, np.array([0.0, 1.0, 0.0]))

    def test_weighted_sum_exact(self):
        parts = [Tensor(np.asarray(1.0)) for _ in range(3)]
        out = weighted_sum(list(zip([0.01, 10.0, 0.2], parts)))
        assert out.item() == 10.21


class TestGradCheck:
    def test_identity_is_exact(self):
        x = Tensor(np.random.default_rng(4).standard_normal((2, 3)))
        err = grad_check(lambda ts: ts[0], [x])
        assert err < 1e-9

    def test_instance_norm(self):
        x = Tensor(np.random.default_rng(6).standard_normal((1, 2, 4, 4)))
        err = grad_check(lambda ts: instance_norm(ts[0], 1e-5), [x])
        assert err < 1e-6

    def test_conv2d(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((1, 2, 5, 5)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        b = Tensor(rng.standard_normal(3))
        p = ConvParams(3, 3, 2, 1)
        err = grad_check(lambda ts: conv2d(ts[0], ts[1], ts[2], p), [x, w, b])
        assert err < 1e-4

    def test_transposed_conv2d(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.standard_normal((1, 3, 3, 3)))
        w = Tensor(rng.standard_normal((3, 2, 4, 4)))
        b = Tensor(rng.standard_normal(2))
        p = ConvParams(2, 4, 2, 1)
        err = grad_check(lambda ts: transposed_conv2d(ts[0], ts[1], ts[2], p), [x, w, b])
        assert err < 1e-4

    def test_activations(self):
        rng = np.random.default_rng(12)
        for kind in ("relu", "leaky_relu", "tanh", "sigmoid"):
            x = Tensor(rng.standard_normal((1, 2, 3, 3)) + 0.05)
            err = grad_check(lambda ts, k=kind: activation(ts[0], k), [x])
            assert err < 1e-4, kind

    def test_inputs_not_mutated(self):
        data = np.random.default_rng(14).standard_normal((2, 2))
        x = Tensor(data.copy())
        grad_check(lambda ts: ts[0] * ts[0], [x])
        assert np.array_equal(x.data, data)
        assert x.grad is None
