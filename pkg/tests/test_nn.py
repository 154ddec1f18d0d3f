import math

import numpy as np
import pytest
import torch

from handobj.nn import (
    DimensionError,
    GradCheckError,
    analytic_gradients,
    bilinear_upsample_points,
    conv_grid_3x3,
    conv_pointwise,
    gather_attention,
    grad_check,
    layer_norm,
    linear,
    max_pool_points,
    multi_head_attention,
    projection_loss,
    relu,
)
from handobj.nn.layers import Linear, TransformerBlock

from conftest import f64


def identity_params(d):
    eye, z = torch.eye(d, dtype=torch.float64), torch.zeros(d, dtype=torch.float64)
    return {"wq": eye, "bq": z, "wk": eye, "bk": z, "wv": eye, "bv": z, "wo": eye, "bo": z}


def random_params(d, seed=0):
    return {k: f64(*(d, d) if k.startswith("w") else (d,), seed=seed + i, scale=0.5)
            for i, k in enumerate(("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"))}


class TestLinear:
    def test_identity(self):
        x = torch.tensor([1.0, 2.0])
        assert torch.equal(linear(x, torch.eye(2), torch.zeros(2)), x)

    def test_hand_computed(self):
        y = linear(torch.tensor([1.0, 0.0]), torch.tensor([[2.0, 0.0], [0.0, 3.0]]), torch.tensor([1.0, 1.0]))
        assert y.tolist() == [3.0, 1.0]

    def test_matches_numpy(self):
        x, w, b = f64(5, 4, seed=1), f64(4, 3, seed=2), f64(3, seed=3)
        ref = x.numpy() @ w.numpy() + b.numpy()
        np.testing.assert_allclose(linear(x, w, b).numpy(), ref, atol=1e-6)

    def test_shape_error_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
            linear(torch.zeros(2, 3), torch.zeros(4, 5))


class TestAttention:
    def test_single_key_returns_value(self):
        q, kv = f64(1, 3, seed=1), f64(1, 3, seed=2)
        out = multi_head_attention(q, kv, identity_params(3), heads=1)
        torch.testing.assert_close(out, kv, rtol=0, atol=1e-15)

    def test_all_true_mask_is_bitwise_noop(self):
        q, kv, p = f64(2, 4, 8, seed=1), f64(2, 6, 8, seed=2), random_params(8)
        mask = torch.ones(2, 4, 6, dtype=torch.bool)
        assert torch.equal(multi_head_attention(q, kv, p, 2), multi_head_attention(q, kv, p, 2, neighbor_mask=mask))

    def test_two_keys_closed_form(self):
        q = torch.tensor([[0.3, -0.2]], dtype=torch.float64)
        kv = torch.tensor([[1.0, 0.5], [-0.4, 2.0]], dtype=torch.float64)
        s = (kv @ q[0]) / math.sqrt(2)
        w = torch.softmax(s, 0)
        expected = w[0] * kv[0] + w[1] * kv[1]
        out = multi_head_attention(q, kv, identity_params(2), heads=1)
        assert torch.allclose(out[0], expected, atol=1e-6)

    def test_masked_weights_are_exactly_zero(self):
        q, kv, p = f64(1, 5, 8, seed=3), f64(1, 7, 8, seed=4), random_params(8, 10)
        mask = torch.rand(1, 5, 7, generator=torch.Generator().manual_seed(0)) < 0.4
        mask[..., 2] = True
        _, w = multi_head_attention(q, kv, p, 2, neighbor_mask=mask, return_weights=True)
        assert (w[:, :, ~mask[0]] == 0).all()
        assert torch.allclose(w.sum(-1), torch.ones_like(w.sum(-1)))

    def test_all_masked_row_raises(self):
        mask = torch.ones(1, 2, 3, dtype=torch.bool)
        mask[0, 1] = False
        with pytest.raises(ValueError, match="no visible key"):
            multi_head_attention(f64(1, 2, 4), f64(1, 3, 4), random_params(4), 1, neighbor_mask=mask)

    def test_heads_must_divide_width(self):
        with pytest.raises(DimensionError):
            multi_head_attention(f64(1, 2, 6), f64(1, 3, 6), random_params(6), 4)

    def test_gather_matches_masked(self):
        q, kv, p = f64(2, 5, 8, seed=5), f64(2, 9, 8, seed=6), random_params(8, 20)
        g = torch.Generator().manual_seed(1)
        nbrs = torch.stack([torch.randperm(9, generator=g)[:4] for _ in range(10)]).reshape(2, 5, 4)
        mask = torch.zeros(2, 5, 9, dtype=torch.bool).scatter_(2, nbrs, True)
        torch.testing.assert_close(
            gather_attention(q, kv, nbrs, p, 2), multi_head_attention(q, kv, p, 2, neighbor_mask=mask),
            rtol=0, atol=1e-12,
        )


class TestNormAndActivations:
    def test_constant_row_normalises_to_zero(self):
        x = torch.full((1, 5), 3.0)
        assert torch.equal(layer_norm(x, torch.ones(5), torch.zeros(5)), torch.zeros(1, 5))

    def test_relu(self):
        assert relu(torch.tensor([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]

    def test_moments(self):
        y = layer_norm(f64(1, 64, seed=9) * 3 + 2, torch.ones(64, dtype=torch.float64), torch.zeros(64, dtype=torch.float64))
        assert abs(y.mean().item()) < 1e-6
        assert abs(y.var(unbiased=False).item() - 1) < 1e-4


class TestConv:
    def test_delta_kernel_is_identity(self):
        x = f64(5, 5, 1, seed=1)
        w = torch.zeros(3, 3, 1, 1, dtype=torch.float64)
        w[1, 1] = 1.0
        assert torch.equal(conv_grid_3x3(x, w), x)

    def test_ones_kernel_padding(self):
        y = conv_grid_3x3(torch.ones(3, 3, 1), torch.ones(3, 3, 1, 1))
        assert y[1, 1, 0].item() == 9.0 and y[0, 0, 0].item() == 4.0 and y[0, 1, 0].item() == 6.0

    def test_matches_loop_oracle(self):
        x, w, b = f64(4, 4, 2, seed=2), f64(3, 3, 2, 3, seed=3), f64(3, seed=4)
        xp = np.pad(x.numpy(), ((1, 1), (1, 1), (0, 0)))
        ref = np.zeros((4, 4, 3))
        for i in range(4):
            for j in range(4):
                for a in range(3):
                    for c in range(3):
                        ref[i, j] += xp[i + a, j + c] @ w.numpy()[a, c]
        np.testing.assert_allclose(conv_grid_3x3(x, w, b).numpy(), ref + b.numpy(), atol=1e-5)

    def test_empty_grid_raises(self):
        with pytest.raises(DimensionError):
            conv_grid_3x3(torch.zeros(0, 0, 1), torch.zeros(3, 3, 1, 1))

    def test_pointwise_equals_rowwise(self):
        x, w, b = f64(6, 3, seed=5), f64(3, 4, seed=6), f64(4, seed=7)
        rows = torch.stack([r @ w + b for r in x])
        assert torch.equal(conv_pointwise(x, w, b), rows)

    def test_pointwise_empty_raises(self):
        with pytest.raises(DimensionError):
            conv_pointwise(torch.zeros(0, 3), torch.zeros(3, 2))


class TestPoolAndUpsample:
    def test_single_point(self):
        x = f64(1, 4, seed=1)
        assert torch.equal(max_pool_points(x), x[0])

    def test_permutation_invariant(self):
        x = f64(20, 5, seed=2)
        perm = torch.randperm(20, generator=torch.Generator().manual_seed(0))
        assert torch.equal(max_pool_points(x), max_pool_points(x[perm]))

    def test_empty_raises(self):
        with pytest.raises(DimensionError):
            max_pool_points(torch.zeros(0, 3))

    def test_factor_one_identity(self):
        x = f64(5, 3, seed=3)
        assert torch.equal(bilinear_upsample_points(x, 1), x)

    def test_midpoint_and_clamp(self):
        y = bilinear_upsample_points(torch.tensor([[0.0], [2.0]]), 2)
        assert y.flatten().tolist() == [0.0, 1.0, 2.0, 2.0]

    def test_matches_interpolation_oracle(self):
        x = f64(6, 3, seed=4).numpy()
        ref = []
        for j in range(24):
            pos = j / 4
            lo = int(np.floor(pos))
            hi = min(lo + 1, 5)
            w = pos - lo
            ref.append((1 - w) * x[lo] + w * x[hi])
        np.testing.assert_allclose(bilinear_upsample_points(torch.from_numpy(x), 4).numpy(), ref, atol=1e-6)

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            bilinear_upsample_points(torch.zeros(3, 2), 0)


class TestGradCheck:
    def test_linear_layer(self):
        x, w, b = f64(3, 4, seed=1), f64(4, 2, seed=2), f64(2, seed=3)
        assert grad_check(lambda: projection_loss(linear(x, w, b)), [x, w, b]) < 1e-6

    def test_attention_block(self):
        torch.manual_seed(0)
        block = TransformerBlock(8, 2, 2.0).to(torch.float64)
        x = f64(1, 5, 8, seed=4)
        params = dict(block.named_parameters())
        assert grad_check(lambda: projection_loss(block(x)), {"x": x, **params}, max_entries=6) < 1e-4

    def test_constant_function_has_zero_gradient(self):
        x = f64(4, seed=5)
        g = analytic_gradients(lambda: x.sum() * 0 + 3.0, [x])
        assert torch.equal(g["0"], torch.zeros(4, dtype=torch.float64))

    def test_requires_float64(self):
        x = torch.zeros(3)
        with pytest.raises(GradCheckError, match="float64"):
            grad_check(lambda: x.sum(), [x])

    def test_non_finite_gradient_names_op(self):
        x = torch.tensor([0.0, 1.0], dtype=torch.float64)
        with pytest.raises(GradCheckError, match="sqrt_op"):
            grad_check(lambda: x.sqrt().sum(), [x], name="sqrt_op")

    def test_corruption_is_detected(self):
        x, w = f64(3, 4, seed=1), f64(4, 2, seed=2)
        assert grad_check(lambda: projection_loss(linear(x, w)), [x, w], corrupt=True) > 0.1


class TestModelInvariants:
    def test_shared_parameter_gradients_accumulate(self):
        """Using one layer twice equals the sum of two independent copies' gradients."""
        torch.manual_seed(0)
        layer = Linear(4, 4).to(torch.float64)
        x = f64(3, 4, seed=1)
        projection_loss(layer(torch.tanh(layer(x)))).backward()
        shared = layer.weight.grad.clone()

        a = Linear(4, 4).to(torch.float64)
        b = Linear(4, 4).to(torch.float64)
        with torch.no_grad():
            for m in (a, b):
                m.weight.copy_(layer.weight)
                m.bias.copy_(layer.bias)
        projection_loss(b(torch.tanh(a(x)))).backward()
        torch.testing.assert_close(shared, a.weight.grad + b.weight.grad, rtol=0, atol=1e-12)

    def test_forward_is_deterministic(self):
        torch.manual_seed(0)
        block = TransformerBlock(16, 4, cross=True)
        x, ctx = torch.randn(2, 5, 16), torch.randn(2, 3, 16)
        assert torch.equal(block(x, ctx), block(x, ctx))

    def test_cross_block_rejects_empty_context(self):
        block = TransformerBlock(8, 2, cross=True)
        with pytest.raises(ValueError):
            block(torch.zeros(1, 2, 8), torch.zeros(1, 0, 8))
