import math

import numpy as np
import pytest

from helpers import check_module_grads, numeric_grad, rel_error
from sgvad.compute import (BatchNorm1d, DepthwiseConv1d, GlobalAvgPool, Linear, LrSchedule,
                           Parameter, PointwiseConv1d, ReLU, SeparableBlock, SgdConfig, Tanh,
                           kernels, load_tensors, lr_at, residual_add, save_tensors, sgd_step,
                           softmax_cross_entropy)
from sgvad.errors import BadTarget, CorruptFile, ShapeMismatch


class TestKernels:
    def test_backends_agree(self):
        if kernels.BACKEND != "cython":
            pytest.skip("compiled kernels not built")
        rng = np.random.default_rng(0)
        for dtype in (np.float32, np.float64):
            x = rng.standard_normal((3, 5, 20)).astype(dtype)
            w = rng.standard_normal((5, 7)).astype(dtype)
            g = rng.standard_normal(x.shape).astype(dtype)
            for d in (1, 2, 3):
                np.testing.assert_allclose(kernels.depthwise_forward(x, w, d),
                                           kernels.depthwise_forward_numpy(x, w, d), rtol=1e-5, atol=1e-5)
                for a, b in zip(kernels.depthwise_backward(x, w, g, d),
                                kernels.depthwise_backward_numpy(x, w, g, d)):
                    np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-4)

    def test_kernel_wider_than_input(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 2, 3))
        w = rng.standard_normal((2, 29))
        brute = np.zeros_like(x)
        for c in range(2):
            for t in range(3):
                for k in range(29):
                    s = t + 2 * k - 28
                    if 0 <= s < 3:
                        brute[0, c, t] += w[c, k] * x[0, c, s]
        np.testing.assert_allclose(kernels.depthwise_forward(x, w, 2), brute, atol=1e-12)
        np.testing.assert_allclose(kernels.depthwise_forward_numpy(x, w, 2), brute, atol=1e-12)


class TestDepthwise:
    def test_delta_kernel(self):
        layer = DepthwiseConv1d("dw", 3, 5)
        layer.weight.value[:] = 0
        layer.weight.value[:, 2] = 1
        x = np.random.default_rng(0).standard_normal((2, 3, 9)).astype(np.float32)
        np.testing.assert_array_equal(layer.forward(x), x)

    def test_ones(self):
        layer = DepthwiseConv1d("dw", 2, 3)
        layer.weight.value[:] = 1
        out = layer.forward(np.ones((1, 2, 6), dtype=np.float32))
        np.testing.assert_array_equal(out[0, 0], [2, 3, 3, 3, 3, 2])

    def test_shape_errors(self):
        with pytest.raises(ShapeMismatch):
            DepthwiseConv1d("dw", 2, 4)
        with pytest.raises(ShapeMismatch):
            DepthwiseConv1d("dw", 2, 3).forward(np.ones((1, 3, 5), dtype=np.float32))

    @pytest.mark.parametrize("dilation", [1, 2])
    def test_gradcheck(self, dilation):
        rng = np.random.default_rng(dilation)
        layer = DepthwiseConv1d("dw", 4, 5, dilation, rng)
        assert check_module_grads(layer, rng.standard_normal((1, 4, 8)), rng, param_limit=100) < 1e-4


class TestPointwise:
    def test_identity(self):
        layer = PointwiseConv1d("pw", 4, 4)
        layer.weight.value[:] = np.eye(4)
        layer.bias.value[:] = 0
        x = np.random.default_rng(0).standard_normal((2, 4, 5)).astype(np.float32)
        np.testing.assert_array_equal(layer.forward(x), x)

    def test_hand_value(self):
        layer = PointwiseConv1d("pw", 2, 1)
        layer.weight.value[:] = [[1, 1]]
        layer.bias.value[:] = [0.5]
        out = layer.forward(np.array([[[1.0], [2.0]]], dtype=np.float32))
        assert out[0, 0, 0] == pytest.approx(3.5)

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        layer = PointwiseConv1d("pw", 3, 4, rng=rng)
        assert check_module_grads(layer, rng.standard_normal((2, 3, 6)), rng, param_limit=100) < 1e-4

    def test_shape_error(self):
        with pytest.raises(ShapeMismatch):
            PointwiseConv1d("pw", 3, 4).forward(np.ones((1, 2, 5)))


class TestBatchNorm:
    def test_standardized_input_unchanged(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 3, 50))
        x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
        bn = BatchNorm1d("bn", 3).astype(np.float64)
        # eps = 1e-5 shrinks by 1/sqrt(1 + eps)
        np.testing.assert_allclose(bn.forward(x), x, rtol=1e-5, atol=1e-6)

    def test_train_mode_statistics(self):
        rng = np.random.default_rng(1)
        bn = BatchNorm1d("bn", 5)
        x = (rng.standard_normal((8, 5, 30)) * 3 + 7).astype(np.float32)
        out = bn.forward(x).astype(np.float64)
        np.testing.assert_allclose(out.mean(axis=(0, 2)), 0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 2)), 1, atol=1e-4)

    def test_running_stats_and_eval(self):
        rng = np.random.default_rng(2)
        bn = BatchNorm1d("bn", 2).astype(np.float64)
        x = rng.standard_normal((4, 2, 10)) * 2 + 1
        bn.forward(x)
        rm = bn.buffers()["bn.running_mean"]
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2)))
        rv = bn.buffers()["bn.running_var"]
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2), ddof=1))
        bn.eval()
        out = bn.forward(x)
        np.testing.assert_allclose(out, (x - rm[None, :, None]) / np.sqrt(rv[None, :, None] + 1e-5))

    @pytest.mark.parametrize("training", [True, False])
    def test_gradcheck(self, training):
        rng = np.random.default_rng(4)
        bn = BatchNorm1d("bn", 3)
        bn.gamma.value[:] = rng.uniform(0.5, 2, 3)
        bn.beta.value[:] = rng.standard_normal(3)
        bn.train(training)
        assert check_module_grads(bn, rng.standard_normal((3, 3, 7)), rng) < 1e-4


class TestElementwise:
    def test_values(self):
        assert Tanh().forward(np.zeros(1))[0] == 0
        assert ReLU().forward(np.array([-1.0]))[0] == 0
        x = np.arange(6.0).reshape(1, 2, 3)
        np.testing.assert_array_equal(residual_add(x, np.zeros_like(x)), x)
        with pytest.raises(ShapeMismatch):
            residual_add(x, np.zeros((1, 2, 4)))

    @pytest.mark.parametrize("layer", [Tanh(), ReLU(), GlobalAvgPool()], ids=["tanh", "relu", "pool"])
    def test_gradcheck(self, layer):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 6))
        x[np.abs(x) < 1e-3] = 0.5  # keep away from the relu kink
        assert check_module_grads(layer, x, rng) < 1e-4

    def test_linear_gradcheck(self):
        rng = np.random.default_rng(6)
        layer = Linear("fc", 5, 3, rng=rng)
        layer.astype(np.float64)
        x = rng.standard_normal((4, 5))
        r = rng.standard_normal((4, 3))
        layer.forward(x)
        gx = layer.backward(r)
        def obj():
            return float(np.sum(r * layer.forward(x)))
        idx = [np.unravel_index(i, x.shape) for i in range(x.size)]
        assert rel_error([gx[i] for i in idx], [numeric_grad(obj, x, i) for i in idx]) < 1e-4
        w_idx = [np.unravel_index(i, layer.weight.value.shape) for i in range(15)]
        assert rel_error([layer.weight.grad[i] for i in w_idx],
                         [numeric_grad(obj, layer.weight.value, i) for i in w_idx]) < 1e-4

    def test_residual_block_gradcheck(self):
        rng = np.random.default_rng(7)
        block = SeparableBlock("b", 3, 4, 5, "tanh", residual=True, rng=rng)
        assert check_module_grads(block, rng.standard_normal((2, 3, 6)), rng, param_limit=50) < 1e-4


class TestSoftmaxCrossEntropy:
    def test_uniform(self):
        loss, _ = softmax_cross_entropy(np.zeros(36), 4)
        assert loss == pytest.approx(math.log(36), abs=1e-12)
        assert loss == pytest.approx(3.5835, abs=1e-4)

    def test_confident(self):
        loss, _ = softmax_cross_entropy(np.array([10.0, -10.0]), 0)
        assert loss == pytest.approx(math.log1p(math.exp(-20)), rel=1e-6)
        assert loss == pytest.approx(2.06e-9, rel=1e-2)

    def test_grad_sums_to_zero(self):
        rng = np.random.default_rng(0)
        _, g = softmax_cross_entropy(rng.standard_normal((5, 7)) * 10, rng.integers(0, 7, 5))
        np.testing.assert_allclose(g.sum(axis=1), 0, atol=1e-12)

    def test_large_logits_stable(self):
        loss, g = softmax_cross_entropy(np.array([1000.0, 0.0, -1000.0]), 2)
        assert loss == pytest.approx(2000.0)
        assert np.all(np.isfinite(g))

    def test_bad_target(self):
        with pytest.raises(BadTarget):
            softmax_cross_entropy(np.zeros(3), 3)

    def test_gradcheck(self):
        rng = np.random.default_rng(8)
        z = rng.standard_normal(6)
        _, g = softmax_cross_entropy(z, 2)
        num = [numeric_grad(lambda: softmax_cross_entropy(z, 2)[0], z, (i,)) for i in range(6)]
        assert rel_error(g, num) < 1e-4


class TestSgd:
    def p(self, value, grad, decay=True):
        return Parameter("p", np.array([value], dtype=np.float64), decay,
                         grad=np.array([grad], dtype=np.float64))

    def test_zero_grad_is_noop(self):
        p = self.p(1.0, 0.0)
        sgd_step([p], 0.1, SgdConfig(weight_decay=0.0))
        assert p.value[0] == 1.0

    def test_plain_sgd(self):
        p = self.p(1.0, 1.0)
        sgd_step([p], 0.1, SgdConfig(momentum=0.0, weight_decay=0.0))
        assert p.value[0] == pytest.approx(0.9, abs=1e-12)

    def test_momentum_trace(self):
        p = self.p(1.0, 1.0)
        cfg = SgdConfig(momentum=0.9, weight_decay=0.0)
        sgd_step([p], 0.1, cfg)
        assert abs(p.value[0] - 0.9) < 1e-12
        p.grad[:] = 1.0
        sgd_step([p], 0.1, cfg)
        assert abs(p.value[0] - 0.71) < 1e-12

    def test_lr_zero_identity_and_grads_cleared(self):
        p = self.p(2.0, 5.0)
        sgd_step([p], 0.0)
        assert p.value[0] == 2.0
        assert p.grad[0] == 0.0

    def test_weight_decay_only_when_flagged(self):
        decayed, plain = self.p(1.0, 0.0), self.p(1.0, 0.0, decay=False)
        sgd_step([decayed, plain], 0.1, SgdConfig(momentum=0.0, weight_decay=1e-3))
        assert decayed.value[0] == pytest.approx(1.0 - 0.1 * 1e-3)
        assert plain.value[0] == 1.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SgdConfig(momentum=1.0)
        with pytest.raises(ValueError):
            SgdConfig(weight_decay=-1)


class TestSchedule:
    S = 1000

    def test_anchors(self):
        s = LrSchedule(self.S)
        assert lr_at(0, s) == 0.0
        assert lr_at(50, s) == 1e-2
        assert lr_at(300, s) == 1e-2
        assert lr_at(499, s) == 1e-2
        assert lr_at(500, s) == 1e-2
        assert lr_at(self.S, s) == 1e-4
        assert lr_at(750, s) == pytest.approx(1e-4 + (1e-2 - 1e-4) * 0.25)

    def test_continuity(self):
        s = LrSchedule(self.S)
        bound = 1e-2 / (0.05 * self.S)
        for b in (50, 500):
            # the warmup jump meets the bound with equality
            assert abs(lr_at(b - 1, s) - lr_at(b, s)) <= bound * (1 + 1e-12)

    def test_monotone_pieces(self):
        s = LrSchedule(self.S)
        lrs = [lr_at(i, s) for i in range(self.S + 1)]
        assert all(a <= b for a, b in zip(lrs[:50], lrs[1:51]))
        assert all(a >= b for a, b in zip(lrs[500:], lrs[501:]))

    def test_range(self):
        with pytest.raises(ValueError):
            lr_at(self.S + 1, LrSchedule(self.S))
        with pytest.raises(ValueError):
            LrSchedule(10, warmup_ratio=0.6, hold_ratio=0.6)
        with pytest.raises(ValueError):
            LrSchedule(10, max_lr=1e-4, min_lr=1e-2)


class TestCheckpointFormat:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"a/b.weight": rng.standard_normal((3, 4)).astype(np.float32),
                   "scalar": np.array([7.0], dtype=np.float32),
                   "ünï": rng.standard_normal((2, 1, 3)).astype(np.float32)}
        save_tensors(tmp_path / "c.sgvd", tensors)
        back = load_tensors(tmp_path / "c.sgvd")
        assert list(back) == list(tensors)
        for k in tensors:
            assert back[k].tobytes() == tensors[k].tobytes()
            assert back[k].shape == tensors[k].shape

    def test_layout(self, tmp_path):
        save_tensors(tmp_path / "c.sgvd", {"w": np.array([[1.5, -2.0]], dtype=np.float32)})
        raw = (tmp_path / "c.sgvd").read_bytes()
        expected = (b"SGVD" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
                    + (1).to_bytes(4, "little") + b"w" + (2).to_bytes(4, "little")
                    + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                    + np.array([1.5, -2.0], dtype="<f4").tobytes())
        assert raw == expected

    def test_corrupt(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"NOPE")
        with pytest.raises(CorruptFile):
            load_tensors(tmp_path / "bad")
        save_tensors(tmp_path / "c", {"w": np.zeros((10,), dtype=np.float32)})
        (tmp_path / "t").write_bytes((tmp_path / "c").read_bytes()[:-8])
        with pytest.raises(CorruptFile):
            load_tensors(tmp_path / "t")
