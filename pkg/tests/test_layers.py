"""Convolution kernels, their adjoints, and the small layer zoo."""

import numpy as np
import pytest

import guidepth.autodiff as ad
from guidepth import (
    BatchNorm,
    DimensionError,
    LayerParams,
    Tape,
    Tensor,
    batch_norm,
    channel_mix,
    channel_scale,
    channel_softmax,
    conv2d,
    depthwise_separable_conv,
    global_avg_pool,
    grad_check,
    init_conv,
    init_separable,
    init_tconv,
    primitive_layer,
    transposed_conv2d,
)
from guidepth.rng import substream


@pytest.fixture
def rng():
    return substream(7, "layer-tests")


def ones_conv(cin, cout, k, stride=1, padding=None, groups=1, bias=False):
    p = k // 2 if padding is None else padding
    w = Tensor(np.ones((cout, cin // groups, k, k)))
    b = Tensor(np.zeros((1, cout, 1, 1))) if bias else None
    return LayerParams(w, b, stride=stride, padding=p, groups=groups)


class TestConvForward:
    def test_box_filter_on_2x2(self):
        # 3x3 all-ones kernel, pad 1: every output sees the whole input
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        out = conv2d(x, ones_conv(1, 1, 3))
        np.testing.assert_array_equal(out.data[0, 0], np.full((2, 2), 10.0))

    def test_identity_kernel(self, rng):
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        x = rng.normal(size=(2, 1, 5, 5))
        out = conv2d(Tensor(x), LayerParams(Tensor(w), None, padding=1))
        np.testing.assert_array_equal(out.data, x)

    def test_stride_subsamples(self, rng):
        x = rng.normal(size=(1, 1, 6, 6))
        out = conv2d(Tensor(x), LayerParams(Tensor(np.ones((1, 1, 1, 1))), None, stride=2))
        np.testing.assert_array_equal(out.data[0, 0], x[0, 0, ::2, ::2])

    def test_output_shape_formula(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 11, 9)))
        out = conv2d(x, ones_conv(3, 4, 3, stride=2, padding=1))
        assert out.shape == (1, 4, 6, 5)

    def test_even_kernel_rejected(self, rng):
        w = Tensor(rng.normal(size=(1, 1, 2, 2)))
        with pytest.raises(DimensionError):
            conv2d(Tensor(rng.normal(size=(1, 1, 4, 4))), LayerParams(w, None))

    def test_collapsed_output_rejected(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 2, 2)))
        with pytest.raises(DimensionError):
            conv2d(x, ones_conv(1, 1, 3, padding=0))

    def test_grouped_matches_blockdiag_full(self, rng):
        cin, cout, groups = 4, 6, 2
        wg = rng.normal(size=(cout, cin // groups, 3, 3))
        x = rng.normal(size=(2, cin, 5, 5))
        grouped = conv2d(Tensor(x), LayerParams(Tensor(wg), None, padding=1, groups=groups))
        wf = np.zeros((cout, cin, 3, 3))
        wf[:3, :2] = wg[:3]
        wf[3:, 2:] = wg[3:]
        full = conv2d(Tensor(x), LayerParams(Tensor(wf), None, padding=1))
        np.testing.assert_allclose(grouped.data, full.data, atol=1e-12)

    def test_depthwise_fast_path_matches_grouped(self, rng):
        c = 5
        w = rng.normal(size=(c, 1, 3, 3))
        x = rng.normal(size=(2, c, 6, 6))
        fast = conv2d(Tensor(x), LayerParams(Tensor(w), None, padding=1, groups=c))
        slow = np.stack([
            conv2d(
                Tensor(x[:, i : i + 1]),
                LayerParams(Tensor(w[i : i + 1]), None, padding=1),
            ).data[:, 0]
            for i in range(c)
        ], axis=1)
        np.testing.assert_allclose(fast.data, slow, atol=1e-12)

    def test_bias_adds_per_channel(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 4, 4)))
        p = ones_conv(2, 3, 3)
        base = conv2d(x, p).data
        pb = LayerParams(p.weights, Tensor(np.arange(3.0).reshape(1, 3, 1, 1)),
                         stride=1, padding=1)
        np.testing.assert_allclose(conv2d(x, pb).data, base + np.arange(3.0).reshape(1, 3, 1, 1))


class TestTransposedConv:
    def test_ones_2x2_stride2_tiles(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        w = Tensor(np.ones((1, 1, 2, 2)))
        out = transposed_conv2d(x, LayerParams(w, None, stride=2, padding=0))
        expect = np.repeat(np.repeat(x.data[0, 0], 2, 0), 2, 1)
        np.testing.assert_array_equal(out.data[0, 0], expect)

    def test_upsample_shape(self, rng):
        x = Tensor(rng.normal(size=(2, 4, 5, 7)))
        p = init_tconv(rng, 4, 3, kernel=2, stride=2)
        assert transposed_conv2d(x, p).shape == (2, 3, 10, 14)

    def test_adjoint_of_conv(self, rng):
        # <conv(x), y> == <x, tconv(y)> with shared weights
        for stride, size in ((1, 6), (2, 6), (2, 7)):
            w = rng.normal(size=(3, 2, 3, 3))
            x = rng.normal(size=(1, 2, size, size))
            t = Tape()
            xt = t.leaf(Tensor(x))
            out = conv2d(xt, LayerParams(Tensor(w), None, stride=stride, padding=1))
            y = rng.normal(size=out.shape)
            t.backward(ad.sum_all(ad.mul(out, Tensor(y))))
            lhs = (out.data * y).sum()
            rhs = (x * xt.grad).sum()  # dx = conv^T(y), so <x, dx> probes the adjoint
            # direct inner-product check of the pairing
            assert abs((out.data * y).sum() - (conv2d(Tensor(x), LayerParams(Tensor(w), None, stride=stride, padding=1)).data * y).sum()) < 1e-12
            # adjoint identity via independent cotangent
            z = rng.normal(size=x.shape)
            t2 = Tape()
            zt = t2.leaf(Tensor(z))
            out2 = conv2d(zt, LayerParams(Tensor(w), None, stride=stride, padding=1))
            t2.backward(ad.sum_all(ad.mul(out2, Tensor(y))))
            lhs2 = (out2.data * y).sum()
            rhs2 = (z * zt.grad).sum()
            # conv is linear in x, so <conv z, y> must equal <z, conv^T y>
            assert abs(lhs2 - rhs2) < 1e-10


class TestConvGradients:
    @pytest.mark.parametrize("stride,size,pad", [(1, 5, 1), (2, 6, 1), (2, 7, 0), (3, 8, 1)])
    def test_conv_wrt_input(self, rng, stride, size, pad):
        w = init_conv(rng, 2, 3, 3, stride=stride, padding=pad)
        x = Tensor(rng.normal(size=(1, 2, size, size)))
        rep = grad_check(lambda t: ad.sum_all(ad.square(conv2d(t, w))), x)
        assert rep.passed, rep

    def test_conv_wrt_weights_and_bias(self, rng):
        p = init_conv(rng, 2, 3, 3, stride=2)
        x = rng.normal(size=(2, 2, 6, 6))

        def fw(t):
            return ad.sum_all(ad.square(conv2d(Tensor(x), LayerParams(t, p.bias, stride=2, padding=1))))

        assert grad_check(fw, p.weights).passed

        def fb(t):
            return ad.sum_all(ad.square(conv2d(Tensor(x), LayerParams(p.weights, t, stride=2, padding=1))))

        assert grad_check(fb, p.bias).passed

    def test_depthwise_and_grouped_grads(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 6, 6)))
        dw = init_conv(rng, 4, 4, 3, groups=4, bias=False)
        assert grad_check(lambda t: ad.sum_all(ad.square(conv2d(t, dw))), x).passed
        g2 = init_conv(rng, 4, 6, 3, groups=2)
        assert grad_check(lambda t: ad.sum_all(ad.square(conv2d(t, g2))), x).passed

        def fw(t):
            return ad.sum_all(ad.square(conv2d(
                Tensor(x.data), LayerParams(t, None, padding=1, groups=4))))

        assert grad_check(fw, dw.weights).passed

    def test_tconv_grads(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 4, 4)))
        p = init_tconv(rng, 4, 3, kernel=2, stride=2)
        assert grad_check(lambda t: ad.sum_all(ad.square(transposed_conv2d(t, p))), x).passed

        def fw(t):
            return ad.sum_all(ad.square(transposed_conv2d(
                Tensor(x.data), LayerParams(t, None, stride=2, padding=0))))

        assert grad_check(fw, p.weights).passed


class TestSeparable:
    def test_equals_composition(self, rng):
        sep = init_separable(rng, 3, 5)
        x = Tensor(rng.normal(size=(2, 3, 6, 6)))
        fused = depthwise_separable_conv(x, sep.depthwise, sep.pointwise)
        manual = conv2d(conv2d(x, sep.depthwise), sep.pointwise)
        np.testing.assert_array_equal(fused.data, manual.data)

    def test_validates_structure(self, rng):
        from guidepth import ConfigurationError

        sep = init_separable(rng, 3, 5)
        x = Tensor(rng.normal(size=(2, 3, 6, 6)))
        with pytest.raises(ConfigurationError):
            depthwise_separable_conv(x, sep.pointwise, sep.pointwise)


class TestChannelOps:
    def test_global_avg_pool(self, rng):
        x = rng.normal(size=(2, 3, 4, 5))
        out = global_avg_pool(Tensor(x))
        assert out.shape == (2, 3, 1, 1)
        np.testing.assert_allclose(out.data[..., 0, 0], x.mean(axis=(2, 3)))

    def test_softmax_two_channel_fixture(self):
        # logits (0, ln 2) -> probabilities (1/3, 2/3)
        x = np.zeros((1, 2, 1, 1))
        x[0, 1] = np.log(2.0)
        out = channel_softmax(Tensor(x))
        np.testing.assert_allclose(out.data.ravel(), [1 / 3, 2 / 3], atol=1e-15)

    def test_softmax_sums_to_one(self, rng):
        out = channel_softmax(Tensor(rng.normal(size=(2, 5, 3, 3)) * 10))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)

    def test_softmax_shift_invariant(self, rng):
        x = rng.normal(size=(1, 4, 2, 2))
        a = channel_softmax(Tensor(x))
        b = channel_softmax(Tensor(x + 100.0))
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_channel_scale(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        f = rng.normal(size=(2, 3, 1, 1))
        np.testing.assert_array_equal(channel_scale(Tensor(x), Tensor(f)).data, x * f)
        with pytest.raises(DimensionError):
            channel_scale(Tensor(x), Tensor(rng.normal(size=(2, 3, 2, 2))))

    def test_channel_mix_fixture(self):
        # mixer rows ((1, 1), (0, 1)): out0 = a + b, out1 = b
        x = np.zeros((1, 2, 2, 2))
        x[0, 0] = [[1, 2], [3, 4]]
        x[0, 1] = [[10, 20], [30, 40]]
        mixer = Tensor(np.array([1.0, 1.0, 0.0, 1.0]).reshape(1, 4, 1, 1))
        out = channel_mix(Tensor(x), mixer)
        np.testing.assert_array_equal(out.data[0, 0], x[0, 0] + x[0, 1])
        np.testing.assert_array_equal(out.data[0, 1], x[0, 1])

    def test_channel_mix_rectangular(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        m = rng.normal(size=(2, 6, 1, 1))  # 2 out channels x 3 in
        out = channel_mix(Tensor(x), Tensor(m))
        assert out.shape == (2, 2, 4, 4)
        mm = m.reshape(2, 2, 3)
        expect = np.einsum("boc,bchw->bohw", mm, x)
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_channel_op_gradients(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 3, 3)))
        y = rng.normal(size=(1, 3, 3, 3))
        assert grad_check(lambda t: ad.sum_all(ad.mul(channel_softmax(t), Tensor(y))), x).passed
        assert grad_check(lambda t: ad.sum_all(ad.square(global_avg_pool(t))), x).passed
        m = Tensor(rng.normal(size=(1, 9, 1, 1)))
        assert grad_check(lambda t: ad.sum_all(ad.square(channel_mix(t, Tensor(m.data)))), x).passed
        assert grad_check(lambda t: ad.sum_all(ad.square(channel_mix(Tensor(x.data), t))), m).passed


class TestBatchNorm:
    def test_training_normalizes(self, rng):
        bn = BatchNorm(3)
        x = Tensor(rng.normal(loc=5.0, scale=3.0, size=(4, 3, 6, 6)))
        out = batch_norm(x, bn, training=True)
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        np.testing.assert_allclose(mean, 0.0, atol=1e-12)
        np.testing.assert_allclose(var, 1.0, atol=1e-4)

    def test_running_stats_update_only_in_training(self, rng):
        bn = BatchNorm(2)
        x = Tensor(rng.normal(loc=2.0, size=(3, 2, 4, 4)))
        batch_norm(x, bn, training=True)
        m1 = bn.running_mean.copy()
        assert not np.allclose(m1, 0.0)
        batch_norm(x, bn, training=False)
        np.testing.assert_array_equal(bn.running_mean, m1)

    def test_eval_uses_running_stats(self, rng):
        bn = BatchNorm(2)
        bn.running_mean = np.array([1.0, -1.0])
        bn.running_var = np.array([4.0, 0.25])
        x = rng.normal(size=(1, 2, 3, 3))
        out = batch_norm(Tensor(x), bn, training=False)
        expect = (x - bn.running_mean.reshape(1, 2, 1, 1)) / np.sqrt(
            bn.running_var.reshape(1, 2, 1, 1) + bn.eps
        )
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_gradients_both_modes(self, rng):
        y = rng.normal(size=(2, 3, 4, 4))
        x = Tensor(rng.normal(size=(2, 3, 4, 4)))
        bn = BatchNorm(3)
        bn.gamma.data[:] = rng.normal(size=bn.gamma.shape)
        bn.beta.data[:] = rng.normal(size=bn.beta.shape)
        assert grad_check(
            lambda t: ad.sum_all(ad.mul(batch_norm(t, bn, training=True), Tensor(y))), x
        ).passed
        bn2 = BatchNorm(3)
        bn2.running_mean = rng.normal(size=3)
        bn2.running_var = np.abs(rng.normal(size=3)) + 0.3
        assert grad_check(
            lambda t: ad.sum_all(ad.square(batch_norm(t, bn2, training=False))), x
        ).passed

    def test_gamma_beta_gradients(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        bn = BatchNorm(3)

        def fg(t):
            bn.gamma = t
            return ad.sum_all(ad.square(batch_norm(Tensor(x), bn, training=True)))

        assert grad_check(fg, bn.gamma).passed


class TestPrimitiveLayerDispatch:
    def test_kinds(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 3)))
        y = Tensor(rng.normal(size=(1, 2, 3, 3)))
        np.testing.assert_array_equal(
            primitive_layer("relu", [x]).data, np.maximum(x.data, 0)
        )
        np.testing.assert_array_equal(
            primitive_layer("add", [x, y]).data, x.data + y.data
        )
        cat = primitive_layer("concat_channels", [x, y])
        assert cat.shape == (1, 4, 3, 3)
        bn = BatchNorm(2)
        out = primitive_layer("batch_norm", [x], params=bn, training=True)
        assert out.shape == x.shape

    def test_unknown_kind(self, rng):
        from guidepth import ConfigurationError

        with pytest.raises(ConfigurationError):
            primitive_layer("pool", [Tensor(rng.normal(size=(1, 1, 2, 2)))])


class TestInitializers:
    def test_glorot_bound(self, rng):
        p = init_conv(rng, 8, 16, 3)
        bound = np.sqrt(6.0 / (8 * 9 + 16 * 9))
        assert np.abs(p.weights.data).max() <= bound
        assert p.padding == 1 and p.bias.shape == (1, 16, 1, 1)
        np.testing.assert_array_equal(p.bias.data, 0.0)

    def test_init_is_seeded(self):
        a = init_conv(substream(3, "w"), 2, 2, 3)
        b = init_conv(substream(3, "w"), 2, 2, 3)
        np.testing.assert_array_equal(a.weights.data, b.weights.data)
