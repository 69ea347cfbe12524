import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrcae import conv_ops
from mrcae.conv_ops import C0_STENCIL, D0_STENCIL, ConvKernel, DeconvKernel
from mrcae.errors import ShapeError

from oracles import central_diff, naive_conv, naive_deconv, naive_window_mean, rel_err

BUMP = np.array([[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]])


def _rand_conv(rng, o, c):
    return ConvKernel(rng.uniform(-1, 1, (o, c, 3, 3)), rng.uniform(-1, 1, o))


def _rand_deconv(rng, c, o):
    return DeconvKernel(rng.uniform(-1, 1, (c, o, 3, 3)), rng.uniform(-1, 1, o))


class TestConvForward:
    def test_identity_center_kernel_decimates(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 1, 7, 9))
        k = ConvKernel(C0_STENCIL[None, None], np.zeros(1))
        out = conv_ops.conv2d_forward(x, k)
        np.testing.assert_array_equal(out, x[:, :, 1::2, 1::2])

    def test_constant_input_all_ones_kernel(self):
        x = np.full((1, 1, 7, 7), 1.5)
        out = conv_ops.conv2d_forward(x, ConvKernel(np.ones((1, 1, 3, 3)), np.zeros(1)))
        assert out.shape == (1, 1, 3, 3)
        np.testing.assert_allclose(out, 13.5, rtol=0, atol=1e-14)

    def test_3x3_field_with_bilinear_stencil(self):
        x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
        k = ConvKernel(D0_STENCIL[None, None], np.zeros(1))
        expected = naive_conv(x, k.weight, k.bias)
        assert expected.shape == (1, 1, 1, 1)
        np.testing.assert_allclose(conv_ops.conv2d_forward(x, k), expected, rtol=1e-15)
        # hand value: corners 0.25*(1+3+7+9) + edges 0.5*(2+4+6+8) + centre 5
        assert expected[0, 0, 0, 0] == pytest.approx(20.0)

    @pytest.mark.parametrize("shape", [(1, 1, 7, 7), (2, 3, 5, 9), (3, 2, 15, 7)])
    def test_matches_naive_oracle(self, shape):
        rng = np.random.default_rng(1)
        x = rng.normal(size=shape)
        k = _rand_conv(rng, 2, shape[1])
        np.testing.assert_allclose(conv_ops.conv2d_forward(x, k), naive_conv(x, k.weight, k.bias), rtol=1e-13, atol=1e-13)

    @pytest.mark.parametrize("hw", [(6, 7), (7, 8), (1, 7), (2, 2)])
    def test_bad_spatial_dims(self, hw):
        x = np.zeros((1, 1, *hw))
        with pytest.raises(ShapeError):
            conv_ops.conv2d_forward(x, ConvKernel(np.zeros((1, 1, 3, 3)), np.zeros(1)))

    def test_shape_chain(self):
        x = np.zeros((1, 1, 127, 63))
        k = ConvKernel(np.zeros((1, 1, 3, 3)), np.zeros(1))
        shapes = []
        while x.shape[2] >= 3 and x.shape[3] >= 3:
            x = conv_ops.conv2d_forward(x, k)
            shapes.append(x.shape[2:])
        assert shapes == [(63, 31), (31, 15), (15, 7), (7, 3), (3, 1)]


class TestConvBackward:
    def test_zero_grad(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 2, 7, 7))
        k = _rand_conv(rng, 3, 2)
        gx, gw, gb = conv_ops.conv2d_backward(x, k, np.zeros((2, 3, 3, 3)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_locality(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 1, 9, 9))
        k = _rand_conv(rng, 1, 1)
        g = np.zeros((1, 1, 4, 4))
        g[0, 0, 1, 2] = 1.0
        gx, _, gb = conv_ops.conv2d_backward(x, k, g)
        support = np.argwhere(gx[0, 0] != 0)
        assert support[:, 0].min() >= 2 and support[:, 0].max() <= 4
        assert support[:, 1].min() >= 4 and support[:, 1].max() <= 6
        np.testing.assert_array_equal(gx[0, 0, 2:5, 4:7], k.weight[0, 0])
        assert gb[0] == 1.0

    def test_finite_differences(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, (2, 2, 7, 5))
        k = _rand_conv(rng, 3, 2)
        probe = rng.normal(size=(2, 3, 3, 2))

        def f():
            return float(np.sum(conv_ops.conv2d_forward(x, k) * probe))

        gx, gw, gb = conv_ops.conv2d_backward(x, k, probe)
        assert rel_err(gx, central_diff(f, x)) <= 1e-6
        assert rel_err(gw, central_diff(f, k.weight)) <= 1e-6
        assert rel_err(gb, central_diff(f, k.bias)) <= 1e-6

    def test_grad_shape_mismatch(self):
        x = np.zeros((1, 1, 7, 7))
        with pytest.raises(ShapeError):
            conv_ops.conv2d_backward(x, ConvKernel(np.zeros((1, 1, 3, 3)), np.zeros(1)), np.zeros((1, 1, 4, 4)))


class TestDeconv:
    def test_impulse_gives_bilinear_bump(self):
        x = np.zeros((1, 1, 3, 3))
        x[0, 0, 1, 1] = 1.0
        out = conv_ops.deconv2d_forward(x, DeconvKernel(D0_STENCIL[None, None], np.zeros(1)))
        assert out.shape == (1, 1, 7, 7)
        expected = np.zeros((7, 7))
        expected[2:5, 2:5] = BUMP
        np.testing.assert_array_equal(out[0, 0], expected)

    def test_zero_input(self):
        out = conv_ops.deconv2d_forward(np.zeros((2, 1, 4, 3)), DeconvKernel(np.ones((1, 2, 3, 3)), np.zeros(2)))
        assert out.shape == (2, 2, 9, 7)
        assert not out.any()

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 3, 4, 3))
        k = _rand_deconv(rng, 3, 2)
        np.testing.assert_allclose(conv_ops.deconv2d_forward(x, k), naive_deconv(x, k.weight, k.bias), rtol=1e-13, atol=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_adjoint_of_conv(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.uniform(-1, 1, (3, 2, 3, 3))
        x = rng.normal(size=(2, 2, 9, 7))
        y = rng.normal(size=(2, 3, 4, 3))
        lhs = np.sum(conv_ops.conv2d_forward(x, ConvKernel(w, np.zeros(3))) * y)
        rhs = np.sum(x * conv_ops.deconv2d_forward(y, DeconvKernel(w, np.zeros(2))))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_zero_grad(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, 2, 3, 3))
        gx, gw, gb = conv_ops.deconv2d_backward(x, _rand_deconv(rng, 2, 1), np.zeros((1, 1, 7, 7)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, (2, 2, 3, 2))
        k = _rand_deconv(rng, 2, 3)
        probe = rng.normal(size=(2, 3, 7, 5))

        def f():
            return float(np.sum(conv_ops.deconv2d_forward(x, k) * probe))

        gx, gw, gb = conv_ops.deconv2d_backward(x, k, probe)
        assert rel_err(gx, central_diff(f, x)) <= 1e-6
        assert rel_err(gw, central_diff(f, k.weight)) <= 1e-6
        assert rel_err(gb, central_diff(f, k.bias)) <= 1e-6

    def test_input_grad_is_conv_with_same_weights(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 2, 3, 4))
        k = _rand_deconv(rng, 2, 3)
        g = rng.normal(size=(2, 3, 7, 9))
        gx, _, _ = conv_ops.deconv2d_backward(x, k, g)
        np.testing.assert_allclose(gx, conv_ops.conv2d_forward(g, ConvKernel(k.weight, np.zeros(2))), rtol=1e-13, atol=1e-13)


class TestFixedOperators:
    def test_upsample_of_single_value(self):
        out = conv_ops.bilinear_upsample(np.full((1, 1, 1, 1), 2.0))
        np.testing.assert_array_equal(out[0, 0], 2.0 * BUMP)

    def test_upsample_constant_interior_and_nodes(self):
        c = 3.25
        out = conv_ops.bilinear_upsample(np.full((2, 1, 5, 4), c))
        np.testing.assert_array_equal(out[:, :, 1:-1, 1:-1], c)
        np.testing.assert_array_equal(out[:, :, 1::2, 1::2], c)

    def test_upsample_is_fixed_bilinear_deconv(self):
        x = np.random.default_rng(9).normal(size=(3, 1, 5, 6))
        ref = conv_ops.deconv2d_forward(x, DeconvKernel(D0_STENCIL[None, None], np.zeros(1)))
        np.testing.assert_array_equal(conv_ops.bilinear_upsample(x), ref)

    def test_upsample_rejects_channels(self):
        with pytest.raises(ShapeError):
            conv_ops.bilinear_upsample(np.zeros((1, 2, 3, 3)))

    @given(arrays(np.float64, st.tuples(st.integers(1, 2), st.just(1), st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-1e6, 1e6)))
    @settings(max_examples=60, deadline=None)
    def test_decimate_inverts_upsample(self, x):
        np.testing.assert_array_equal(conv_ops.decimate(conv_ops.bilinear_upsample(x)), x)

    def test_decimate_index_arithmetic(self):
        i, j = np.meshgrid(np.arange(7), np.arange(7), indexing="ij")
        f = (10.0 * i + j)[None, None]
        expected = [[11, 13, 15], [31, 33, 35], [51, 53, 55]]
        np.testing.assert_array_equal(conv_ops.decimate(f)[0, 0], expected)

    def test_decimate_equals_noise_free_c0(self):
        x = np.random.default_rng(10).normal(size=(4, 1, 15, 7))
        np.testing.assert_array_equal(conv_ops.conv2d_forward(x, ConvKernel(C0_STENCIL[None, None], np.zeros(1))), conv_ops.decimate(x))

    def test_decimate_bad_shape(self):
        with pytest.raises(ShapeError):
            conv_ops.decimate(np.zeros((1, 1, 8, 7)))

    def test_local_average(self):
        np.testing.assert_array_equal(conv_ops.local_average_downsample(np.full((7, 5), 2.5)), 2.5)
        assert conv_ops.local_average_downsample(np.arange(9.0).reshape(3, 3))[0, 0] == 4.0
        f = np.random.default_rng(11).normal(size=(7, 7))
        out = conv_ops.local_average_downsample(f)
        assert out.shape == (3, 3)
        np.testing.assert_array_equal(out, naive_window_mean(f))
        with pytest.raises(ShapeError):
            conv_ops.local_average_downsample(np.zeros((6, 7)))


class TestRelu:
    def test_values(self):
        assert not conv_ops.relu(-np.arange(1.0, 5.0)).any()
        x = np.arange(1.0, 5.0)
        np.testing.assert_array_equal(conv_ops.relu(x), x)

    def test_gradient(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(-1, 1, 50)
        x = x[np.abs(x) > 1e-3]
        probe = rng.normal(size=x.shape)
        g = conv_ops.relu_backward(x, probe)
        fd = central_diff(lambda: float(np.sum(conv_ops.relu(x) * probe)), x)
        assert rel_err(g, fd) <= 1e-6
