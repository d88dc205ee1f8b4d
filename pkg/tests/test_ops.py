import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import uniform
from ppmn import ops
from ppmn.errors import ShapeError


def conv_case(rng, n=2, c=3, h=9, w=8, oc=4, k=3, stride=1, rate=1, pad=None, dtype=np.float32):
    pad = rate * (k - 1) // 2 if pad is None else pad
    spec = ops.ConvSpec(oc, (k, k), (stride, stride), (pad, pad), rate)
    return uniform(rng, (n, c, h, w), dtype), uniform(rng, (oc, c, k, k), dtype), uniform(rng, (oc,), dtype), spec


def central_diff(f, x, idx, eps):
    old = x[idx]
    x[idx] = old + eps
    fp = f()
    x[idx] = old - eps
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * eps)


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


class TestConvSpec:
    @pytest.mark.parametrize("rate,extent", [(1, 3), (2, 5), (3, 7)])
    def test_field_of_view(self, rate, extent):
        assert ops.ConvSpec(1, 3, rate=rate).effective_kernel == (extent, extent)

    def test_rejects_bad_values(self):
        with pytest.raises(ShapeError):
            ops.ConvSpec(1, 3, rate=0)
        with pytest.raises(ShapeError):
            ops.ConvSpec(1, (3, 0))

    @pytest.mark.parametrize("rate", [1, 2, 3])
    def test_same_padding_keeps_extent(self, rate):
        spec = ops.ConvSpec(1, 3, 1, ops.same_padding(3, rate), rate)
        assert spec.output_size(10, 5) == (10, 5)


class TestConvForward:
    def test_identity_kernel(self, kernels):
        x = np.ones((1, 1, 3, 3), np.float32)
        out = ops.conv2d_forward(x, np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32),
                                 ops.ConvSpec(1, 1), kernels=kernels)
        np.testing.assert_array_equal(out, x)

    def test_rate2_touches_nine_samples(self, kernels):
        # a 3x3 kernel at rate 2 over a 5x5 grid reads rows/cols {0, 2, 4}
        for pos in itertools.product(range(5), range(5)):
            x = np.zeros((1, 1, 5, 5), np.float32)
            x[0, 0][pos] = 1
            out = ops.conv2d_forward(x, np.ones((1, 1, 3, 3), np.float32), None,
                                     ops.ConvSpec(1, 3, rate=2), kernels=kernels)
            assert out.shape == (1, 1, 1, 1)
            expected = 1.0 if pos[0] % 2 == 0 and pos[1] % 2 == 0 else 0.0
            assert out[0, 0, 0, 0] == expected

    @pytest.mark.parametrize("rate", [1, 2, 3])
    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("k", [1, 3])
    def test_matches_reference(self, kernels, rng, rate, stride, k):
        x, w, b, spec = conv_case(rng, k=k, stride=stride, rate=rate)
        fast = ops.conv2d_forward(x, w, b, spec, kernels=kernels)
        np.testing.assert_allclose(fast, ops.conv2d_reference(x, w, b, spec), atol=1e-5, rtol=0)

    def test_zero_kernel_gives_bias(self, kernels, rng):
        x, w, b, spec = conv_case(rng)
        out = ops.conv2d_forward(x, np.zeros_like(w), b, spec, kernels=kernels)
        np.testing.assert_array_equal(out, np.broadcast_to(b[None, :, None, None], out.shape))

    def test_channel_mismatch_names_both_shapes(self, rng):
        x, w, b, spec = conv_case(rng)
        with pytest.raises(ShapeError, match=r"\(2, 3, 9, 8\).*\(4, 2, 3, 3\)"):
            ops.conv2d_forward(x, w[:, :2], b, spec)

    def test_zero_sized_output_rejected(self, rng):
        with pytest.raises(ShapeError, match="zero-sized"):
            ops.conv2d_forward(uniform(rng, (1, 1, 4, 4)), uniform(rng, (1, 1, 3, 3)), None,
                               ops.ConvSpec(1, 3, rate=3))

    def test_float64_preserved(self, rng):
        x, w, b, spec = conv_case(rng, dtype=np.float64)
        assert ops.conv2d_forward(x, w, b, spec).dtype == np.float64


class TestReference:
    def test_hand_computed_2x2(self):
        x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
        w = np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2)
        out = ops.conv2d_reference(x, w, np.array([0.5], np.float32), ops.ConvSpec(1, 2))
        # top-left: 0*1 + 1*2 + 3*3 + 4*4 = 27
        np.testing.assert_array_equal(out[0, 0], [[27.5, 37.5], [57.5, 67.5]])

    def test_deterministic(self, rng):
        x, w, b, spec = conv_case(rng, rate=2)
        a = ops.conv2d_reference(x, w, b, spec)
        assert a.tobytes() == ops.conv2d_reference(x, w, b, spec).tobytes()


class TestDilateKernel:
    def test_rate1_unchanged(self, rng):
        w = uniform(rng, (2, 3, 3, 3))
        np.testing.assert_array_equal(ops.dilate_kernel(w, 1), w)

    def test_rate2_inserts_16_zeros(self, rng):
        w = uniform(rng, (1, 1, 3, 3)) + 2  # strictly nonzero taps
        d = ops.dilate_kernel(w, 2)
        assert d.shape == (1, 1, 5, 5)
        assert np.count_nonzero(d == 0) == 16
        np.testing.assert_array_equal(d[0, 0, ::2, ::2], w[0, 0])

    @pytest.mark.parametrize("rate", [2, 3])
    def test_equivalent_to_atrous(self, kernels, rng, rate):
        x, w, b, spec = conv_case(rng, h=15, w=13, rate=rate)
        plain = ops.ConvSpec(spec.out_channels, spec.effective_kernel, spec.stride, spec.padding, 1)
        np.testing.assert_allclose(
            ops.conv2d_forward(x, w, b, spec, kernels=kernels),
            ops.conv2d_forward(x, ops.dilate_kernel(w, rate), b, plain, kernels=kernels),
            atol=1e-6, rtol=0,
        )


class TestConvBackward:
    def test_zero_grad(self, kernels, rng):
        x, w, b, spec = conv_case(rng, rate=2)
        out = ops.conv2d_forward(x, w, b, spec, kernels=kernels)
        for g in ops.conv2d_backward(x, w, spec, np.zeros_like(out), kernels=kernels):
            assert not np.any(g)

    def test_identity_adjoint(self, kernels, rng):
        x = uniform(rng, (2, 1, 4, 5))
        g = uniform(rng, (2, 1, 4, 5))
        gx, _, _ = ops.conv2d_backward(x, np.ones((1, 1, 1, 1), np.float32), ops.ConvSpec(1, 1), g,
                                       kernels=kernels)
        np.testing.assert_array_equal(gx, g)

    def test_shape_mismatch(self, rng):
        x, w, b, spec = conv_case(rng)
        with pytest.raises(ShapeError):
            ops.conv2d_backward(x, w, spec, np.zeros((1, 1, 1, 1), np.float32))

    @pytest.mark.parametrize("rate,stride", [(1, 1), (2, 2), (3, 1)])
    def test_adjoint_identity(self, kernels, rng, rate, stride):
        x, w, _, spec = conv_case(rng, h=12, w=10, rate=rate, stride=stride, dtype=np.float64)
        y = ops.conv2d_forward(x, w, None, spec, kernels=kernels)
        u = rng.standard_normal(y.shape)
        gx, gw, gb = ops.conv2d_backward(x, w, spec, u, kernels=kernels)
        # <conv(x, w), u> is bilinear: equals <x, gx> and <w, gw>
        lhs = np.vdot(y, u)
        np.testing.assert_allclose(np.vdot(x, gx), lhs, rtol=1e-10)
        np.testing.assert_allclose(np.vdot(w, gw), lhs, rtol=1e-10)
        np.testing.assert_allclose(gb, u.sum(axis=(0, 2, 3)), rtol=1e-10)

    def test_finite_differences_rate3_float32(self, kernels, rng):
        x, w, b, spec = conv_case(rng, n=1, c=2, h=9, w=8, oc=3, rate=3)
        u = uniform(rng, ops.conv2d_forward(x, w, b, spec).shape)
        loss = lambda: float(np.sum(ops.conv2d_forward(x, w, b, spec, kernels=kernels).astype(np.float64) * u))
        gx, gw, gb = ops.conv2d_backward(x, w, spec, u, kernels=kernels)
        eps = 1e-2  # 1e-2 times the unit scale of the inputs
        worst = 0.0
        for arr, grad in ((x, gx), (w, gw), (b, gb)):
            for flat in rng.choice(arr.size, size=min(arr.size, 30), replace=False):
                idx = np.unravel_index(flat, arr.shape)
                worst = max(worst, rel_err(float(grad[idx]), central_diff(loss, arr, idx, eps)))
        assert worst <= 1e-3


class TestMaxPool:
    def test_constant(self, kernels):
        out, _ = ops.maxpool_forward(np.full((1, 2, 4, 6), 0.7, np.float32), kernels=kernels)
        np.testing.assert_array_equal(out, np.full((1, 2, 2, 3), 0.7, np.float32))

    def test_single_window(self, kernels):
        x = np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2)
        out, idx = ops.maxpool_forward(x, kernels=kernels)
        assert out.item() == 4
        g = ops.maxpool_backward(idx, np.ones_like(out), kernels=kernels)
        np.testing.assert_array_equal(g[0, 0], [[0, 0], [0, 1]])

    def test_floor_extent(self, kernels, rng):
        out, _ = ops.maxpool_forward(uniform(rng, (1, 1, 10, 5)), kernels=kernels)
        assert out.shape == (1, 1, 5, 2)

    def test_ties_pick_first(self, kernels):
        out, idx = ops.maxpool_forward(np.zeros((1, 1, 2, 2), np.float32), kernels=kernels)
        assert idx.indices.item() == 0

    @pytest.mark.parametrize("window,stride", [((2, 2), (2, 2)), ((3, 3), (2, 2)), ((2, 3), (1, 2))])
    def test_brute_force(self, kernels, rng, window, stride):
        x = uniform(rng, (2, 3, 9, 7))
        out, _ = ops.maxpool_forward(x, window, stride, kernels=kernels)
        for b, c, i, j in itertools.product(*(range(s) for s in out.shape)):
            win = x[b, c, i * stride[0]:i * stride[0] + window[0], j * stride[1]:j * stride[1] + window[1]]
            assert out[b, c, i, j] == win.max()

    def test_window_too_large(self):
        with pytest.raises(ShapeError):
            ops.maxpool_forward(np.zeros((1, 1, 1, 5), np.float32))

    def test_backward_zero(self, kernels, rng):
        out, idx = ops.maxpool_forward(uniform(rng, (1, 2, 6, 6)), kernels=kernels)
        assert not ops.maxpool_backward(idx, np.zeros_like(out), kernels=kernels).any()

    def test_backward_mass_and_fd(self, kernels, rng):
        x = rng.permutation(2 * 3 * 8 * 6).astype(np.float32).reshape(2, 3, 8, 6) / 100  # distinct
        out, idx = ops.maxpool_forward(x, (3, 3), (2, 2), kernels=kernels)
        u = uniform(rng, out.shape)
        g = ops.maxpool_backward(idx, u, kernels=kernels)
        assert np.isclose(g.sum(), u.sum(), atol=1e-5)
        loss = lambda: float(np.sum(ops.maxpool_forward(x, (3, 3), (2, 2), kernels=kernels)[0] * u))
        for flat in rng.choice(x.size, size=40, replace=False):
            idx_ = np.unravel_index(flat, x.shape)
            assert abs(central_diff(loss, x, idx_, 1e-3) - g[idx_]) <= 1e-3 * max(1, abs(g[idx_]))


class TestDense:
    def test_relu(self):
        np.testing.assert_array_equal(ops.relu_forward(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
        np.testing.assert_array_equal(ops.relu_backward(np.array([-1.0, 0.0, 2.0]), np.ones(3)), [0, 0, 1])

    def test_concat_order_and_channels(self, rng):
        a, b = uniform(rng, (1, 1024, 10, 5)), uniform(rng, (1, 1024, 10, 5))
        c = ops.concat_channels(a, b)
        assert c.shape == (1, 2048, 10, 5)
        np.testing.assert_array_equal(c[:, :1024], a)
        np.testing.assert_array_equal(c[:, 1024:], b)
        ga, gb = ops.concat_backward(c, [1024, 1024])
        np.testing.assert_array_equal(ga, a)

    def test_concat_mismatch(self, rng):
        with pytest.raises(ShapeError):
            ops.concat_channels(uniform(rng, (1, 2, 4, 4)), uniform(rng, (1, 2, 4, 5)))

    def test_fc_finite_differences(self, rng):
        x = uniform(rng, (3, 2, 2, 2), np.float64)
        w = uniform(rng, (4, 8), np.float64)
        b = uniform(rng, (4,), np.float64)
        u = rng.standard_normal((3, 4, 1, 1))
        loss = lambda: float(np.sum(ops.fc_forward(x, w, b) * u))
        gx, gw, gb = ops.fc_backward(x, w, u)
        for arr, grad in ((x, gx), (w, gw), (b, gb)):
            for flat in range(arr.size):
                idx = np.unravel_index(flat, arr.shape)
                assert rel_err(float(grad[idx]), central_diff(loss, arr, idx, 1e-6)) <= 1e-4

    def test_fc_shape_error(self, rng):
        with pytest.raises(ShapeError):
            ops.fc_forward(uniform(rng, (1, 2, 2, 2)), np.zeros((3, 7), np.float32), np.zeros(3, np.float32))

    def test_softmax_pair(self):
        p = ops.softmax_pair_forward(np.array([[[[0.0]], [[0.0]]], [[[0.0]], [[20.0]]]]))
        np.testing.assert_allclose(p[0, :, 0, 0], [0.5, 0.5])
        assert p[1, 1, 0, 0] > 0.999999
        np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    k=st.sampled_from([1, 3]),
    rate=st.sampled_from([1, 2, 3]),
    stride=st.sampled_from([1, 2]),
    h=st.integers(7, 12),
    w=st.integers(7, 12),
)
def test_property_oracle_equivalence(seed, k, rate, stride, h, w):
    rng = np.random.default_rng(seed)
    x, wt, b, spec = conv_case(rng, n=1, c=2, h=h, w=w, oc=3, k=k, stride=stride, rate=rate)
    np.testing.assert_allclose(ops.conv2d_forward(x, wt, b, spec), ops.conv2d_reference(x, wt, b, spec),
                               atol=1e-5, rtol=0)


def test_backends_agree_bitwise_on_im2col(rng):
    if len(ops.available_backends()) < 2:
        pytest.skip("compiled backend not built")
    x, _, _, spec = conv_case(rng, rate=2, stride=2)
    a = ops.im2col(x, spec, ops.get_backend("cython"))
    b = ops.im2col(x, spec, ops.get_backend("python"))
    np.testing.assert_array_equal(a, b)
