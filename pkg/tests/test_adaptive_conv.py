import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import f64, loop_conv2d
from distill_inpaint import ops
from distill_inpaint.adaptive_conv import (AdaptiveConv2d, adaptive_conv, bilinear_sample,
                                           generate_kernels_offsets, sample_bilinear)
from distill_inpaint.tensor import ShapeError, Tensor, backward, parameter


def loop_bilinear(img, y, x):
    """Independent bilinear read of a 2-d array with zero outside."""
    h, w = img.shape
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    out = 0.0
    for yy, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
        for xx, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
            if 0 <= yy < h and 0 <= xx < w:
                out += wy * wx * img[yy, xx]
    return out


def loop_adaptive(x, v, off, w):
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    r = k // 2
    y = np.zeros((cout, h, wd))
    for i in range(h):
        for j in range(wd):
            for t in range(k * k):
                ky, kx = divmod(t, k)
                py = i + ky - r + off[2 * t, i, j]
                px = j + kx - r + off[2 * t + 1, i, j]
                for ci in range(cin):
                    s = loop_bilinear(x[ci], py, px)
                    y[:, i, j] += v[t, i, j] * w[:, ci, ky, kx] * s
    return y


class TestBilinear:
    def test_integer_position_exact(self, rng):
        x = rng.normal(size=(2, 4, 5))
        assert bilinear_sample(x, 2, 3, 1) == x[1, 2, 3]

    def test_ramp(self):
        x = np.tile(np.arange(5.0), (1, 3, 1))
        assert bilinear_sample(x, 0, 1.5, 0) == pytest.approx(1.5)

    def test_far_outside_is_zero(self, rng):
        assert bilinear_sample(rng.normal(size=(1, 4, 4)), -5, -5, 0) == 0.0

    def test_partial_outside(self):
        x = np.ones((1, 3, 3))
        # half of the interpolation weight falls off the left edge
        assert bilinear_sample(x, 1.0, -0.5, 0) == pytest.approx(0.5)

    def test_matches_loop(self, rng):
        x = rng.normal(size=(2, 5, 6))
        py, px = rng.uniform(-1.5, 5.5, 30), rng.uniform(-1.5, 6.5, 30)
        got = sample_bilinear(f64(x, False), f64(py, False), f64(px, False)).data
        want = np.array([[loop_bilinear(x[c], a, b) for a, b in zip(py, px)] for c in range(2)])
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_position_gradient(self):
        x = np.tile(np.arange(5.0), (1, 3, 1))
        px = parameter([1.3], dtype=np.float64)
        backward(ops.sum(sample_bilinear(f64(x, False), Tensor([1.0], dtype=np.float64), px)))
        np.testing.assert_allclose(px.grad, [1.0])


class TestAdaptiveConv:
    def test_identity_k1(self, rng):
        x = rng.normal(size=(3, 4, 5))
        w = np.eye(3).reshape(3, 3, 1, 1)
        y = adaptive_conv(f64(x), np.ones((1, 4, 5)), np.zeros((2, 4, 5)), f64(w))
        np.testing.assert_array_equal(y.data, x)

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_reduces_to_conv(self, rng, k):
        x = rng.normal(size=(2, 7, 6))
        w = rng.normal(size=(3, 2, k, k))
        y = adaptive_conv(f64(x), np.ones((k * k, 7, 6)), np.zeros((2 * k * k, 7, 6)), f64(w))
        np.testing.assert_allclose(y.data, loop_conv2d(x, w, np.zeros(3), 1, k // 2), atol=1e-10)

    def test_matches_loop_oracle(self, rng):
        x = rng.normal(size=(2, 5, 4))
        v = rng.uniform(0, 2, (9, 5, 4))
        off = rng.uniform(-2, 2, (18, 5, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        y = adaptive_conv(f64(x), f64(v), f64(off), f64(w))
        np.testing.assert_allclose(y.data, loop_adaptive(x, v, off, w), atol=1e-10)

    def test_integer_offset_shifts(self, rng):
        # K=1 with offset (0, +1) reads the right-hand neighbour
        x = rng.normal(size=(1, 3, 4))
        off = np.zeros((2, 3, 4))
        off[1] = 1
        y = adaptive_conv(f64(x), np.ones((1, 3, 4)), off, f64(np.ones((1, 1, 1, 1))))
        want = np.zeros_like(x)
        want[:, :, :-1] = x[:, :, 1:]
        np.testing.assert_allclose(y.data, want)

    def test_batched_equals_unbatched(self, rng):
        x = rng.normal(size=(2, 3, 5, 5))
        v = rng.uniform(0, 1, (2, 9, 5, 5))
        off = rng.normal(size=(2, 18, 5, 5))
        w = f64(rng.normal(size=(2, 3, 3, 3)))
        yb = adaptive_conv(f64(x), f64(v), f64(off), w).data
        for i in range(2):
            np.testing.assert_allclose(yb[i], adaptive_conv(f64(x[i]), f64(v[i]), f64(off[i]), w).data, atol=1e-12)

    def test_channel_permutation_invariance(self, rng):
        x = rng.normal(size=(4, 5, 5))
        v = rng.uniform(0, 1, (9, 5, 5))
        off = rng.normal(size=(18, 5, 5))
        w = rng.normal(size=(2, 4, 3, 3))
        perm = rng.permutation(4)
        y1 = adaptive_conv(f64(x), f64(v), f64(off), f64(w)).data
        y2 = adaptive_conv(f64(x[perm]), f64(v), f64(off), f64(w[:, perm])).data
        np.testing.assert_allclose(y1, y2, atol=1e-12)

    def test_locality_at_zero_offset(self, rng):
        x = rng.normal(size=(1, 8, 8))
        args = (np.ones((9, 8, 8)), np.zeros((18, 8, 8)), f64(rng.normal(size=(1, 1, 3, 3))))
        y1 = adaptive_conv(f64(x), *args).data
        x2 = x.copy()
        x2[0, 6, 6] += 10.0
        y2 = adaptive_conv(f64(x2), *args).data
        changed = np.argwhere(y1[0] != y2[0])
        assert len(changed) > 0
        assert np.all(np.abs(changed - [6, 6]).max(axis=1) <= 1)

    def test_offset_gradient_nonzero(self, rng):
        off = parameter(rng.uniform(0.2, 0.8, (18, 4, 4)), dtype=np.float64)
        y = adaptive_conv(f64(rng.normal(size=(2, 4, 4)), False), np.ones((9, 4, 4)), off,
                          f64(rng.normal(size=(2, 2, 3, 3)), False))
        backward(ops.sum(ops.mul(y, y)))
        assert np.abs(off.grad).max() > 0

    def test_shape_errors(self):
        x = Tensor(np.zeros((2, 4, 4)))
        with pytest.raises(ShapeError):
            adaptive_conv(x, np.ones((9, 4, 4)), np.zeros((9, 4, 4)), np.zeros((1, 2, 3, 3)))
        with pytest.raises(ShapeError):
            adaptive_conv(x, np.ones((9, 4, 4)), np.zeros((18, 4, 4)), np.zeros((1, 3, 3, 3)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 3]), st.integers(0, 2**32 - 1))
    def test_reduction_property(self, cin, cout, k, seed):
        r = np.random.default_rng(seed)
        x = r.normal(size=(cin, 5, 6))
        w = r.normal(size=(cout, cin, k, k))
        b = np.zeros(cout)
        y = adaptive_conv(f64(x), np.ones((k * k, 5, 6)), np.zeros((2 * k * k, 5, 6)), f64(w))
        np.testing.assert_allclose(y.data, ops.conv2d(f64(x), f64(w), f64(b), 1, k // 2).data, atol=1e-10)


class TestGenerators:
    def test_fresh_layer_is_plain_conv(self, rng):
        layer = AdaptiveConv2d(3, 4, rng)
        x = Tensor(rng.normal(size=(2, 3, 6, 6)).astype(np.float32))
        v, off = layer.generate(x)
        assert v.shape == (2, 9, 6, 6) and off.shape == (2, 18, 6, 6)
        np.testing.assert_array_equal(off.data, 0)
        np.testing.assert_allclose(v.data, 1.0, rtol=1e-6)
        conv = ops.conv2d(x, layer.weight, Tensor(np.zeros(4, np.float32)), 1, 1)
        np.testing.assert_allclose(layer(x).data, conv.data, atol=1e-5)

    def test_kernels_non_negative(self, rng):
        layer = AdaptiveConv2d(2, 2, rng)
        layer.kernel_gen.weight.data[:] = rng.normal(0, 3, layer.kernel_gen.weight.shape)
        v, _ = generate_kernels_offsets(Tensor(rng.normal(size=(2, 5, 5))), layer)
        assert v.data.min() >= 0

    def test_too_small_input(self, rng):
        with pytest.raises(ValueError):
            generate_kernels_offsets(Tensor(np.zeros((2, 2, 2))), AdaptiveConv2d(2, 2, rng))
