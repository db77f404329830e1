"""Operator correctness against independent oracles, pinned subgradient
conventions, and graph mechanics."""

import math
from fractions import Fraction

import numpy as np
import pytest

import gradcheck
from voxelmax import autodiff as ad
from voxelmax.autodiff import Tensor


# ---------------------------------------------------------------------------
# oracles


def conv2d_oracle(x, w, b=None, stride=1, padding=0):
    """Six explicit loops; no tensordot, no im2col."""
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for ni in range(n):
        for c in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ii in range(kh):
                        for jj in range(kw):
                            acc += float(
                                (xp[ni, :, i * stride + ii, j * stride + jj] * w[c, :, ii, jj]).sum()
                            )
                    out[ni, c, i, j] = acc + (b[c] if b is not None else 0.0)
    return out


def idft2_oracle(coeffs):
    """Direct O(N^2 M^2) double sum, independent of np.fft."""
    H, W = coeffs.shape
    out = np.zeros((H, W), dtype=np.complex128)
    for y in range(H):
        for x in range(W):
            acc = 0.0 + 0.0j
            for u in range(H):
                for v in range(W):
                    acc += coeffs[u, v] * np.exp(2j * np.pi * (u * y / H + v * x / W))
            out[y, x] = acc / (H * W)
    return out


def adaptive_pool_oracle(x, out_sizes):
    """Gather each output bin by exact fractional edges and average."""
    rank = len(out_sizes)
    lead = x.shape[: x.ndim - rank]
    extents = x.shape[x.ndim - rank:]
    out = np.zeros(lead + tuple(out_sizes))
    for idx in np.ndindex(tuple(out_sizes)):
        slices = []
        for i, e, s in zip(idx, extents, out_sizes):
            start = math.floor(Fraction(i * e, s))
            end = math.ceil(Fraction((i + 1) * e, s))
            slices.append(slice(start, end))
        region = x[(Ellipsis,) + tuple(slices)]
        out[(Ellipsis,) + idx] = region.reshape(lead + (-1,)).mean(axis=-1)
    return out


# ---------------------------------------------------------------------------
# forward correctness


class TestForwardOracles:
    def test_conv2d_matches_loop_oracle(self):
        rng = np.random.default_rng(11)
        for stride, padding, k in [(1, 0, 3), (2, 0, 3), (1, 1, 3), (2, 1, 2), (1, 0, 1)]:
            x = rng.standard_normal((2, 3, 8, 8))
            w = rng.standard_normal((4, 3, k, k))
            b = rng.standard_normal(4)
            got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
            np.testing.assert_allclose(got.data, conv2d_oracle(x, w, b, stride, padding),
                                       rtol=1e-12, atol=1e-12)

    def test_conv2d_without_bias(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        got = ad.conv2d(Tensor(x), Tensor(w))
        np.testing.assert_allclose(got.data, conv2d_oracle(x, w), rtol=1e-12, atol=1e-12)

    def test_inverse_fft2_matches_double_sum(self):
        rng = np.random.default_rng(5)
        for h, w in [(4, 4), (3, 5), (6, 2)]:
            c = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
            re, im = ad.inverse_fft2(Tensor(c.real), Tensor(c.imag))
            want = idft2_oracle(c)
            np.testing.assert_allclose(re.data, want.real, atol=1e-10)
            np.testing.assert_allclose(im.data, want.imag, atol=1e-10)

    def test_adaptive_pool_quadrants(self):
        x = np.arange(1, 17, dtype=np.float64).reshape(1, 4, 4)
        got = ad.adaptive_avg_pool(Tensor(x), (2, 2))
        np.testing.assert_allclose(got.data[0], [[3.5, 5.5], [11.5, 13.5]])

    def test_adaptive_pool_overlapping_bins(self):
        # 5 -> 2: bins [0,3) and [2,5) share index 2
        x = np.arange(5.0)[None, :]
        got = ad.adaptive_avg_pool(Tensor(x), (2,))
        np.testing.assert_allclose(got.data[0], [x[0, 0:3].mean(), x[0, 2:5].mean()])

    def test_adaptive_pool_matches_fraction_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(40):
            rank = int(rng.integers(1, 3))
            extents = tuple(int(rng.integers(1, 9)) for _ in range(rank))
            outs = tuple(int(rng.integers(1, e + 1)) for e in extents)
            x = rng.standard_normal((2,) + extents)
            got = ad.adaptive_avg_pool(Tensor(x), outs)
            np.testing.assert_allclose(got.data, adaptive_pool_oracle(x, outs), atol=1e-12)

    def test_adaptive_pool_preserves_mean_when_divisible(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((3, 8, 12))
        got = ad.adaptive_avg_pool(Tensor(x), (4, 6))
        np.testing.assert_allclose(got.data.mean(axis=(-2, -1)), x.mean(axis=(-2, -1)),
                                   atol=1e-12)

    def test_maxpool_forward(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        got = ad.maxpool2d(Tensor(x), kernel=2)
        np.testing.assert_allclose(got.data[0, 0], [[5.0, 7.0], [13.0, 15.0]])

    def test_maxpool_drops_remainder(self):
        x = np.arange(25.0).reshape(1, 1, 5, 5)
        got = ad.maxpool2d(Tensor(x), kernel=2)
        assert got.shape == (1, 1, 2, 2)
        np.testing.assert_allclose(got.data[0, 0], [[6.0, 8.0], [16.0, 18.0]])

    def test_bilinear_integer_grid_gathers_exactly(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 4, 5))
        gy, gx = np.meshgrid(np.arange(4.0), np.arange(5.0), indexing="ij")
        got = ad.bilinear_sample(Tensor(x), gy, gx)
        np.testing.assert_allclose(got.data, x, atol=1e-15)

    def test_bilinear_out_of_bounds_is_zero(self):
        x = np.ones((1, 3, 3))
        gy = np.array([[-5.0, 10.0]])
        gx = np.array([[-5.0, 10.0]])
        got = ad.bilinear_sample(Tensor(x), gy, gx)
        np.testing.assert_allclose(got.data, 0.0)

    def test_bilinear_midpoint_average(self):
        x = np.array([[[0.0, 2.0], [4.0, 6.0]]])
        got = ad.bilinear_sample(Tensor(x), np.array([[0.5]]), np.array([[0.5]]))
        np.testing.assert_allclose(got.data, [[[3.0]]])


# ---------------------------------------------------------------------------
# subgradient conventions


class TestKinkConventions:
    def test_relu_zero_gets_zero_gradient(self):
        x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        ad.tsum(ad.relu(x)).backward()
        np.testing.assert_allclose(x.grad, [0.0, 0.0, 1.0])

    def test_magnitude_zero_gets_zero_gradient(self):
        re = Tensor(np.array([0.0, 3.0]), requires_grad=True)
        im = Tensor(np.array([0.0, 4.0]), requires_grad=True)
        ad.tsum(ad.complex_magnitude(re, im)).backward()
        np.testing.assert_allclose(re.grad, [0.0, 3.0 / 5.0])
        np.testing.assert_allclose(im.grad, [0.0, 4.0 / 5.0])

    def test_maxpool_tie_routes_to_first_row_major(self):
        x = np.zeros((1, 1, 2, 2))
        x[0, 0] = [[7.0, 7.0], [7.0, 7.0]]
        t = Tensor(x, requires_grad=True)
        ad.tsum(ad.maxpool2d(t, kernel=2)).backward()
        np.testing.assert_allclose(t.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_maxpool_gradient_hits_argmax_only(self):
        x = np.array([[[[1.0, 9.0], [3.0, 2.0]]]])
        t = Tensor(x, requires_grad=True)
        ad.scale(ad.tsum(ad.maxpool2d(t, kernel=2)), 2.0).backward()
        np.testing.assert_allclose(t.grad[0, 0], [[0.0, 2.0], [0.0, 0.0]])


# ---------------------------------------------------------------------------
# graph mechanics


class TestGraphMechanics:
    def test_fanout_accumulates(self):
        x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        y = ad.add(x, x)
        ad.tsum(y).backward()
        np.testing.assert_allclose(x.grad, [2.0, 2.0])

    def test_square_via_mul(self):
        x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        ad.tsum(ad.mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, [6.0, -4.0])

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.relu(x).backward()

    def test_double_backward_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        out = ad.tsum(x)
        out.backward()
        with pytest.raises(RuntimeError, match="consumed"):
            out.backward()

    def test_frozen_graph_records_nothing(self):
        a = Tensor(np.ones((2, 2)))
        b = Tensor(np.ones((2, 2)))
        out = ad.add(a, b)
        assert not out.requires_grad
        assert out._parents == ()

    def test_unbroadcast_shapes_and_values(self):
        a = Tensor(np.ones((3, 1)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        ad.tsum(ad.add(a, b)).backward()
        np.testing.assert_allclose(a.grad, np.full((3, 1), 4.0))
        np.testing.assert_allclose(b.grad, np.full(4, 3.0))

    def test_concat_routes_gradient_segments(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        b = Tensor(np.zeros(3), requires_grad=True)
        out = ad.concat([a, b], axis=0)
        ad.dot(out, Tensor(np.arange(5.0))).backward()
        np.testing.assert_allclose(a.grad, [0.0, 1.0])
        np.testing.assert_allclose(b.grad, [2.0, 3.0, 4.0])

    def test_tuple_output_joint_backward(self):
        c = np.array([[1.0 + 2.0j, 0.5 - 1.0j], [-0.25 + 0.0j, 0.75 + 0.5j]])
        re = Tensor(c.real, requires_grad=True)
        im = Tensor(c.imag, requires_grad=True)
        yr, yi = ad.inverse_fft2(re, im)
        loss = ad.add(ad.tsum(yr), ad.tsum(yi))
        loss.backward()
        # d(sum re y)/dc + d(sum im y)/dc: only the DC coefficient sees sum(y)
        assert re.grad is not None and im.grad is not None
        np.testing.assert_allclose(re.grad[0, 0], 1.0, atol=1e-12)
        np.testing.assert_allclose(im.grad[0, 0], 1.0, atol=1e-12)

    def test_gradients_helper_fills_zeros_for_unused(self):
        x = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones(3), requires_grad=True)
        gx, gu = ad.gradients(ad.tsum(x), [x, unused])
        np.testing.assert_allclose(gx, [1.0, 1.0])
        np.testing.assert_allclose(gu, [0.0, 0.0, 0.0])

    def test_dunder_operators(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = Tensor(np.array([3.0, 4.0]), requires_grad=True)
        out = ad.tsum((a + b) * b - (-a))
        out.backward()
        np.testing.assert_allclose(a.grad, [4.0, 5.0])      # b + 1
        np.testing.assert_allclose(b.grad, [7.0, 10.0])     # a + 2b

    def test_nonfinite_output_raises(self):
        x = Tensor(np.array([1.0, 2.0]))
        with pytest.raises(FloatingPointError, match="scale"):
            ad.scale(x, float("inf"))

    def test_nonfinite_from_overflow_raises(self):
        big = Tensor(np.array([1e308]))
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            ad.mul(big, big)

    def test_unknown_operator(self):
        with pytest.raises(ValueError, match="unknown operator"):
            ad.forward_op("transmogrify", Tensor(np.ones(2)))


# ---------------------------------------------------------------------------
# finite differences (the acceptance suite reruns these at full volume)


@pytest.mark.parametrize("op", sorted(ad.OPS))
def test_operator_gradients(op):
    gradcheck.check_operator(op, n_cases=25, seed=101)
