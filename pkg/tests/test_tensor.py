import unittest
from unittest import mock

import numpy as np
from numpy.testing import assert_array_equal

from errors import ShapeError
from tensor import (
    BitPackedMatrix,
    binary_gemm,
    col2im,
    conv_output_size,
    dense_gemm,
    im2col,
    sign_binarize,
    sign_values,
    xnor_popcount_dot,
)


def direct_conv(x, w, stride, padding):
    """Reference convolution: x (B, H, W, C), w (O, C, k, k) -> (B, oh, ow, O)."""
    k = w.shape[-1]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    out_h = (xp.shape[1] - k) // stride + 1
    out_w = (xp.shape[2] - k) // stride + 1
    out = np.zeros((x.shape[0], out_h, out_w, w.shape[0]))
    filters = w.transpose(0, 2, 3, 1)  # (O, k, k, C)
    for y in range(out_h):
        for x_ in range(out_w):
            patch = xp[:, y * stride:y * stride + k, x_ * stride:x_ * stride + k, :]
            out[:, y, x_, :] = np.einsum("bijc,oijc->bo", patch, filters)
    return out


class TestPackedDot(unittest.TestCase):
    def test_small_example(self):
        a = sign_binarize(np.array([1, -1, 1]))
        b = sign_binarize(np.array([1, 1, 1]))
        self.assertEqual(xnor_popcount_dot(a, b), 1)

    def test_zero_binarizes_to_plus_one(self):
        assert_array_equal(sign_binarize(np.array([0.0, -0.0, -1e-9])).unpack(), [[1, 1, -1]])
        assert_array_equal(sign_values(np.array([0.0, -2.0])), [1.0, -1.0])

    def test_length_mismatch(self):
        with self.assertRaises(ShapeError):
            xnor_popcount_dot(sign_binarize(np.ones(3)), sign_binarize(np.ones(4)))

    def test_nonzero_padding_rejected(self):
        words = np.array([[np.uint64(1 << 5)]], dtype=np.uint64)
        with self.assertRaises(ShapeError):
            BitPackedMatrix(1, 3, words)

    def test_unpack(self):
        signs = np.where(np.random.default_rng(0).random((4, 130)) < 0.5, -1, 1)
        assert_array_equal(BitPackedMatrix.from_signs(signs).unpack(), signs)


class TestBinaryGemm(unittest.TestCase):
    def test_matches_integer_product(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            m, k, n = rng.integers(1, 257, size=3)
            a = np.where(rng.random((m, k)) < 0.5, -1.0, 1.0)
            b = np.where(rng.random((n, k)) < 0.5, -1.0, 1.0)
            expected = (a @ b.T).astype(np.int64)
            got = binary_gemm(BitPackedMatrix.from_signs(a), BitPackedMatrix.from_signs(b))
            assert_array_equal(got, expected)

    def test_inner_dimension_mismatch(self):
        with self.assertRaises(ShapeError):
            binary_gemm(sign_binarize(np.ones((2, 5))), sign_binarize(np.ones((2, 6))))

    def test_threads_give_identical_result(self):
        rng = np.random.default_rng(3)
        a = sign_binarize(rng.standard_normal((300, 200)))
        b = sign_binarize(rng.standard_normal((50, 200)))
        with mock.patch("tensor.BLOCK_WORDS", 64):
            single = binary_gemm(a, b, threads=1)
            threaded = binary_gemm(a, b, threads=4)
        assert_array_equal(single, threaded)
        assert_array_equal(single, binary_gemm(a, b))

    def test_dense_gemm_shapes(self):
        self.assertEqual(dense_gemm(np.ones((2, 3)), np.ones((3, 4))).shape, (2, 4))
        with self.assertRaises(ShapeError):
            dense_gemm(np.ones((2, 3)), np.ones((4, 4)))


class TestIm2col(unittest.TestCase):
    def test_matches_direct_convolution(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            kernel = int(rng.choice([1, 3, 5]))
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, kernel // 2 + 1))
            height, width = (int(v) for v in rng.integers(kernel, kernel + 6, size=2))
            channels, out = (int(v) for v in rng.integers(1, 5, size=2))
            x = rng.integers(-3, 4, size=(2, height, width, channels)).astype(np.float64)
            w = rng.integers(-2, 3, size=(out, channels, kernel, kernel)).astype(np.float64)
            cols = im2col(x, kernel, stride, padding)
            out_h = conv_output_size(height, kernel, stride, padding)
            out_w = conv_output_size(width, kernel, stride, padding)
            lowered = (cols @ w.reshape(out, -1).T).reshape(2, out_h, out_w, out)
            assert_array_equal(lowered, direct_conv(x, w, stride, padding))

    def test_col2im_is_adjoint(self):
        rng = np.random.default_rng(5)
        x = rng.integers(-3, 4, size=(2, 6, 5, 3)).astype(np.float64)
        cols = im2col(x, 3, 1, 1)
        y = rng.integers(-3, 4, size=cols.shape).astype(np.float64)
        back = col2im(y, x.shape, 3, 1, 1)
        self.assertEqual(float((cols * y).sum()), float((x * back).sum()))

    def test_pad_value(self):
        cols = im2col(np.ones((1, 1, 1)), 3, padding=1, pad_value=-1.0)
        assert_array_equal(cols, [[-1, -1, -1, -1, 1, -1, -1, -1, -1]])

    def test_kernel_larger_than_input(self):
        with self.assertRaises(ShapeError):
            im2col(np.ones((2, 2, 1)), 5)


if __name__ == "__main__":
    unittest.main()
