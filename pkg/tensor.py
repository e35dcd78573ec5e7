# tensor.py
"""Dense float tensors and bit-packed {-1,+1} matrices.

Dense tensors are plain numpy arrays (float32, channels-last for images).
A BitPackedMatrix stores one element per bit, 1 for +1 and 0 for -1, in
little-endian 64-bit words; padding bits past `cols` are always zero.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from bitslice import WORD_BITS, BitSlicedTensor, pack_rows, unpack_rows
from errors import ShapeError

logger = logging.getLogger(__name__)

DenseTensor = np.ndarray

# upper bound on uint64 words materialized per XOR block in binary_gemm
BLOCK_WORDS = 1 << 22


def words_per_row(cols: int) -> int:
    return -(-cols // WORD_BITS)


def row_mask(cols: int) -> np.ndarray:
    """All-ones words, with the unused tail of the last word cleared."""
    mask = np.full(words_per_row(cols), np.iinfo(np.uint64).max, dtype=np.uint64)
    tail = cols % WORD_BITS
    if tail:
        mask[-1] = np.uint64((1 << tail) - 1)
    return mask


@dataclass(frozen=True)
class BitPackedMatrix:
    rows: int
    cols: int
    words: np.ndarray

    def __post_init__(self):
        words = np.asarray(self.words)
        expected = (self.rows, words_per_row(self.cols))
        if words.shape != expected or words.dtype != np.uint64:
            raise ShapeError(f"packed words {words.shape}/{words.dtype}, expected {expected}/uint64")
        if self.cols % WORD_BITS and self.rows:
            if np.any(words[:, -1] & ~row_mask(self.cols)[-1]):
                raise ShapeError("padding bits must be zero")

    @classmethod
    def from_bits(cls, bits01: np.ndarray) -> "BitPackedMatrix":
        bits01 = np.asarray(bits01)
        if bits01.ndim != 2:
            raise ShapeError(f"expected a 2-D bit array, got shape {bits01.shape}")
        return cls(bits01.shape[0], bits01.shape[1], pack_rows(bits01))

    @classmethod
    def from_signs(cls, signs: np.ndarray) -> "BitPackedMatrix":
        """Pack a +-1 matrix (anything >= 0 counts as +1)."""
        return cls.from_bits(np.asarray(signs) >= 0)

    def unpack(self) -> np.ndarray:
        """Back to a (rows, cols) int8 matrix of +-1."""
        bits = unpack_rows(self.words, self.cols)
        return bits.astype(np.int8) * 2 - 1


def sign_values(x: np.ndarray) -> np.ndarray:
    """Dense counterpart of sign_binarize: +1.0 where x >= 0, else -1.0."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0).astype(np.float32)


def sign_binarize(x: np.ndarray) -> BitPackedMatrix:
    """Binarize with sign(0) = +1. Leading axis becomes rows, the rest is flattened."""
    x = np.asarray(x)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1)
    else:
        x = x.reshape(x.shape[0], -1)
    return BitPackedMatrix.from_bits(x >= 0)


def xnor_popcount_dot(a: BitPackedMatrix, b: BitPackedMatrix) -> int:
    """Sum of a_i * b_i for two packed +-1 rows, as 2 * popcount(XNOR) - n."""
    if a.rows != 1 or b.rows != 1:
        raise ShapeError("xnor_popcount_dot takes single rows; use binary_gemm for matrices")
    if a.cols != b.cols:
        raise ShapeError(f"row lengths differ: {a.cols} vs {b.cols}")
    agree = np.bitwise_count(~(a.words[0] ^ b.words[0]) & row_mask(a.cols))
    return 2 * int(agree.sum(dtype=np.int64)) - a.cols


def binary_gemm(a: BitPackedMatrix, b: BitPackedMatrix, threads: int = 1) -> np.ndarray:
    """Entry (i, j) is the +-1 dot product of row i of a and row j of b.

    B is the transposed operand, stored row-major. Output rows are partitioned
    into blocks; blocks may run on worker threads since each writes a disjoint
    slice of the result.
    """
    if a.cols != b.cols:
        raise ShapeError(f"inner dimensions differ: {a.cols} vs {b.cols}")
    n = a.cols
    out = np.empty((a.rows, b.rows), dtype=np.int64)
    if a.rows == 0 or b.rows == 0:
        return out
    block = max(1, BLOCK_WORDS // max(1, b.rows * a.words.shape[1]))
    starts = list(range(0, a.rows, block))

    def work(start):
        stop = min(start + block, a.rows)
        # padding bits are zero in both operands, so they never count as disagreements
        diff = a.words[start:stop, None, :] ^ b.words[None, :, :]
        out[start:stop] = n - 2 * np.bitwise_count(diff).sum(axis=2, dtype=np.int64)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)
    return out


def dense_gemm(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"dense_gemm takes matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    padded = size + 2 * padding
    if kernel > padded:
        raise ShapeError(f"kernel {kernel} larger than padded input {padded}")
    return (padded - kernel) // stride + 1


def im2col(
    x: Union[DenseTensor, BitSlicedTensor],
    kernel: int,
    stride: int = 1,
    padding: int = 0,
    pad_value: Optional[float] = None,
) -> np.ndarray:
    """Lower a convolution input to a matrix of receptive fields.

    Args:
        x: (H, W, C) or (B, H, W, C) array, or a bit-sliced tensor (used as +-1).
        kernel: Square kernel size k.
        stride: Convolution stride.
        padding: Border width on each side.
        pad_value: Fill for the border; defaults to 0 for dense input and
            -1 for bit-sliced input.

    Returns:
        (B * out_h * out_w, C * k * k) matrix. Rows follow (b, y, x) order and
        each row is channel-major (c, ky, kx), matching filters stored as
        (out, in, kh, kw).
    """
    if isinstance(x, BitSlicedTensor):
        x = x.signs()
        if pad_value is None:
            pad_value = -1.0
    x = np.asarray(x)
    if pad_value is None:
        pad_value = 0.0
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"im2col expects (B, H, W, C), got shape {x.shape}")
    batch, height, width, channels = x.shape
    out_h = conv_output_size(height, kernel, stride, padding)
    out_w = conv_output_size(width, kernel, stride, padding)
    if padding:
        x = np.pad(
            x, ((0, 0), (padding, padding), (padding, padding), (0, 0)),
            mode="constant", constant_values=pad_value,
        )
    col = np.empty((batch, out_h, out_w, channels, kernel, kernel), dtype=x.dtype)
    for ky in range(kernel):
        y_max = ky + stride * out_h
        for kx in range(kernel):
            x_max = kx + stride * out_w
            col[..., ky, kx] = x[:, ky:y_max:stride, kx:x_max:stride, :]
    return col.reshape(batch * out_h * out_w, channels * kernel * kernel)


def col2im(
    cols: np.ndarray, input_shape: Tuple[int, int, int, int], kernel: int,
    stride: int = 1, padding: int = 0,
) -> np.ndarray:
    """Adjoint of im2col: scatter-add receptive-field gradients back to (B, H, W, C)."""
    batch, height, width, channels = input_shape
    out_h = conv_output_size(height, kernel, stride, padding)
    out_w = conv_output_size(width, kernel, stride, padding)
    col = cols.reshape(batch, out_h, out_w, channels, kernel, kernel)
    img = np.zeros(
        (batch, height + 2 * padding, width + 2 * padding, channels), dtype=cols.dtype
    )
    for ky in range(kernel):
        y_max = ky + stride * out_h
        for kx in range(kernel):
            x_max = kx + stride * out_w
            img[:, ky:y_max:stride, kx:x_max:stride, :] += col[..., ky, kx]
    return img[:, padding:padding + height, padding:padding + width, :]
