# bitslice.py
"""Integer image tensors and their bit-sliced binary form.

Arrays are channels-last: a single image is (H, W, C), a batch is (B, H, W, C).
In a bit-sliced tensor the channel axis holds, for each base channel c, its
slices LSB first, i.e. channel index c * K + k for the k-th kept slice.
Slice indices are 1-based: slice 1 is the least significant bit.
"""
import logging
from dataclasses import dataclass, replace
from typing import BinaryIO, Iterable, Optional, Tuple, Union

import numpy as np

from errors import DataFormatError, RangeError, ShapeError

logger = logging.getLogger(__name__)

HEADER_FIELDS = 5  # width, height, base_channels, bits_per_channel, magnitude_bound
HEADER_BYTES = HEADER_FIELDS * 4
WORD_BITS = 64

Seed = Union[int, np.random.SeedSequence]


def bits_needed(magnitude_bound: int) -> int:
    """N = ceil(log2(A + 1)), at least one bit."""
    return max(1, int(magnitude_bound).bit_length())


def slice_rng(seed: Seed) -> np.random.Generator:
    """Counter-based generator; derived streams come from SeedSequence.spawn."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class PixelTensor:
    values: np.ndarray
    magnitude_bound: int = 255

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim < 3:
            raise ShapeError(f"pixel tensor needs (H, W, C) axes, got shape {values.shape}")
        if not np.issubdtype(values.dtype, np.integer):
            raise ShapeError(f"pixel values must be integers, got {values.dtype}")
        if self.magnitude_bound < 0:
            raise RangeError(f"magnitude bound must be non-negative, got {self.magnitude_bound}")
        if values.size:
            low, high = int(values.min()), int(values.max())
            if low < 0 or high > self.magnitude_bound:
                raise RangeError(
                    f"pixel values span [{low}, {high}], outside [0, {self.magnitude_bound}]"
                )
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[-3]

    @property
    def width(self) -> int:
        return self.values.shape[-2]

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.values.shape[:-3]


@dataclass(frozen=True)
class BitSlicedTensor:
    bits: np.ndarray
    base_channels: int
    bits_per_channel: int
    magnitude_bound: int
    kept_slices: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        bits = np.asarray(self.bits)
        kept = self.kept_slices
        if kept is None:
            kept = tuple(range(1, self.bits_per_channel + 1))
        kept = tuple(int(n) for n in kept)
        if bits.ndim < 3:
            raise ShapeError(f"bit-sliced tensor needs (H, W, C') axes, got shape {bits.shape}")
        if not kept or any(n < 1 or n > self.bits_per_channel for n in kept):
            raise RangeError(f"kept slices {kept} outside 1..{self.bits_per_channel}")
        if bits.shape[-1] != self.base_channels * len(kept):
            raise ShapeError(
                f"{bits.shape[-1]} channels, expected {self.base_channels} x {len(kept)}"
            )
        if bits.size and (int(bits.max()) > 1 or int(bits.min()) < 0):
            raise RangeError("bit planes must only hold 0 and 1")
        object.__setattr__(self, "bits", bits.astype(np.uint8, copy=False))
        object.__setattr__(self, "kept_slices", kept)

    @property
    def height(self) -> int:
        return self.bits.shape[-3]

    @property
    def width(self) -> int:
        return self.bits.shape[-2]

    @property
    def channels(self) -> int:
        return self.bits.shape[-1]

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.bits.shape[:-3]

    @property
    def is_pruned(self) -> bool:
        return len(self.kept_slices) != self.bits_per_channel

    def channel_indices(self, slices: Iterable[int]) -> np.ndarray:
        """Channel positions of the given slices in every base channel."""
        positions = [self.kept_slices.index(n) for n in sorted(slices)]
        per_channel = len(self.kept_slices)
        return np.array(
            [c * per_channel + p for c in range(self.base_channels) for p in positions],
            dtype=np.intp,
        )

    def signs(self) -> np.ndarray:
        """The bits as network input: 1 -> +1.0, 0 -> -1.0."""
        return self.bits.astype(np.float32) * 2.0 - 1.0


def _validate_slices(tensor: BitSlicedTensor, slices: Iterable[int]) -> set:
    targets = {int(n) for n in slices}
    for n in targets:
        if n < 1 or n > tensor.bits_per_channel:
            raise RangeError(f"slice index {n} outside 1..{tensor.bits_per_channel}")
        if n not in tensor.kept_slices:
            raise RangeError(f"slice {n} was already pruned")
    return targets


def int2b(pixels: PixelTensor, bits: Optional[int] = None) -> BitSlicedTensor:
    """Lossless conversion of integer pixels into N bit planes per channel.

    Args:
        pixels: Pixel tensor with values in [0, A].
        bits: Force N instead of deriving it from A. A must still fit.

    Returns:
        BitSlicedTensor of shape (..., H, W, C * N).
    """
    bound = pixels.magnitude_bound
    n_bits = bits_needed(bound) if bits is None else int(bits)
    if n_bits < 1 or bound > 2 ** n_bits - 1:
        raise RangeError(f"magnitude bound {bound} does not fit in {n_bits} bits")
    values = pixels.values.astype(np.int64)
    shifts = np.arange(n_bits, dtype=np.int64)
    planes = (values[..., None] >> shifts) & 1
    planes = planes.reshape(*values.shape[:-1], pixels.channels * n_bits)
    return BitSlicedTensor(planes.astype(np.uint8), pixels.channels, n_bits, bound)


def b2int(tensor: BitSlicedTensor) -> PixelTensor:
    """Inverse of int2b. Pruned slices count as zero bits."""
    kept = len(tensor.kept_slices)
    planes = tensor.bits.reshape(*tensor.bits.shape[:-1], tensor.base_channels, kept)
    weights = np.array([1 << (n - 1) for n in tensor.kept_slices], dtype=np.int64)
    values = planes.astype(np.int64) @ weights
    return PixelTensor(values, tensor.magnitude_bound)


def randomize_slices(tensor: BitSlicedTensor, slices: Iterable[int], seed: Seed) -> BitSlicedTensor:
    """Replace the given slices of every base channel by fair coin flips."""
    targets = _validate_slices(tensor, slices)
    if not targets:
        return tensor
    channels = tensor.channel_indices(targets)
    bits = tensor.bits.copy()
    shape = bits.shape[:-1] + (len(channels),)
    bits[..., channels] = slice_rng(seed).integers(0, 2, size=shape, dtype=np.uint8)
    return replace(tensor, bits=bits)


def zero_slices(tensor: BitSlicedTensor, slices: Iterable[int]) -> BitSlicedTensor:
    targets = _validate_slices(tensor, slices)
    if not targets:
        return tensor
    bits = tensor.bits.copy()
    bits[..., tensor.channel_indices(targets)] = 0
    return replace(tensor, bits=bits)


def prune_slices(tensor: BitSlicedTensor, slices: Iterable[int]) -> BitSlicedTensor:
    """Drop the given slices from every base channel (joint RGB pruning)."""
    targets = _validate_slices(tensor, slices)
    if not targets:
        return tensor
    remaining = tuple(n for n in tensor.kept_slices if n not in targets)
    if not remaining:
        raise RangeError("pruning every slice would leave an empty input")
    bits = tensor.bits[..., tensor.channel_indices(remaining)]
    return replace(tensor, bits=np.ascontiguousarray(bits), kept_slices=remaining)


def pack_rows(bits01: np.ndarray) -> np.ndarray:
    """Pack a (rows, n) {0,1} array into (rows, ceil(n/64)) uint64 words, LSB first.

    Padding bits in the last word of each row are zero.
    """
    bits01 = np.asarray(bits01, dtype=np.uint8)
    rows, n = bits01.shape
    words = -(-n // WORD_BITS)
    padded = np.zeros((rows, words * WORD_BITS), dtype=np.uint8)
    padded[:, :n] = bits01
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64)


def unpack_rows(words: np.ndarray, n: int) -> np.ndarray:
    """Inverse of pack_rows: (rows, words) uint64 -> (rows, n) uint8 bits."""
    as_bytes = np.ascontiguousarray(np.asarray(words).astype("<u8")).view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, count=n, bitorder="little")


def write_bitsliced(tensor: BitSlicedTensor, target: Union[str, BinaryIO]) -> int:
    """Serialize a single tensor or a batch. Returns the number of images written."""
    if tensor.is_pruned:
        raise ShapeError("only unpruned bit-sliced tensors can be serialized")
    header = np.array(
        [tensor.width, tensor.height, tensor.base_channels,
         tensor.bits_per_channel, tensor.magnitude_bound],
        dtype="<u4",
    )
    per_image = tensor.height * tensor.width * tensor.channels
    images = tensor.bits.reshape(-1, per_image)
    payload = pack_rows(images).astype("<u8").tobytes()
    if isinstance(target, str):
        with open(target, "wb") as handle:
            handle.write(header.tobytes())
            handle.write(payload)
    else:
        target.write(header.tobytes())
        target.write(payload)
    logger.debug("Wrote %d bit-sliced images (%d bytes)", images.shape[0], len(payload) + HEADER_BYTES)
    return images.shape[0]


def read_bitsliced(source: Union[str, BinaryIO]) -> BitSlicedTensor:
    """Read a file written by write_bitsliced. Always returns a batch (B, H, W, C')."""
    if isinstance(source, str):
        with open(source, "rb") as handle:
            raw = handle.read()
    else:
        raw = source.read()
    if len(raw) < HEADER_BYTES:
        raise DataFormatError("bit-sliced file shorter than its header", byte_offset=len(raw))
    width, height, base_channels, n_bits, bound = (
        int(v) for v in np.frombuffer(raw[:HEADER_BYTES], dtype="<u4")
    )
    if n_bits < 1 or bound > 2 ** n_bits - 1:
        raise DataFormatError(f"header bound {bound} does not fit {n_bits} bits", byte_offset=0)
    per_image = height * width * base_channels * n_bits
    image_bytes = -(-per_image // WORD_BITS) * 8
    body = len(raw) - HEADER_BYTES
    if image_bytes == 0 or body % image_bytes:
        complete = body // image_bytes if image_bytes else 0
        raise DataFormatError(
            "truncated bit-sliced payload", byte_offset=HEADER_BYTES + complete * image_bytes
        )
    count = body // image_bytes
    words = np.frombuffer(raw, dtype="<u8", offset=HEADER_BYTES).reshape(count, image_bytes // 8)
    bits = unpack_rows(words, per_image).reshape(count, height, width, base_channels * n_bits)
    return BitSlicedTensor(bits, base_channels, n_bits, bound)
