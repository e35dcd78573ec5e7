# data.py
"""CIFAR-10 binary records, generic planar record files and the synthetic bit task."""
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from bitslice import BitSlicedTensor, PixelTensor, Seed, bits_needed, int2b, prune_slices, slice_rng
from errors import DataError, DataFormatError, RangeError, ShapeError
from tensor import binary_gemm, sign_binarize

logger = logging.getLogger(__name__)

CIFAR_SHAPE = (32, 32, 3)  # (H, W, C)
CIFAR_CLASSES = 10
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_SUBDIR = "cifar-10-batches-bin"
SPLITS = ("train", "test", "validation")


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # (B, H, W, C) integers in [0, magnitude_bound]
    labels: np.ndarray
    class_count: int
    split: str = "train"
    magnitude_bound: int = 255
    pruned_slices: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        images = np.asarray(self.images)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ShapeError(f"images must be (B, H, W, C), got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ShapeError(f"{labels.size} labels for {images.shape[0]} images")
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise RangeError(f"labels outside 0..{self.class_count - 1}")
        # validates the pixel range
        PixelTensor(images, self.magnitude_bound)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "pruned_slices", tuple(sorted(int(n) for n in self.pruned_slices)))

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    @property
    def channels(self) -> int:
        return self.images.shape[3]

    @property
    def bits(self) -> int:
        return bits_needed(self.magnitude_bound)

    def pixels(self) -> PixelTensor:
        return PixelTensor(self.images, self.magnitude_bound)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        return replace(self, images=self.images[index], labels=self.labels[index])

    def prune(self, slices: Iterable[int]) -> "LabeledDataset":
        """Mark slices as pruned; they are dropped whenever the set is bit-sliced."""
        merged = set(self.pruned_slices) | {int(n) for n in slices}
        if any(n < 1 or n > self.bits for n in merged):
            raise RangeError(f"slices {sorted(merged)} outside 1..{self.bits}")
        if len(merged) >= self.bits:
            raise RangeError("pruning every slice would leave an empty input")
        return replace(self, pruned_slices=tuple(merged))

    def to_bitsliced(self) -> BitSlicedTensor:
        sliced = int2b(self.pixels())
        if self.pruned_slices:
            sliced = prune_slices(sliced, self.pruned_slices)
        return sliced


def record_size(shape: Sequence[int]) -> int:
    height, width, channels = shape
    return 1 + height * width * channels


def read_records(
    source: str,
    shape: Sequence[int] = CIFAR_SHAPE,
    class_count: int = CIFAR_CLASSES,
    split: str = "train",
) -> LabeledDataset:
    """Read label + channel-planar pixel records (1 + C*H*W bytes each).

    Args:
        source: Path to the record file.
        shape: (H, W, C) of every image.
        class_count: Labels must be below this.
        split: Split name stored on the dataset.

    Returns:
        LabeledDataset with channels-last images and A = 255.
    """
    height, width, channels = shape
    size = record_size(shape)
    with open(source, "rb") as handle:
        raw = handle.read()
    if len(raw) % size:
        raise DataFormatError(f"{source}: truncated record", byte_offset=len(raw) // size * size)
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, size)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= class_count)
    if bad.size:
        raise DataFormatError(f"{source}: label {labels[bad[0]]} >= {class_count}", byte_offset=int(bad[0]) * size)
    images = records[:, 1:].reshape(-1, channels, height, width).transpose(0, 2, 3, 1)
    logger.debug("Read %d records from %s", records.shape[0], source)
    return LabeledDataset(np.ascontiguousarray(images), labels, class_count, split)


def write_records(dataset: LabeledDataset, target: str) -> int:
    if dataset.magnitude_bound > 255:
        raise RangeError("record files hold 8-bit pixels only")
    if dataset.class_count > 256:
        raise RangeError("record files hold one label byte")
    planar = dataset.images.astype(np.uint8).transpose(0, 3, 1, 2).reshape(len(dataset), -1)
    records = np.concatenate([dataset.labels.astype(np.uint8)[:, None], planar], axis=1)
    with open(target, "wb") as handle:
        handle.write(records.tobytes())
    return len(dataset)


def _cifar_dir(path: str) -> str:
    nested = os.path.join(path, CIFAR_SUBDIR)
    return nested if os.path.isdir(nested) else path


def load_cifar10(path: str) -> Tuple[LabeledDataset, LabeledDataset]:
    """Load the binary CIFAR-10 distribution from `path` (or its cifar-10-batches-bin subdirectory)."""
    root = _cifar_dir(path)
    missing = [name for name in CIFAR_TRAIN_FILES + (CIFAR_TEST_FILE,)
               if not os.path.isfile(os.path.join(root, name))]
    if missing:
        raise DataError(f"CIFAR-10 files missing under {root}: {', '.join(missing)}")
    parts = [read_records(os.path.join(root, name)) for name in CIFAR_TRAIN_FILES]
    train = LabeledDataset(
        np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]), CIFAR_CLASSES, "train",
    )
    test = replace(read_records(os.path.join(root, CIFAR_TEST_FILE)), split="test")
    logger.info("Loaded CIFAR-10: %d train, %d test images", len(train), len(test))
    return train, test


def split_dataset(dataset: LabeledDataset, fraction: float, seed: Seed = 0) -> Tuple[LabeledDataset, LabeledDataset]:
    """Shuffle and hold out `fraction` of the samples as a validation split."""
    if not 0 < fraction < 1:
        raise RangeError(f"validation fraction must be in (0, 1), got {fraction}")
    order = slice_rng(seed).permutation(len(dataset))
    held = int(round(len(dataset) * fraction))
    if held == 0 or held == len(dataset):
        raise DataError(f"cannot split {len(dataset)} samples with fraction {fraction}")
    return dataset.subset(order[held:]), replace(dataset.subset(order[:held]), split="validation")


def _distinct_codes(rng: np.random.Generator, classes: int, capacity: int) -> np.ndarray:
    """`classes` distinct bit vectors of length `capacity`."""
    if capacity <= 20:
        picks = rng.choice(2 ** capacity, size=classes, replace=False)
        return ((picks[:, None] >> np.arange(capacity)) & 1).astype(np.uint8)
    while True:
        codes = rng.integers(0, 2, size=(classes, capacity), dtype=np.uint8)
        if np.unique(codes, axis=0).shape[0] == classes:
            return codes


def synth_bit_task(
    samples: int,
    width: int,
    height: int,
    channels: int,
    bits: int,
    significant_slices: Iterable[int],
    classes: int,
    seed: Seed = 0,
    spread: float = 0.6,
    split: str = "train",
    noise_seed: Optional[Seed] = None,
) -> LabeledDataset:
    """Images whose label depends only on the bits in `significant_slices`.

    Every class owns a template of significant-bit codes. A sample copies its
    class template and then redraws each pixel's code uniformly with
    probability `spread`; the label is the template nearest in Hamming
    distance (ties go to the lower class). All other slices are coin flips,
    drawn from `noise_seed` when given so the signal can be held fixed.
    """
    significant = sorted({int(n) for n in significant_slices})
    if not significant or significant[0] < 1 or significant[-1] > bits:
        raise RangeError(f"significant slices {significant} must be a non-empty subset of 1..{bits}")
    if classes < 1 or samples < 1:
        raise RangeError("need at least one class and one sample")
    if not 0 <= spread <= 1:
        raise RangeError(f"spread must be in [0, 1], got {spread}")
    pixels_per_image = width * height * channels
    capacity = len(significant) * pixels_per_image
    if capacity < 64 and classes > 2 ** capacity:
        raise RangeError(f"{classes} classes exceed the {capacity} significant bits available")
    rng = slice_rng(seed)
    per_pixel = len(significant)
    templates = _distinct_codes(rng, classes, capacity).reshape(classes, height, width, channels, per_pixel)

    drawn = rng.integers(0, classes, size=samples)
    codes = templates[drawn].copy()
    redraw = rng.random((samples, height, width, channels)) < spread
    codes[redraw] = rng.integers(0, 2, size=(int(redraw.sum()), per_pixel), dtype=np.uint8)

    # nearest template: largest +-1 agreement over the significant bits
    agreement = binary_gemm(
        sign_binarize(codes.reshape(samples, -1).astype(np.int8) * 2 - 1),
        sign_binarize(templates.reshape(classes, -1).astype(np.int8) * 2 - 1),
    )
    labels = np.argmax(agreement, axis=1)

    noise = [n for n in range(1, bits + 1) if n not in significant]
    values = np.zeros((samples, height, width, channels), dtype=np.int64)
    for j, n in enumerate(significant):
        values |= codes[..., j].astype(np.int64) << (n - 1)
    noise_rng = rng if noise_seed is None else slice_rng(noise_seed)
    for n in noise:
        values |= noise_rng.integers(0, 2, size=values.shape, dtype=np.int64) << (n - 1)
    dtype = np.uint8 if bits <= 8 else np.uint16 if bits <= 16 else np.uint32
    logger.debug("Synthesized %d samples, %d classes, significant slices %s", samples, classes, significant)
    return LabeledDataset(values.astype(dtype), labels, classes, split, magnitude_bound=2 ** bits - 1)
