# checkpoint.py
"""Checkpoint file: header, architecture document, metadata, parameter blocks.

Layout, little-endian throughout:
    magic b"CBNN" | format_version u32 | arch_len u32 | arch INI (utf-8)
    seed u64 | epochs u32 | final_err f64 (NaN when unknown) | pruned mask u32 (bit n-1: slice n)
    then per layer, in order:
        binary conv/dense: out_channels rows of ceil(fan_in / 64) u64 words, LSB first
        full-precision conv/dense: weights as f32, (out, in, kh, kw) order
        batchnorm: gamma, beta, mean, var as f32
"""
import logging
import math
import struct

import numpy as np

from bitslice import pack_rows, unpack_rows
from errors import CheckpointError, ConfigError
from network import Model, arch_from_text, arch_to_text
from tensor import words_per_row

logger = logging.getLogger(__name__)

MAGIC = b"CBNN"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sII")
_META = struct.Struct("<QIdI")


def _blocks(arch):
    """(key, dtype, count, layer) for every stored block, in file order."""
    for i, layer in enumerate(arch.layers):
        if layer.weighted:
            if layer.precision == "binary":
                count = layer.out_channels * words_per_row(layer.weight_count // layer.out_channels)
                yield f"{i}.weight", "<u8", count, layer
            else:
                yield f"{i}.weight", "<f4", layer.weight_count, layer
        elif layer.kind == "batchnorm":
            for name in ("gamma", "beta", "mean", "var"):
                yield f"{i}.{name}", "<f4", layer.in_channels, layer


def dumps(model: Model) -> bytes:
    arch_text = arch_to_text(model.arch).encode("utf-8")
    meta = model.metadata
    final_err = meta.get("final_err")
    parts = [
        _HEAD.pack(MAGIC, FORMAT_VERSION, len(arch_text)),
        arch_text,
        _META.pack(int(meta.get("seed", 0)), int(meta.get("epochs", 0)),
                   math.nan if final_err is None else float(final_err),
                   sum(1 << (int(n) - 1) for n in meta.get("pruned", ()))),
    ]
    for key, dtype, _, layer in _blocks(model.arch):
        value = model.params[key]
        if dtype == "<u8":
            rows = value.reshape(layer.out_channels, -1) >= 0
            parts.append(pack_rows(rows).astype("<u8").tobytes())
        else:
            parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(raw: bytes) -> Model:
    if len(raw) < _HEAD.size:
        raise CheckpointError("checkpoint shorter than its header", byte_offset=len(raw))
    magic, version, arch_len = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}", byte_offset=0)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {version}", byte_offset=4)
    offset = _HEAD.size
    if len(raw) < offset + arch_len + _META.size:
        raise CheckpointError("truncated architecture or metadata", byte_offset=len(raw))
    try:
        arch = arch_from_text(raw[offset:offset + arch_len].decode("utf-8"))
    except (UnicodeDecodeError, ValueError, ConfigError) as e:
        raise CheckpointError(f"unreadable architecture document: {e}", byte_offset=offset) from e
    offset += arch_len
    seed, epochs, final_err, pruned_mask = _META.unpack_from(raw, offset)
    offset += _META.size

    params = {}
    for key, dtype, count, layer in _blocks(arch):
        size = count * 8 if dtype == "<u8" else count * 4
        if len(raw) < offset + size:
            raise CheckpointError(f"truncated parameter block {key}", byte_offset=offset)
        block = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        if dtype == "<u8":
            fan_in = layer.weight_count // layer.out_channels
            words = block.astype(np.uint64).reshape(layer.out_channels, -1)
            bits = unpack_rows(words, fan_in)
            params[key] = (bits.astype(np.float32) * 2 - 1).reshape(layer.weight_shape)
        else:
            value = block.astype(np.float32)
            params[key] = value.reshape(layer.weight_shape) if key.endswith(".weight") else value
        offset += size
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes", byte_offset=offset)
    metadata = {"seed": seed, "epochs": epochs}
    if pruned_mask:
        metadata["pruned"] = tuple(n + 1 for n in range(32) if pruned_mask >> n & 1)
    if not math.isnan(final_err):
        metadata["final_err"] = final_err
    return Model(arch, params, metadata)


def save_checkpoint(model: Model, path: str) -> int:
    raw = dumps(model)
    with open(path, "wb") as handle:
        handle.write(raw)
    logger.info("Saved checkpoint %s (%d bytes)", path, len(raw))
    return len(raw)


def load_checkpoint(path: str) -> Model:
    try:
        with open(path, "rb") as handle:
            raw = handle.read()
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    return loads(raw)
