# network.py
"""Layer and architecture descriptors, inference, and the size/GOPs cost model."""
import configparser
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from bitslice import BitSlicedTensor, PixelTensor, slice_rng
from errors import ConfigError, DataError, RangeError, ShapeError
from tensor import (
    binary_gemm,
    conv_output_size,
    dense_gemm,
    im2col,
    sign_binarize,
    sign_values,
)

logger = logging.getLogger(__name__)

LAYER_KINDS = ("conv", "dense", "maxpool", "batchnorm", "sign_activation")
PRECISIONS = ("binary", "full")
BN_EPS = 1e-4
POOL_WINDOW = 2
NONBINARY_WEIGHT_BITS = 16
MB_BYTES = 10 ** 6
EVAL_BATCH = 64

ParamStore = Dict[str, np.ndarray]


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    precision: str = "binary"
    padding: int = 0
    pool: int = 0
    ceil_mode: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.precision not in PRECISIONS:
            raise ShapeError(f"unknown precision {self.precision!r}")
        if self.kind in ("conv", "dense") and (self.in_channels < 1 or self.out_channels < 1):
            raise ShapeError(f"{self.kind} layer needs positive channel counts")
        if self.kind == "conv" and self.kernel < 1:
            raise ShapeError("conv layer needs a positive kernel size")
        if self.kind == "maxpool" and self.pool != POOL_WINDOW:
            raise ShapeError(f"maxpool window must be {POOL_WINDOW}x{POOL_WINDOW}")
        if self.kind == "batchnorm" and self.in_channels < 1:
            raise ShapeError("batchnorm layer needs its channel count")

    @property
    def weighted(self) -> bool:
        return self.kind in ("conv", "dense")

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        if self.kind == "conv":
            return (self.out_channels, self.in_channels, self.kernel, self.kernel)
        if self.kind == "dense":
            return (self.out_channels, self.in_channels)
        return ()

    @property
    def weight_count(self) -> int:
        return int(np.prod(self.weight_shape)) if self.weighted else 0


def conv(in_channels, out_channels, kernel=3, precision="binary") -> LayerSpec:
    # padding keeps spatial size for odd kernels
    return LayerSpec("conv", in_channels, out_channels, kernel, precision, padding=kernel // 2)


def dense(in_channels, out_channels, precision="binary") -> LayerSpec:
    return LayerSpec("dense", in_channels, out_channels, precision=precision)


def maxpool(ceil_mode=False) -> LayerSpec:
    return LayerSpec("maxpool", pool=POOL_WINDOW, ceil_mode=ceil_mode)


def batchnorm(channels) -> LayerSpec:
    return LayerSpec("batchnorm", channels, channels)


def sign_activation(precision="binary") -> LayerSpec:
    return LayerSpec("sign_activation", precision=precision)


def pooled_size(size: int, ceil_mode: bool) -> int:
    return -(-size // POOL_WINDOW) if ceil_mode else size // POOL_WINDOW


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_shape: Tuple[int, int, int]  # (W, H, C_in)
    layers: Tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        weighted = self.weighted_layers()
        if not weighted or weighted[-1][1].kind != "dense":
            raise ShapeError(f"{self.name}: the last weighted layer must be dense (class logits)")
        tail = self.layers[weighted[-1][0] + 1:]
        if any(layer.kind != "batchnorm" for layer in tail):
            raise ShapeError(f"{self.name}: only batchnorm may follow the logit layer")
        self.shapes()

    @property
    def classes(self) -> int:
        return self.weighted_layers()[-1][1].out_channels

    @property
    def input_hwc(self) -> Tuple[int, int, int]:
        width, height, channels = self.input_shape
        return height, width, channels

    def weighted_layers(self) -> List[Tuple[int, LayerSpec]]:
        return [(i, layer) for i, layer in enumerate(self.layers) if layer.weighted]

    def shapes(self) -> List[Tuple[int, ...]]:
        """Output shape (H, W, C) or (F,) after every layer; validates chaining."""
        shape: Tuple[int, ...] = self.input_hwc
        out = []
        for i, layer in enumerate(self.layers):
            channels = shape[-1]
            if layer.kind == "conv":
                if len(shape) != 3 or channels != layer.in_channels:
                    raise ShapeError(f"{self.name} layer {i}: conv expects {layer.in_channels} channels, got {shape}")
                shape = (
                    conv_output_size(shape[0], layer.kernel, 1, layer.padding),
                    conv_output_size(shape[1], layer.kernel, 1, layer.padding),
                    layer.out_channels,
                )
            elif layer.kind == "dense":
                flat = int(np.prod(shape))
                if flat != layer.in_channels:
                    raise ShapeError(f"{self.name} layer {i}: dense expects {layer.in_channels} inputs, got {flat}")
                shape = (layer.out_channels,)
            elif layer.kind == "maxpool":
                if len(shape) != 3:
                    raise ShapeError(f"{self.name} layer {i}: maxpool needs a spatial input")
                shape = (pooled_size(shape[0], layer.ceil_mode), pooled_size(shape[1], layer.ceil_mode), channels)
            elif layer.kind == "batchnorm":
                if channels != layer.in_channels:
                    raise ShapeError(f"{self.name} layer {i}: batchnorm over {layer.in_channels} channels, got {channels}")
            out.append(shape)
        return out


@dataclass
class Model:
    arch: ArchitectureSpec
    params: ParamStore
    metadata: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class CostReport:
    size_bits: int
    size_mb: float
    macs: int
    gops: float


# --- architecture descriptors ---

def vgg_arch(
    name: str,
    input_shape: Tuple[int, int, int],
    conv_depths: Sequence[int],
    dense_depths: Sequence[int],
    classes: int,
    first_precision: str = "binary",
    ceil_mode: bool = False,
    trailing_pools: int = 0,
) -> ArchitectureSpec:
    """Pairs of 3x3 convs with a 2x2 pool after each pair, then dense layers.

    Layer order follows the BNN recipe: conv -> [pool] -> batchnorm -> sign,
    and the logit layer ends with batchnorm only. `trailing_pools` adds
    extra pools after the last conv pair.
    """
    width, height, channels = input_shape
    layers: List[LayerSpec] = []
    size_h, size_w = height, width
    for i, depth in enumerate(conv_depths):
        precision = first_precision if not layers else "binary"
        layers.append(conv(channels, depth, 3, precision))
        pools = 0
        if i % 2 == 1:
            pools = 1 + (trailing_pools if i == len(conv_depths) - 1 else 0)
        for _ in range(pools):
            layers.append(maxpool(ceil_mode))
            size_h, size_w = pooled_size(size_h, ceil_mode), pooled_size(size_w, ceil_mode)
        layers += [batchnorm(depth), sign_activation()]
        channels = depth
    features = size_h * size_w * channels
    widths = list(dense_depths) + [classes]
    for i, depth in enumerate(widths):
        precision = first_precision if not layers else "binary"
        layers += [dense(features, depth, precision), batchnorm(depth)]
        if i < len(widths) - 1:
            layers.append(sign_activation())
        features = depth
    return ArchitectureSpec(name, input_shape, tuple(layers))


CIFAR_CONV = (128, 128, 256, 256, 512, 512)
CIFAR_DENSE = (1024, 1024)


def baseline_cifar_arch() -> ArchitectureSpec:
    """The 9-layer binarized CIFAR-10 net, binary first layer on raw pixels."""
    return vgg_arch("bnn-cifar10", (32, 32, 3), CIFAR_CONV, CIFAR_DENSE, 10)


def scaled_arch(arch: ArchitectureSpec, factor: float, name: Optional[str] = None) -> ArchitectureSpec:
    """Scale every hidden conv/dense depth by `factor` (must stay integral)."""
    hidden = {i for i, _ in arch.weighted_layers()[:-1]}
    depths = {}
    for i in hidden:
        scaled = arch.layers[i].out_channels * factor
        if scaled != int(scaled) or scaled < 1:
            raise ShapeError(f"depth {arch.layers[i].out_channels} x {factor} is not integral")
        depths[i] = int(scaled)
    return rechain_arch(arch, depths, arch.input_shape, name or f"{arch.name}-x{factor:g}")


def svhn_arch() -> ArchitectureSpec:
    return scaled_arch(baseline_cifar_arch(), 0.5, "bnn-svhn")


def chars74k_arch() -> ArchitectureSpec:
    half = [d // 2 for d in CIFAR_CONV]
    return vgg_arch("bnn-chars74k", (32, 32, 3), half, [d // 2 for d in CIFAR_DENSE], 62)


def gtsrb_arch(bits: int = 8) -> ArchitectureSpec:
    """Reconstructed net for 56x56 traffic signs.

    A second ceil-mode pool after the last conv pair takes 7x7 to 4x4, so the
    dense stack sees the same 8192 features as the CIFAR net.
    """
    base = vgg_arch("bnn-gtsrb", (56, 56, 3), CIFAR_CONV, CIFAR_DENSE, 43,
                    ceil_mode=True, trailing_pools=1)
    return reconstruct_arch(base, bits)


def quarter_cifar_arch() -> ArchitectureSpec:
    """Quarter-depth CIFAR net for desk-scale training runs."""
    return scaled_arch(baseline_cifar_arch(), 0.25, "bnn-cifar10-quarter")


def synthetic_arch(width: int, height: int, channels: int, bits: int, classes: int) -> ArchitectureSpec:
    """Small reconstructed net for the synthetic bit task.

    Depths are multiples of 8 so every shrink by (N - P) / N with N = 8 stays integral.
    """
    return vgg_arch("bnn-synthetic", (width, height, channels * bits), (32, 32), (64,), classes,
                    first_precision="full")


def rechain_arch(
    arch: ArchitectureSpec, depths: Dict[int, int], input_shape: Tuple[int, int, int], name: str,
    precisions: Optional[Dict[int, str]] = None,
) -> ArchitectureSpec:
    """Rebuild `arch` with new output depths per layer index, re-deriving fan-ins."""
    precisions = precisions or {}
    width, height, channels = input_shape
    shape: Tuple[int, ...] = (height, width, channels)
    layers = []
    for i, layer in enumerate(arch.layers):
        precision = precisions.get(i, layer.precision)
        if layer.kind == "conv":
            out = depths.get(i, layer.out_channels)
            new = replace(layer, in_channels=shape[-1], out_channels=out, precision=precision)
            shape = (conv_output_size(shape[0], layer.kernel, 1, layer.padding),
                     conv_output_size(shape[1], layer.kernel, 1, layer.padding), out)
        elif layer.kind == "dense":
            out = depths.get(i, layer.out_channels)
            new = replace(layer, in_channels=int(np.prod(shape)), out_channels=out, precision=precision)
            shape = (out,)
        elif layer.kind == "maxpool":
            new = layer
            shape = (pooled_size(shape[0], layer.ceil_mode), pooled_size(shape[1], layer.ceil_mode), shape[-1])
        elif layer.kind == "batchnorm":
            new = replace(layer, in_channels=shape[-1], out_channels=shape[-1])
        else:
            new = replace(layer, precision=precision)
        layers.append(new)
    return ArchitectureSpec(name, input_shape, tuple(layers))


def _with_input(arch: ArchitectureSpec, bits: int, first_precision: str, suffix: str) -> ArchitectureSpec:
    width, height, channels = arch.input_shape
    first = arch.weighted_layers()[0][0]
    return rechain_arch(arch, {}, (width, height, channels * bits), f"{arch.name}-{suffix}", {first: first_precision})


def reconstruct_arch(arch: ArchitectureSpec, bits: int = 8) -> ArchitectureSpec:
    """Bit-sliced input (C x N channels) with a full-precision first layer."""
    return _with_input(arch, bits, "full", "recon")


def binary_first_layer(arch: ArchitectureSpec, bits: int = 8) -> ArchitectureSpec:
    """Bit-sliced input with a binary first layer (the FBNN variant)."""
    return _with_input(arch, bits, "binary", "fbnn")


def full_precision_arch(arch: ArchitectureSpec) -> ArchitectureSpec:
    """FNN counterpart: full-precision weights, hardtanh instead of sign."""
    precisions = {i: "full" for i, layer in enumerate(arch.layers)
                  if layer.weighted or layer.kind == "sign_activation"}
    return rechain_arch(arch, {}, arch.input_shape, f"{arch.name}-fnn", precisions)


# --- architecture documents ---

_LAYER_KEYS = ("kind", "in_channels", "out_channels", "kernel", "precision", "padding", "pool", "ceil_mode")


def arch_to_text(arch: ArchitectureSpec) -> str:
    parser = configparser.ConfigParser()
    parser["architecture"] = {
        "name": arch.name,
        "input_shape": ",".join(str(v) for v in arch.input_shape),
        "classes": str(arch.classes),
    }
    for i, layer in enumerate(arch.layers):
        parser[f"layer.{i}"] = {key: str(getattr(layer, key)).lower() if key == "ceil_mode"
                                else str(getattr(layer, key)) for key in _LAYER_KEYS}
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def arch_from_text(text: str) -> ArchitectureSpec:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed architecture document: {e}") from e
    if "architecture" not in parser:
        raise ConfigError("architecture document lacks an [architecture] section")
    head = parser["architecture"]
    unknown = set(head) - {"name", "input_shape", "classes"}
    if unknown:
        raise ConfigError(f"unknown architecture keys: {sorted(unknown)}")
    layer_sections = [s for s in parser.sections() if s != "architecture"]
    expected = [f"layer.{i}" for i in range(len(layer_sections))]
    if layer_sections != expected:
        raise ConfigError(f"layer sections must be layer.0..layer.{len(layer_sections) - 1} in order")
    layers = []
    for section in layer_sections:
        values = parser[section]
        unknown = set(values) - set(_LAYER_KEYS)
        if unknown:
            raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
        try:
            layers.append(LayerSpec(
                kind=values.get("kind", ""),
                in_channels=values.getint("in_channels", 0),
                out_channels=values.getint("out_channels", 0),
                kernel=values.getint("kernel", 0),
                precision=values.get("precision", "binary"),
                padding=values.getint("padding", 0),
                pool=values.getint("pool", 0),
                ceil_mode=values.getboolean("ceil_mode", False),
            ))
        except ValueError as e:
            raise ConfigError(f"[{section}] {e}") from e
    try:
        input_shape = tuple(int(v) for v in head["input_shape"].split(","))
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad input_shape: {e}") from e
    arch = ArchitectureSpec(head.get("name", "unnamed"), input_shape, tuple(layers))
    if "classes" in head and head.getint("classes") != arch.classes:
        raise ConfigError(f"classes={head['classes']} disagrees with the logit layer ({arch.classes})")
    return arch


# --- parameters ---

def init_params(arch: ArchitectureSpec, seed: int = 0) -> ParamStore:
    """Glorot-uniform weights, identity batchnorm."""
    rng = slice_rng(seed)
    params: ParamStore = {}
    for i, layer in enumerate(arch.layers):
        if layer.weighted:
            receptive = layer.kernel ** 2 if layer.kind == "conv" else 1
            limit = np.sqrt(6.0 / ((layer.in_channels + layer.out_channels) * receptive))
            params[f"{i}.weight"] = rng.uniform(-limit, limit, size=layer.weight_shape).astype(np.float32)
        elif layer.kind == "batchnorm":
            channels = layer.in_channels
            params[f"{i}.gamma"] = np.ones(channels, dtype=np.float32)
            params[f"{i}.beta"] = np.zeros(channels, dtype=np.float32)
            params[f"{i}.mean"] = np.zeros(channels, dtype=np.float32)
            params[f"{i}.var"] = np.ones(channels, dtype=np.float32)
    return params


def _param(params: ParamStore, key: str, shape: Tuple[int, ...]) -> np.ndarray:
    if key not in params:
        raise ShapeError(f"missing parameter {key}")
    value = params[key]
    if value.shape != shape:
        raise ShapeError(f"parameter {key} has shape {value.shape}, expected {shape}")
    return value


# --- inference ---

def pool_windows(x: np.ndarray, ceil_mode: bool) -> np.ndarray:
    """(B, H, W, C) -> (B, H', W', C, 4) view of the 2x2 windows."""
    batch, height, width, channels = x.shape
    out_h, out_w = pooled_size(height, ceil_mode), pooled_size(width, ceil_mode)
    pad_h, pad_w = out_h * 2 - height, out_w * 2 - width
    if pad_h > 0 or pad_w > 0:
        x = np.pad(x, ((0, 0), (0, max(pad_h, 0)), (0, max(pad_w, 0)), (0, 0)),
                   mode="constant", constant_values=-np.inf)
    x = x[:, :out_h * 2, :out_w * 2, :]
    windows = x.reshape(batch, out_h, 2, out_w, 2, channels).transpose(0, 1, 3, 5, 2, 4)
    return windows.reshape(batch, out_h, out_w, channels, 4)


def flatten(x: np.ndarray) -> np.ndarray:
    """Channel-major flatten of (B, H, W, C) for dense layers."""
    if x.ndim == 2:
        return x
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2)).reshape(x.shape[0], -1)


def batchnorm_affine(params: ParamStore, index: int, channels: int) -> Tuple[np.ndarray, np.ndarray]:
    """Fold inference batchnorm into y = a * x + b."""
    gamma = _param(params, f"{index}.gamma", (channels,))
    beta = _param(params, f"{index}.beta", (channels,))
    mean = _param(params, f"{index}.mean", (channels,))
    var = _param(params, f"{index}.var", (channels,))
    scale = (gamma / np.sqrt(var + np.float32(BN_EPS))).astype(np.float32)
    return scale, (beta - mean * scale).astype(np.float32)


def _weighted(inputs: np.ndarray, weights: np.ndarray, layer: LayerSpec,
              signed_input: bool, packed: bool, threads: int) -> np.ndarray:
    matrix = weights.reshape(layer.out_channels, -1)
    if layer.precision == "full":
        return dense_gemm(inputs, matrix.T)
    if signed_input and packed:
        scores = binary_gemm(sign_binarize(inputs), sign_binarize(matrix), threads)
        return scores.astype(np.float32)
    return dense_gemm(inputs, sign_values(matrix).T)


def network_input(arch: ArchitectureSpec, inputs) -> Tuple[np.ndarray, bool]:
    """Return (B, H, W, C) float32 input and whether it is already +-1."""
    if isinstance(inputs, BitSlicedTensor):
        x, signed = inputs.signs(), True
    elif isinstance(inputs, PixelTensor):
        x, signed = inputs.values.astype(np.float32), False
    else:
        x, signed = np.asarray(inputs, dtype=np.float32), False
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != arch.input_hwc:
        raise ShapeError(f"{arch.name} expects input (H, W, C) = {arch.input_hwc}, got {x.shape[1:]}")
    return x, signed


def forward(
    arch: ArchitectureSpec,
    params: ParamStore,
    inputs: Union[BitSlicedTensor, PixelTensor, np.ndarray],
    packed: bool = True,
    threads: int = 1,
    batch_size: int = EVAL_BATCH,
) -> np.ndarray:
    """Logits (B, classes).

    With packed=True binary layers on +-1 activations run through
    XNOR-popcount; packed=False evaluates the same layers as dense +-1 GEMMs.
    Both paths produce bit-identical logits.
    """
    x, signed = network_input(arch, inputs)
    chunks = [
        _forward_batch(arch, params, x[start:start + batch_size], signed, packed, threads)
        for start in range(0, x.shape[0], batch_size)
    ]
    if not chunks:
        return np.zeros((0, arch.classes), dtype=np.float32)
    return np.concatenate(chunks, axis=0)


def _forward_batch(arch, params, x, signed, packed, threads) -> np.ndarray:
    batch = x.shape[0]
    for i, layer in enumerate(arch.layers):
        if layer.kind == "conv":
            weights = _param(params, f"{i}.weight", layer.weight_shape)
            cols = im2col(x, layer.kernel, 1, layer.padding, pad_value=-1.0 if signed else 0.0)
            out_h = conv_output_size(x.shape[1], layer.kernel, 1, layer.padding)
            out_w = conv_output_size(x.shape[2], layer.kernel, 1, layer.padding)
            x = _weighted(cols, weights, layer, signed, packed, threads).reshape(batch, out_h, out_w, -1)
            signed = False
        elif layer.kind == "dense":
            weights = _param(params, f"{i}.weight", layer.weight_shape)
            x = _weighted(flatten(x), weights, layer, signed, packed, threads)
            signed = False
        elif layer.kind == "maxpool":
            x = pool_windows(x, layer.ceil_mode).max(axis=-1)
        elif layer.kind == "batchnorm":
            scale, shift = batchnorm_affine(params, i, layer.in_channels)
            x = x * scale + shift
            signed = False
        elif layer.precision == "binary":
            x, signed = sign_values(x), True
        else:
            x = np.clip(x, -1.0, 1.0)
    return x.reshape(batch, -1)


def error_rate(logits: np.ndarray, labels: np.ndarray) -> float:
    """Percentage of argmax mistakes; ties resolve to the lowest class index."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("cannot compute an error rate over an empty dataset")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise RangeError(f"labels outside 0..{logits.shape[1] - 1}")
    predictions = np.argmax(logits, axis=1)
    return 100.0 * float(np.count_nonzero(predictions != labels)) / labels.size


def model_inputs(arch: ArchitectureSpec, dataset) -> Union[BitSlicedTensor, np.ndarray]:
    """Pick raw pixels or the (possibly pruned) bit-sliced form, whichever the arch takes."""
    channels = arch.input_hwc[2]
    if channels == dataset.channels and not dataset.pruned_slices:
        return dataset.images.astype(np.float32)
    sliced = dataset.to_bitsliced()
    if sliced.channels != channels:
        raise ShapeError(
            f"{arch.name} takes {channels} input channels; dataset provides "
            f"{dataset.channels} raw or {sliced.channels} bit-sliced"
        )
    return sliced


def evaluate(arch: ArchitectureSpec, params: ParamStore, dataset, packed: bool = True,
             threads: int = 1, inputs=None) -> float:
    """ERR in percent over `dataset`; `inputs` overrides the dataset's own images."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if inputs is None:
        inputs = model_inputs(arch, dataset)
    logits = forward(arch, params, inputs, packed=packed, threads=threads)
    return error_rate(logits, dataset.labels)


# --- cost model ---

def cost_table(arch: ArchitectureSpec, nonbinary_weight_bits: int = NONBINARY_WEIGHT_BITS) -> pd.DataFrame:
    """Per weighted layer: weights, storage bits, output positions and MACs."""
    shapes = arch.shapes()
    rows = []
    for i, layer in arch.weighted_layers():
        out_shape = shapes[i]
        positions = out_shape[0] * out_shape[1] if layer.kind == "conv" else 1
        bits = 1 if layer.precision == "binary" else nonbinary_weight_bits
        rows.append({
            "layer": i,
            "kind": layer.kind,
            "in_channels": layer.in_channels,
            "out_channels": layer.out_channels,
            "kernel": layer.kernel,
            "precision": layer.precision,
            "weights": layer.weight_count,
            "bits": layer.weight_count * bits,
            "positions": positions,
            "macs": layer.weight_count * positions,
        })
    return pd.DataFrame(rows)


def cost_model(arch: ArchitectureSpec, nonbinary_weight_bits: int = NONBINARY_WEIGHT_BITS,
               mb_bytes: int = MB_BYTES) -> CostReport:
    """Storage and operation count; batchnorm and pooling costs are excluded.

    One MAC counts as two operations. `mb_bytes` is the megabyte used for
    size_mb (decimal by default).
    """
    table = cost_table(arch, nonbinary_weight_bits)
    size_bits = int(table["bits"].sum())
    macs = int(table["macs"].sum())
    return CostReport(size_bits, size_bits / (8 * mb_bytes), macs, 2 * macs / 1e9)
