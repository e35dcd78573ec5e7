# training.py
"""Binary-constrained training with straight-through gradients.

Binary layers keep full-precision reference weights; the forward pass uses
their signs, the optimizer updates the reference copy, and every step clips
it back into [-1, 1].
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from bitslice import Seed, slice_rng
from errors import ConfigError, DataError, DivergenceError, RangeError
from network import (
    BN_EPS,
    ArchitectureSpec,
    ParamStore,
    evaluate,
    flatten,
    init_params,
    model_inputs,
    network_input,
    pool_windows,
)
from tensor import col2im, conv_output_size, im2col, sign_values

logger = logging.getLogger(__name__)

BN_MOMENTUM = 0.9
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

Gradients = Dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-5
    learning_rate: float = 1e-3
    lr_decay: float = 0.95
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.learning_rate < 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("learning_rate must be >= 0 and lr_decay in (0, 1]")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")


@dataclass
class TrainState:
    arch: ArchitectureSpec
    params: ParamStore
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    seed: int = 0

    @classmethod
    def initial(cls, arch: ArchitectureSpec, seed: Seed = 0) -> "TrainState":
        params = init_params(arch, seed)
        state = cls(arch, params, seed=seed if isinstance(seed, int) else 0)
        for key in trainable_keys(arch):
            state.first_moment[key] = np.zeros_like(params[key])
            state.second_moment[key] = np.zeros_like(params[key])
        return state


def trainable_keys(arch: ArchitectureSpec) -> List[str]:
    keys = []
    for i, layer in enumerate(arch.layers):
        if layer.weighted:
            keys.append(f"{i}.weight")
        elif layer.kind == "batchnorm":
            keys += [f"{i}.gamma", f"{i}.beta"]
    return keys


def sign_gradient_mask(x: np.ndarray) -> np.ndarray:
    """Straight-through window: 1 where |x| <= 1, else 0."""
    return (np.abs(x) <= 1).astype(np.float32)


def hinge_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    return _hinge(logits, labels)[0]


def _hinge(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Squared one-vs-all hinge, averaged over the batch, with its gradient."""
    labels = np.asarray(labels, dtype=np.intp)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise DataError(f"{labels.shape[0] if labels.ndim else 0} labels for {batch} logit rows")
    if batch and (labels.min() < 0 or labels.max() >= classes):
        raise RangeError(f"labels outside 0..{classes - 1}")
    rows = np.arange(batch)
    margins = 1.0 - logits[rows, labels][:, None] + logits
    margins[rows, labels] = 0.0
    violation = np.maximum(margins, 0.0)
    loss = float((violation ** 2).sum() / max(batch, 1))
    grad = 2.0 * violation / max(batch, 1)
    grad[rows, labels] = -grad.sum(axis=1)
    return loss, grad.astype(logits.dtype)


def _regularized_groups(arch: ArchitectureSpec) -> Tuple[List[str], List[str]]:
    binary = [f"{i}.weight" for i, layer in arch.weighted_layers() if layer.precision == "binary"]
    full = [f"{i}.weight" for i, layer in arch.weighted_layers() if layer.precision == "full"]
    return binary, full


def regularizer(state: TrainState, arch: Optional[ArchitectureSpec] = None) -> float:
    """mean(1 - w^2) over binary-layer weights plus mean(w^2) over full-precision ones."""
    binary, full = _regularized_groups(arch or state.arch)
    total = 0.0
    if binary:
        values = np.concatenate([state.params[key].ravel() for key in binary]).astype(np.float64)
        total += float(np.mean(1.0 - values ** 2))
    if full:
        values = np.concatenate([state.params[key].ravel() for key in full]).astype(np.float64)
        total += float(np.mean(values ** 2))
    return total


def objective(loss: float, state: TrainState, lam: float) -> float:
    return loss + lam * regularizer(state)


def _regularizer_grads(arch: ArchitectureSpec, params: ParamStore, lam: float) -> Gradients:
    binary, full = _regularized_groups(arch)
    grads = {}
    for keys, sign in ((binary, -2.0), (full, 2.0)):
        count = sum(params[key].size for key in keys)
        for key in keys:
            grads[key] = (sign * lam / count) * params[key]
    return grads


# --- forward with a retained tape ---

def forward_train(arch: ArchitectureSpec, params: ParamStore, x: np.ndarray, signed: bool = False):
    """Training-mode forward: batchnorm uses batch statistics.

    Returns (logits, tape, batch_stats); the tape holds what backward needs
    and batch_stats maps batchnorm index to (mean, var) of this batch.
    """
    tape = []
    stats = {}
    batch = x.shape[0]
    for i, layer in enumerate(arch.layers):
        if layer.kind == "conv":
            w = params[f"{i}.weight"]
            w_eff = sign_values(w) if layer.precision == "binary" else w
            cols = im2col(x, layer.kernel, 1, layer.padding, pad_value=-1.0 if signed else 0.0)
            out_h = conv_output_size(x.shape[1], layer.kernel, 1, layer.padding)
            out_w = conv_output_size(x.shape[2], layer.kernel, 1, layer.padding)
            matrix = w_eff.reshape(layer.out_channels, -1)
            tape.append((x.shape, cols, matrix))
            x = np.matmul(cols, matrix.T).reshape(batch, out_h, out_w, layer.out_channels)
            signed = False
        elif layer.kind == "dense":
            w = params[f"{i}.weight"]
            w_eff = sign_values(w) if layer.precision == "binary" else w
            flat = flatten(x)
            tape.append((x.shape, flat, w_eff))
            x = np.matmul(flat, w_eff.T)
            signed = False
        elif layer.kind == "maxpool":
            windows = pool_windows(x, layer.ceil_mode)
            choice = windows.argmax(axis=-1)
            tape.append((x.shape, choice))
            x = np.take_along_axis(windows, choice[..., None], axis=-1)[..., 0]
        elif layer.kind == "batchnorm":
            axes = tuple(range(x.ndim - 1))
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (x - mean) * inv
            gamma = params[f"{i}.gamma"]
            tape.append((xhat, inv, gamma))
            stats[i] = (mean, var)
            x = gamma * xhat + params[f"{i}.beta"]
            signed = False
        else:
            tape.append(x)
            if layer.precision == "binary":
                x, signed = sign_values(x).astype(x.dtype), True
            else:
                x = np.clip(x, -1.0, 1.0)
    return x.reshape(batch, -1), tape, stats


def _unpool(grad: np.ndarray, input_shape, choice: np.ndarray) -> np.ndarray:
    batch, height, width, channels = input_shape
    out_h, out_w = choice.shape[1:3]
    windows = np.zeros(choice.shape + (4,), dtype=grad.dtype)
    np.put_along_axis(windows, choice[..., None], grad[..., None], axis=-1)
    full = windows.reshape(batch, out_h, out_w, channels, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return full.reshape(batch, out_h * 2, out_w * 2, channels)[:, :height, :width, :]


def backward_tape(arch: ArchitectureSpec, tape, grad: np.ndarray) -> Gradients:
    grads: Gradients = {}
    for i in reversed(range(len(arch.layers))):
        layer = arch.layers[i]
        entry = tape[i]
        if layer.kind == "conv":
            input_shape, cols, matrix = entry
            g = grad.reshape(-1, layer.out_channels)
            # binary layers: gradient at the binarized weights, applied to the reference copy
            grads[f"{i}.weight"] = np.matmul(g.T, cols).reshape(layer.weight_shape)
            grad = col2im(np.matmul(g, matrix), input_shape, layer.kernel, 1, layer.padding)
        elif layer.kind == "dense":
            input_shape, flat, w_eff = entry
            grads[f"{i}.weight"] = np.matmul(grad.T, flat)
            grad = np.matmul(grad, w_eff)
            if len(input_shape) == 4:
                batch, height, width, channels = input_shape
                grad = grad.reshape(batch, channels, height, width).transpose(0, 2, 3, 1)
        elif layer.kind == "maxpool":
            input_shape, choice = entry
            grad = _unpool(grad, input_shape, choice)
        elif layer.kind == "batchnorm":
            xhat, inv, gamma = entry
            axes = tuple(range(grad.ndim - 1))
            count = grad.size // grad.shape[-1]
            dbeta = grad.sum(axis=axes)
            dgamma = (grad * xhat).sum(axis=axes)
            grads[f"{i}.gamma"] = dgamma
            grads[f"{i}.beta"] = dbeta
            grad = (gamma * inv / count) * (count * grad - dbeta - xhat * dgamma)
        else:
            grad = grad * sign_gradient_mask(entry)
    return grads


def backward(arch: ArchitectureSpec, state: TrainState, batch, lam: float = 0.0, signed: bool = False):
    """Gradients of the objective for one batch.

    Args:
        arch: Network being trained.
        state: Current reference weights and batchnorm parameters.
        batch: (inputs, labels) with inputs shaped (B, H, W, C).
        lam: Regularization weight.
        signed: True if inputs are +-1 bit planes (pads with -1).

    Returns:
        (objective, loss, gradients, batch_stats)
    """
    inputs, labels = batch
    logits, tape, stats = forward_train(arch, state.params, inputs, signed)
    loss, grad = _hinge(logits, labels)
    grads = backward_tape(arch, tape, grad)
    if lam:
        for key, value in _regularizer_grads(arch, state.params, lam).items():
            grads[key] = grads[key] + value
    return objective(loss, state, lam), loss, grads, stats


def adam_step(state: TrainState, grads: Gradients, learning_rate: float) -> None:
    state.step += 1
    correction1 = 1.0 - ADAM_BETA1 ** state.step
    correction2 = 1.0 - ADAM_BETA2 ** state.step
    for key, grad in grads.items():
        m = state.first_moment[key]
        v = state.second_moment[key]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * grad * grad
        update = learning_rate * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
        state.params[key] -= update.astype(state.params[key].dtype)


def clip_binary_weights(state: TrainState) -> None:
    for i, layer in state.arch.weighted_layers():
        if layer.precision == "binary":
            np.clip(state.params[f"{i}.weight"], -1.0, 1.0, out=state.params[f"{i}.weight"])


def update_running_stats(state: TrainState, stats) -> None:
    for i, (mean, var) in stats.items():
        for key, value in ((f"{i}.mean", mean), (f"{i}.var", var)):
            running = state.params[key]
            running *= BN_MOMENTUM
            running += ((1.0 - BN_MOMENTUM) * value).astype(running.dtype)


def train(
    arch: ArchitectureSpec,
    config: TrainConfig,
    dataset,
    validation=None,
    state: Optional[TrainState] = None,
) -> Tuple[TrainState, pd.DataFrame]:
    """Train `arch` on `dataset` and return the final state plus a per-epoch history.

    The history has columns epoch, train_loss and val_err; validation
    defaults to the training set. Runs are deterministic for a given seed.
    """
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    if state is None:
        state = TrainState.initial(arch, init_seed)
        state.seed = config.seed
    inputs, signed = network_input(arch, model_inputs(arch, dataset))
    labels = np.asarray(dataset.labels, dtype=np.intp)
    validation = validation if validation is not None else dataset
    rng = slice_rng(shuffle_seed)
    count = inputs.shape[0]
    history = []
    logger.info("Training %s on %d samples for %d epochs", arch.name, count, config.epochs)
    for epoch in range(config.epochs):
        learning_rate = config.learning_rate * config.lr_decay ** epoch
        order = rng.permutation(count)
        losses = []
        for step, start in enumerate(range(0, count, config.batch_size)):
            index = order[start:start + config.batch_size]
            value, _, grads, stats = backward(arch, state, (inputs[index], labels[index]), config.lam, signed)
            if not np.isfinite(value):
                raise DivergenceError(epoch, step, value)
            adam_step(state, grads, learning_rate)
            clip_binary_weights(state)
            update_running_stats(state, stats)
            losses.append(value)
            logger.debug("epoch %d step %d objective %.6f", epoch, step, value)
        state.epoch = epoch + 1
        val_err = evaluate(arch, state.params, validation)
        history.append({"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "val_err": val_err})
        logger.info("Epoch %d: train_loss=%.4f val_err=%.2f%%", epoch + 1, history[-1]["train_loss"], val_err)
    return state, pd.DataFrame(history, columns=["epoch", "train_loss", "val_err"])
