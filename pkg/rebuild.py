# rebuild.py
"""Shrink a reconstructed network to match its pruned input and report compression."""
import logging
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from errors import RangeError, ShapeError
from network import ArchitectureSpec, CostReport, Model, cost_model, evaluate, reconstruct_arch, rechain_arch
from training import TrainConfig, train

logger = logging.getLogger(__name__)

ROUND_MULTIPLE = 8
PRINTED_DECIMALS = 2


@dataclass(frozen=True)
class CompressionReport:
    base_name: str
    compact_name: str
    base_cost: CostReport
    compact_cost: CostReport
    pruned: int = 0
    base_err: Optional[float] = None
    compact_err: Optional[float] = None

    @property
    def size_ratio(self) -> float:
        return self.base_cost.size_bits / self.compact_cost.size_bits

    @property
    def gops_ratio(self) -> float:
        return self.base_cost.macs / self.compact_cost.macs

    @property
    def printed_size_ratio(self) -> float:
        """Ratio of the sizes as tables print them (MB to two decimals)."""
        return round(self.base_cost.size_mb, PRINTED_DECIMALS) / round(self.compact_cost.size_mb, PRINTED_DECIMALS)

    @property
    def printed_gops_ratio(self) -> float:
        return round(self.base_cost.gops, PRINTED_DECIMALS) / round(self.compact_cost.gops, PRINTED_DECIMALS)

    @property
    def delta_err(self) -> Optional[float]:
        if self.base_err is None or self.compact_err is None:
            return None
        return self.compact_err - self.base_err

    def to_frame(self) -> pd.DataFrame:
        """Two rows, base and compact, in the column order of a compression table."""
        base = {
            "arch": self.base_name, "pruned": 0, "err": self.base_err,
            "delta_err": None if self.base_err is None else 0.0,
            "size_mb": self.base_cost.size_mb, "size_ratio": 1.0, "printed_size_ratio": 1.0,
            "gops": self.base_cost.gops, "gops_ratio": 1.0, "printed_gops_ratio": 1.0,
        }
        rows = [base, self.compact_row()]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def compact_row(self) -> dict:
        return {
            "arch": self.compact_name, "pruned": self.pruned, "err": self.compact_err, "delta_err": self.delta_err,
            "size_mb": self.compact_cost.size_mb, "size_ratio": self.size_ratio,
            "printed_size_ratio": self.printed_size_ratio, "gops": self.compact_cost.gops,
            "gops_ratio": self.gops_ratio, "printed_gops_ratio": self.printed_gops_ratio,
        }


REPORT_COLUMNS = [
    "arch", "pruned", "err", "delta_err", "size_mb", "size_ratio", "printed_size_ratio",
    "gops", "gops_ratio", "printed_gops_ratio",
]


def _scaled_depth(depth: int, current: int, kept: int, strict: bool, where: str) -> int:
    if depth * kept % current == 0:
        return depth * kept // current
    if strict:
        raise ShapeError(
            f"{where}: depth {depth} x {kept}/{current} is not integral; "
            f"pass strict=False to round down to a multiple of {ROUND_MULTIPLE}"
        )
    exact = depth * kept // current
    return exact // ROUND_MULTIPLE * ROUND_MULTIPLE or max(1, exact)


def shrink_arch(arch: ArchitectureSpec, bits: int, pruned: int, strict: bool = True,
                already_pruned: int = 0) -> ArchitectureSpec:
    """Scale every hidden conv/dense depth and the input depth by (N - P) / N.

    Args:
        arch: Network taking C * (N - already_pruned) bit-sliced input channels.
        bits: N, the slices per base channel.
        pruned: P, the number of pruned slices in total.
        strict: Reject depths that do not scale to whole numbers.
        already_pruned: Slices `arch` was built without; depths then scale
            by (N - P) / (N - already_pruned).

    Returns:
        The compact architecture; class count, layer count and first-layer
        precision are unchanged.
    """
    if not 0 <= pruned < bits:
        raise RangeError(f"pruned slice count {pruned} must be in 0..{bits - 1}")
    if not 0 <= already_pruned <= pruned:
        raise RangeError(f"{already_pruned} slices already pruned, cannot shrink to {pruned}")
    if pruned == already_pruned:
        return arch
    current, kept = bits - already_pruned, bits - pruned
    width, height, channels = arch.input_shape
    if channels % current:
        raise ShapeError(f"{arch.name}: {channels} input channels are not a multiple of {current} slices")
    depths = {
        i: _scaled_depth(layer.out_channels, current, kept, strict, f"{arch.name} layer {i}")
        for i, layer in arch.weighted_layers()[:-1]
    }
    input_shape = (width, height, channels // current * kept)
    name = arch.name.rsplit("-p", 1)[0] if already_pruned else arch.name
    return rechain_arch(arch, depths, input_shape, f"{name}-p{pruned}")


def _retrain_seed(seed: int, pruned: int) -> int:
    return int(np.random.SeedSequence([seed, pruned]).generate_state(1)[0])


def rebuild_and_retrain(
    base_arch: ArchitectureSpec,
    prunable: Iterable[int],
    dataset,
    config: TrainConfig,
    test=None,
    base_model: Optional[Model] = None,
    strict: bool = True,
    base_pruned: Optional[Iterable[int]] = None,
) -> Tuple[Model, CompressionReport]:
    """Prune the input slices, shrink the network and train it from scratch.

    `base_arch` is the reconstructed network the prunable set was measured on;
    `base_model`, when given, supplies its error for the report. Errors are
    measured on `test`, or on `dataset` when no test split is given.

    `base_pruned` lists slices `base_arch` was already built without (by
    default the `pruned` metadata of `base_model`); they stay pruned and the
    depths shrink from the base's slice count. Both datasets are unpruned.
    """
    if base_pruned is None:
        base_pruned = base_model.metadata.get("pruned", ()) if base_model is not None else ()
    base_pruned = tuple(sorted({int(n) for n in base_pruned}))
    prunable = tuple(sorted({int(n) for n in prunable} | set(base_pruned)))
    bits = dataset.bits
    compact_arch = shrink_arch(base_arch, bits, len(prunable), strict, already_pruned=len(base_pruned))
    train_set = dataset.prune(prunable) if prunable else dataset
    test = test if test is not None else dataset
    test_set = test.prune(prunable) if prunable else test
    retrain = replace(config, seed=_retrain_seed(config.seed, len(prunable)))
    logger.info("Rebuilding %s without slices %s as %s", base_arch.name, list(prunable), compact_arch.name)
    state, _ = train(compact_arch, retrain, train_set)
    compact_err = evaluate(compact_arch, state.params, test_set)
    base_test = test.prune(base_pruned) if base_pruned else test
    base_err = evaluate(base_model.arch, base_model.params, base_test) if base_model is not None else None
    model = Model(compact_arch, state.params, {
        "seed": retrain.seed, "epochs": state.epoch, "final_err": compact_err,
        "pruned": prunable,
    })
    report = CompressionReport(
        base_arch.name, compact_arch.name, cost_model(base_arch), cost_model(compact_arch),
        len(prunable), base_err, compact_err,
    )
    logger.info("Compact model: ERR=%.2f%% size ratio %.2fx GOPs ratio %.2fx",
                compact_err, report.size_ratio, report.gops_ratio)
    return model, report


def compression_sweep(
    base_arch: ArchitectureSpec, bits: int = 8, max_pruned: int = 5,
    reconstructed: Optional[ArchitectureSpec] = None, strict: bool = True,
) -> List[CompressionReport]:
    """Cost-only rows for P = 0..max_pruned against the raw-input baseline.

    The compact network for P is shrink_arch(reconstruct_arch(base_arch), N, P)
    unless a reconstructed network is supplied.
    """
    reconstructed = reconstructed or reconstruct_arch(base_arch, bits)
    base_cost = cost_model(base_arch)
    reports = []
    for pruned in range(max_pruned + 1):
        compact = shrink_arch(reconstructed, bits, pruned, strict)
        reports.append(CompressionReport(base_arch.name, compact.name, base_cost, cost_model(compact), pruned))
    return reports


def sweep_frame(reports: List[CompressionReport]) -> pd.DataFrame:
    """Baseline row followed by one compact row per report."""
    if not reports:
        return pd.DataFrame(columns=REPORT_COLUMNS)
    frame = reports[0].to_frame().iloc[:1]
    compact = pd.DataFrame([report.compact_row() for report in reports], columns=REPORT_COLUMNS)
    return pd.concat([frame, compact], ignore_index=True)
