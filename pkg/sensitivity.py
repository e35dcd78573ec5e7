# sensitivity.py
"""Post-training bit-slice sensitivity: randomize slices, measure the error shift.

The network is never modified here; slices are substituted with coin flips
and the error under that distortion is compared against a reference error.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from bitslice import randomize_slices
from errors import ConfigError, DataError, ShapeError
from network import Model, evaluate

logger = logging.getLogger(__name__)

MODES = ("single", "stack")


@dataclass(frozen=True)
class SensitivityConfig:
    trials: int = 10
    err_threshold: float = 1.0
    seed: int = 0
    mode: str = "stack"
    reference: Union[str, float] = "self"
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.err_threshold <= 0:
            raise ConfigError(f"err_threshold must be > 0, got {self.err_threshold}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.reference != "self":
            try:
                object.__setattr__(self, "reference", float(self.reference))
            except (TypeError, ValueError) as e:
                raise ConfigError(f"reference must be 'self' or a percentage, got {self.reference!r}") from e


@dataclass(frozen=True)
class SensitivityRow:
    slices: Tuple[int, ...]
    mean_err: float
    delta_err: float
    trial_errs: Tuple[float, ...] = ()

    @property
    def slice_spec(self) -> str:
        """Row label: 0 when clean, n for one slice, a-b for a contiguous run."""
        if not self.slices:
            return "0"
        if len(self.slices) == 1:
            return str(self.slices[0])
        if list(self.slices) == list(range(self.slices[0], self.slices[-1] + 1)):
            return f"{self.slices[0]}-{self.slices[-1]}"
        return ";".join(str(n) for n in self.slices)


@dataclass
class SensitivityReport:
    mode: str
    err_ref: float
    clean_err: float
    rows: List[SensitivityRow]
    turning_point: Optional[int] = None
    prunable: Tuple[int, ...] = field(default_factory=tuple)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"slice_spec": row.slice_spec, "mean_err": row.mean_err, "delta_err": row.delta_err}
             for row in self.rows],
            columns=["slice_spec", "mean_err", "delta_err"],
        )

    def summary(self) -> str:
        turning = "none" if self.turning_point is None else str(self.turning_point)
        prunable = ";".join(str(n) for n in self.prunable) or "none"
        return f"turning_point={turning} prunable={prunable}"


def _trial_err(model: Model, dataset, sliced, slices, seed) -> float:
    distorted = randomize_slices(sliced, slices, seed)
    return evaluate(model.arch, model.params, dataset, inputs=distorted)


def _analyze(model: Model, dataset, config: SensitivityConfig, mode: str) -> SensitivityReport:
    sliced = dataset.to_bitsliced()
    channels = model.arch.input_hwc[2]
    if channels != sliced.channels:
        raise ShapeError(
            f"{model.arch.name} takes {channels} input channels, the bit-sliced data has {sliced.channels}"
        )
    clean = evaluate(model.arch, model.params, dataset, inputs=sliced)
    err_ref = clean if config.reference == "self" else float(config.reference)
    kept = sliced.kept_slices
    if mode == "single":
        plan = [()] + [(n,) for n in kept]
    else:
        plan = [tuple(kept[:k]) for k in range(len(kept) + 1)]

    streams = np.random.SeedSequence(config.seed).spawn(len(plan))
    jobs = [(r, t, seq) for r, slices in enumerate(plan) if slices
            for t, seq in enumerate(streams[r].spawn(config.trials))]

    def run(job):
        r, _, seq = job
        return _trial_err(model, dataset, sliced, plan[r], seq)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            errs = list(pool.map(run, jobs))
    else:
        errs = [run(job) for job in jobs]

    per_row = {r: [] for r in range(len(plan))}
    for (r, _, _), err in zip(jobs, errs):
        per_row[r].append(err)
    rows = []
    for r, slices in enumerate(plan):
        trial_errs = tuple(per_row[r]) if slices else (clean,)
        mean_err = float(np.mean(trial_errs))
        rows.append(SensitivityRow(slices, mean_err, mean_err - err_ref, trial_errs))
        logger.info("%s %s: ERR=%.2f%% dERR=%+.2f", mode, rows[-1].slice_spec, mean_err, rows[-1].delta_err)

    report = SensitivityReport(mode, err_ref, clean, rows)
    report.prunable, report.turning_point = select_prunable(report, config.err_threshold)
    return report


def analyze_single(model: Model, dataset, config: SensitivityConfig) -> SensitivityReport:
    """One row per slice n: ERR with only slice n randomized, averaged over trials."""
    return _analyze(model, dataset, config, "single")


def analyze_stack(model: Model, dataset, config: SensitivityConfig) -> SensitivityReport:
    """Row k randomizes slices 1..k jointly in every base channel."""
    return _analyze(model, dataset, config, "stack")


def select_prunable(report: SensitivityReport, err_threshold: float = 1.0) -> Tuple[Tuple[int, ...], Optional[int]]:
    """Largest prefix of rows within `err_threshold`, and the turning point.

    The turning point is the first slice where dERR flips sign against the
    preceding run of same-signed values (zeros carry no sign), or rises by
    more than `err_threshold` over the previous row.
    """
    rows = [row for row in report.rows if row.slices]
    if not rows:
        raise DataError("sensitivity report has no distorted rows")
    prunable: List[int] = []
    for row in rows:
        if row.delta_err > err_threshold:
            break
        prunable += [n for n in row.slices if n not in prunable]

    turning = None
    run_sign = 0
    previous = None
    for row in rows:
        sign = int(np.sign(row.delta_err))
        flipped = sign != 0 and run_sign != 0 and sign != run_sign
        jumped = previous is not None and row.delta_err - previous > err_threshold
        if flipped or jumped:
            turning = row.slices[-1]
            break
        if sign != 0:
            run_sign = sign
        previous = row.delta_err
    return tuple(sorted(prunable)), turning


def write_report(report: SensitivityReport, path: str) -> None:
    """CSV rows (slice_spec, mean_err, delta_err) followed by the summary line."""
    with open(path, "w", newline="") as handle:
        report.to_frame().to_csv(handle, index=False, float_format="%.4f")
        handle.write(report.summary() + "\n")


def write_plot_data(report: SensitivityReport, path: str) -> None:
    """(slice, delta_err) pairs: the last slice of each distorted row against its dERR."""
    frame = pd.DataFrame(
        [{"slice": row.slices[-1], "delta_err": row.delta_err} for row in report.rows if row.slices],
        columns=["slice", "delta_err"],
    )
    frame.to_csv(path, index=False, float_format="%.4f")
