# cli.py
"""Command-line pipeline: convert, train, eval, sensitivity, rebuild, cost, bench."""
import argparse
import logging
import os
import sys
import timeit
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import database
import utils
from bitslice import BitSlicedTensor, int2b, slice_rng, write_bitsliced
from checkpoint import load_checkpoint, save_checkpoint
from config import apply_overrides, load_config, render_config
from data import load_cifar10, read_records, split_dataset, synth_bit_task
from errors import EXIT_NUMERIC, EXIT_OK, CbnnError, ConfigError, DataError
from network import (
    Model,
    arch_from_text,
    baseline_cifar_arch,
    binary_first_layer,
    chars74k_arch,
    cost_model,
    cost_table,
    evaluate,
    forward,
    full_precision_arch,
    gtsrb_arch,
    init_params,
    quarter_cifar_arch,
    reconstruct_arch,
    svhn_arch,
    synthetic_arch,
)
from rebuild import compression_sweep, rebuild_and_retrain, shrink_arch, sweep_frame
from sensitivity import analyze_single, analyze_stack, write_plot_data, write_report
from tensor import binary_gemm, dense_gemm, sign_binarize
from training import train

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they share the exit-code path."""

    def error(self, message):
        raise ConfigError(message)


# --- benchmarks ---

@dataclass(frozen=True)
class BenchReport:
    kernel: str
    dims: Tuple[int, int, int]
    repetitions: int
    packed_seconds: float
    reference_seconds: float

    @property
    def speedup(self) -> float:
        return self.reference_seconds / self.packed_seconds

    def to_frame(self) -> pd.DataFrame:
        m, k, n = self.dims
        return pd.DataFrame([{
            "kernel": self.kernel, "m": m, "k": k, "n": n, "repetitions": self.repetitions,
            "packed_seconds": self.packed_seconds, "reference_seconds": self.reference_seconds,
            "speedup": self.speedup,
        }])


@dataclass(frozen=True)
class ModelBenchReport:
    base_name: str
    compact_name: str
    batch: int
    base_seconds: float
    compact_seconds: float
    gops_ratio: float

    @property
    def wall_ratio(self) -> float:
        return self.base_seconds / self.compact_seconds

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            "base": self.base_name, "compact": self.compact_name, "batch": self.batch,
            "base_seconds": self.base_seconds, "compact_seconds": self.compact_seconds,
            "wall_ratio": self.wall_ratio, "gops_ratio": self.gops_ratio,
        }])


def time_call(fn: Callable[[], object], repetitions: int, warmup: int = 1) -> float:
    """Median wall time of `repetitions` single calls, after `warmup` untimed ones."""
    for _ in range(warmup):
        fn()
    return float(np.median(timeit.Timer(fn).repeat(repeat=repetitions, number=1)))


def bench_kernels(dims: Tuple[int, int, int], repetitions: int = 10, kernel: str = "dense",
                  threads: int = 1, seed: int = 0, warmup: int = 1) -> BenchReport:
    """Time binary_gemm against dense_gemm (or against itself) on one logical M x K x N product."""
    m, k, n = dims
    rng = slice_rng(seed)
    a = np.where(rng.random((m, k)) < 0.5, -1.0, 1.0).astype(np.float32)
    b = np.where(rng.random((n, k)) < 0.5, -1.0, 1.0).astype(np.float32)
    packed_a, packed_b = sign_binarize(a), sign_binarize(b)
    b_t = np.ascontiguousarray(b.T)

    def packed():
        return binary_gemm(packed_a, packed_b, threads)

    def reference():
        if kernel == "self":
            return binary_gemm(packed_a, packed_b, threads)
        return dense_gemm(a, b_t)

    report = BenchReport(
        kernel, (m, k, n), repetitions,
        time_call(packed, repetitions, warmup), time_call(reference, repetitions, warmup),
    )
    logger.info("bench %s %dx%dx%d: speedup %.2fx", kernel, m, k, n, report.speedup)
    return report


def random_inputs(arch, batch: int, seed: int, bits: int = 8, pruned: int = 0):
    """Random pixels for raw-input nets, random bit planes for bit-sliced ones."""
    height, width, channels = arch.input_hwc
    rng = slice_rng(seed)
    kept = bits - pruned
    if channels % kept == 0 and arch.weighted_layers()[0][1].precision == "full":
        planes = rng.integers(0, 2, size=(batch, height, width, channels), dtype=np.uint8)
        return BitSlicedTensor(planes, channels // kept, bits, 2 ** bits - 1, tuple(range(pruned + 1, bits + 1)))
    return rng.integers(0, 256, size=(batch, height, width, channels)).astype(np.float32)


def bench_models(base, compact, batch: int = 16, repetitions: int = 10, threads: int = 1,
                 seed: int = 0, bits: int = 8, pruned: int = 0, warmup: int = 1) -> ModelBenchReport:
    """End-to-end inference time of two networks next to their GOPs ratio."""
    base_params = init_params(base, seed)
    compact_params = init_params(compact, seed)
    base_inputs = random_inputs(base, batch, seed, bits)
    compact_inputs = random_inputs(compact, batch, seed, bits, pruned)
    base_seconds = time_call(lambda: forward(base, base_params, base_inputs, threads=threads), repetitions, warmup)
    compact_seconds = time_call(
        lambda: forward(compact, compact_params, compact_inputs, threads=threads), repetitions, warmup,
    )
    gops_ratio = cost_model(base).macs / cost_model(compact).macs
    report = ModelBenchReport(base.name, compact.name, batch, base_seconds, compact_seconds, gops_ratio)
    logger.info("bench models: wall ratio %.2fx, GOPs ratio %.2fx", report.wall_ratio, report.gops_ratio)
    return report


# --- helpers shared by the subcommands ---

def load_data(data_cfg):
    """Return (train, validation or None, test) for the configured source."""
    if data_cfg.source == "synthetic":
        full = synth_bit_task(
            data_cfg.samples + data_cfg.test_samples, data_cfg.width, data_cfg.height, data_cfg.channels,
            data_cfg.bits, data_cfg.significant_slices, data_cfg.classes, data_cfg.seed, data_cfg.spread,
        )
        train_set = full.subset(np.arange(data_cfg.samples))
        test = replace(full.subset(np.arange(data_cfg.samples, len(full))), split="test")
    elif data_cfg.source == "cifar10":
        train_set, test = load_cifar10(data_cfg.path)
    else:
        records = read_records(data_cfg.path, (data_cfg.height, data_cfg.width, data_cfg.channels), data_cfg.classes)
        train_set, test = records, replace(records, split="test")
    if data_cfg.subset and data_cfg.subset < len(train_set):
        pick = np.sort(slice_rng(data_cfg.seed).choice(len(train_set), data_cfg.subset, replace=False))
        train_set = train_set.subset(pick)
    validation = None
    if data_cfg.validation_fraction:
        train_set, validation = split_dataset(train_set, data_cfg.validation_fraction, data_cfg.seed)
    logger.info("Data: %d train, %d validation, %d test samples", len(train_set),
                0 if validation is None else len(validation), len(test))
    return train_set, validation, test


def build_arch(run):
    net = run.network
    bits = net.bits
    if net.arch == "file":
        try:
            with open(net.arch_file, encoding="utf-8") as handle:
                return arch_from_text(handle.read())
        except OSError as e:
            raise ConfigError(f"cannot read architecture file {net.arch_file}: {e}") from e
    if net.arch == "synthetic":
        data = run.data
        return synthetic_arch(data.width, data.height, data.channels, bits, data.classes)
    builders = {
        "baseline": baseline_cifar_arch,
        "reconstructed": lambda: reconstruct_arch(baseline_cifar_arch(), bits),
        "fbnn": lambda: binary_first_layer(baseline_cifar_arch(), bits),
        "fnn": lambda: full_precision_arch(reconstruct_arch(baseline_cifar_arch(), bits)),
        "quarter": quarter_cifar_arch,
        "svhn": svhn_arch,
        "chars74k": chars74k_arch,
        "gtsrb": lambda: gtsrb_arch(bits),
    }
    return builders[net.arch]()


def _for_model(model: Model, dataset):
    pruned = model.metadata.get("pruned", ())
    return dataset.prune(pruned) if pruned else dataset


def _out(args, default):
    return args.out or default


def _sibling(path, suffix):
    root, _ = os.path.splitext(path)
    return f"{root}{suffix}"


def _write_table(df, path):
    if path.endswith(".xlsx"):
        return utils.write_table_xlsx(df, path)
    return utils.write_table_csv(df, path)


def _record(args, run, command):
    database.create_tables(args.db)
    return database.record_run(command, run.training.seed, render_config(run), args.db)


# --- subcommands ---

def cmd_convert(args, run):
    shape = (run.data.height, run.data.width, run.data.channels)
    if args.cifar:
        shape = (32, 32, 3)
    dataset = read_records(args.input, shape, class_count=256)
    sliced = int2b(dataset.pixels())
    out = _out(args, _sibling(args.input, ".bits"))
    count = write_bitsliced(sliced, out)
    logger.info("Converted %d images to %d channels", count, sliced.channels)
    print(f"images={count} channels={sliced.channels} out={out}")
    return EXIT_OK


def cmd_train(args, run):
    arch = build_arch(run)
    train_set, validation, test = load_data(run.data)
    state, history = train(arch, run.training, train_set, validation)
    final_err = evaluate(arch, state.params, test, threads=run.network.threads)
    model = Model(arch, state.params, {"seed": run.training.seed, "epochs": state.epoch, "final_err": final_err})
    out = _out(args, "model.cbnn")
    save_checkpoint(model, out)
    utils.write_table_csv(history, _sibling(out, "_history.csv"))
    _record(args, run, "train")
    print(f"err={final_err:.2f} out={out}")
    return EXIT_OK


def cmd_eval(args, run):
    model = load_checkpoint(args.checkpoint)
    _, _, test = load_data(run.data)
    err = evaluate(model.arch, model.params, _for_model(model, test), threads=run.network.threads)
    _record(args, run, "eval")
    print(f"err={err:.2f}")
    return EXIT_OK


def cmd_sensitivity(args, run):
    model = load_checkpoint(args.checkpoint)
    _, _, test = load_data(run.data)
    analyze = analyze_single if run.sensitivity.mode == "single" else analyze_stack
    report = analyze(model, _for_model(model, test), run.sensitivity)
    out = _out(args, "sensitivity.csv")
    write_report(report, out)
    write_plot_data(report, _sibling(out, "_plot.csv"))
    run_id = _record(args, run, "sensitivity")
    database.store_sensitivity(run_id, report, args.db)
    print(report.summary())
    return EXIT_OK


def cmd_rebuild(args, run):
    base = load_checkpoint(args.checkpoint)
    train_set, _, test = load_data(run.data)
    already = tuple(base.metadata.get("pruned", ()))
    prunable = run.rebuild.prunable_slices
    if not prunable:
        report = analyze_stack(base, _for_model(base, test), replace(run.sensitivity, mode="stack"))
        prunable = report.prunable
        logger.info("Sensitivity: %s", report.summary())
    prunable = tuple(sorted(set(prunable) | set(already)))
    if len(prunable) >= train_set.bits:
        prunable = tuple(sorted(prunable))[:-1]
        logger.warning("Every slice is within the threshold; keeping slice %d", train_set.bits)
    model, compression = rebuild_and_retrain(
        base.arch, prunable, train_set, run.training, test=test, base_model=base, strict=run.rebuild.strict,
        base_pruned=already,
    )
    out = _out(args, "compact.cbnn")
    save_checkpoint(model, out)
    frame = compression.to_frame()
    utils.write_table_csv(frame, _sibling(out, "_compression.csv"))
    run_id = _record(args, run, "rebuild")
    database.store_compression(run_id, frame, args.db)
    print(f"pruned={';'.join(str(n) for n in prunable) or 'none'} "
          f"err={compression.compact_err:.2f} size_ratio={compression.size_ratio:.2f} "
          f"gops_ratio={compression.gops_ratio:.2f}")
    return EXIT_OK


def cmd_cost(args, run):
    if args.arch_file:
        run = replace(run, network=replace(run.network, arch="file", arch_file=args.arch_file))
    arch = build_arch(run)
    net = run.network
    if args.sweep:
        if arch.weighted_layers()[0][1].precision == "full":
            raise ConfigError(f"--sweep needs a raw-pixel baseline; {arch.name} already takes bit-sliced input")
        frame = sweep_frame(compression_sweep(arch, net.bits, run.rebuild.max_pruned, strict=run.rebuild.strict))
        if args.out:
            _write_table(frame, args.out)
        print(frame.to_string(index=False))
        return EXIT_OK
    report = cost_model(arch, net.nonbinary_weight_bits, net.mb_bytes)
    if args.out:
        _write_table(cost_table(arch, net.nonbinary_weight_bits), args.out)
    print(f"size_mb={report.size_mb:.2f} gops={report.gops:.2f}")
    return EXIT_OK


def cmd_bench(args, run):
    bench = run.bench
    if bench.mode == "models":
        return cmd_bench_models(args, run)
    report = bench_kernels(bench.shape, bench.repetitions, bench.kernel, run.network.threads,
                           run.training.seed, bench.warmup)
    if args.out:
        _write_table(report.to_frame(), args.out)
    m, k, n = report.dims
    print(f"kernel={report.kernel} dims={m}x{k}x{n} packed_s={report.packed_seconds:.6f} "
          f"reference_s={report.reference_seconds:.6f} speedup={report.speedup:.2f}")
    return EXIT_OK


def cmd_bench_models(args, run):
    bench = run.bench
    base = build_arch(run)
    bits = run.network.bits
    compact = shrink_arch(reconstruct_arch(base, bits), bits, bench.pruned, run.rebuild.strict)
    report = bench_models(base, compact, bench.batch, bench.repetitions, run.network.threads,
                          run.training.seed, bits, bench.pruned, bench.warmup)
    if args.out:
        _write_table(report.to_frame(), args.out)
    print(f"base={report.base_name} compact={report.compact_name} wall_ratio={report.wall_ratio:.2f} "
          f"gops_ratio={report.gops_ratio:.2f}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("--threads", type=int, help="worker cap for kernels and trials")
    common.add_argument("--out", help="output path")
    common.add_argument("--db", default=database.DATABASE_NAME, help="sqlite results database")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = ArgumentParser(prog="cbnn", description="Compact binarized network toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    convert = sub.add_parser("convert", parents=[common], help="pixel records to a bit-sliced file")
    convert.add_argument("input")
    convert.add_argument("--cifar", action="store_true", help="input is a CIFAR-10 batch (32x32x3)")
    convert.set_defaults(func=cmd_convert)

    train_cmd = sub.add_parser("train", parents=[common], help="train and save a checkpoint")
    train_cmd.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "test error of a checkpoint"),
                             ("sensitivity", cmd_sensitivity, "bit-slice sensitivity report"),
                             ("rebuild", cmd_rebuild, "prune, shrink and retrain")):
        command = sub.add_parser(name, parents=[common], help=text)
        command.add_argument("checkpoint")
        command.set_defaults(func=func)

    cost = sub.add_parser("cost", parents=[common], help="size and GOPs of an architecture")
    cost.add_argument("arch_file", nargs="?", help="architecture document (default: [network] arch)")
    cost.add_argument("--sweep", action="store_true", help="compression table for P = 0..max_pruned")
    cost.set_defaults(func=cmd_cost)

    bench = sub.add_parser("bench", parents=[common], help="packed vs dense kernel timing")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT, force=True,
        )
        if args.threads is not None and args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        if args.seed is not None and args.seed < 0:
            raise ConfigError(f"--seed must be >= 0, got {args.seed}")
        run = apply_overrides(load_config(args.config), args.seed, args.threads)
        logger.info("Resolved configuration:\n%s", render_config(run))
        return args.func(args, run)
    except CbnnError as e:
        logging.debug("Detailed error:", exc_info=True)
        print(f"error code={e.exit_code} kind={type(e).__name__} message={e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logging.debug("Detailed error:", exc_info=True)
        err = DataError(str(e))
        print(f"error code={err.exit_code} kind={type(e).__name__} message={e}", file=sys.stderr)
        return err.exit_code
    except (FloatingPointError, ZeroDivisionError, OverflowError) as e:
        logging.debug("Detailed error:", exc_info=True)
        print(f"error code={EXIT_NUMERIC} kind={type(e).__name__} message={e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
