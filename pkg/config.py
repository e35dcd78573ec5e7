# config.py
"""Run configuration: one INI section per module, each mapped onto a frozen dataclass."""
import configparser
import io
import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from errors import ConfigError
from sensitivity import SensitivityConfig
from training import TrainConfig

logger = logging.getLogger(__name__)

DATA_SOURCES = ("synthetic", "cifar10", "records")
ARCH_CHOICES = (
    "synthetic", "baseline", "reconstructed", "fbnn", "fnn", "quarter",
    "svhn", "chars74k", "gtsrb", "file",
)
BENCH_KERNELS = ("dense", "self")
BENCH_MODES = ("kernel", "models")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    path: str = ""
    subset: int = 0  # 0 keeps every sample
    validation_fraction: float = 0.0
    samples: int = 2048
    test_samples: int = 512
    width: int = 8
    height: int = 8
    channels: int = 3
    bits: int = 8
    significant: str = "6,7,8"
    classes: int = 4
    spread: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.source not in DATA_SOURCES:
            raise ConfigError(f"[data] source must be one of {DATA_SOURCES}, got {self.source!r}")
        if self.source != "synthetic" and not self.path:
            raise ConfigError(f"[data] source={self.source} needs a path")
        if self.subset < 0 or not 0 <= self.validation_fraction < 1:
            raise ConfigError("[data] subset must be >= 0 and validation_fraction in [0, 1)")
        if self.seed < 0:
            raise ConfigError(f"[data] seed must be >= 0, got {self.seed}")
        if self.source == "synthetic" and self.test_samples < 1:
            raise ConfigError(f"[data] test_samples must be >= 1, got {self.test_samples}")

    @property
    def significant_slices(self):
        try:
            return tuple(int(n) for n in self.significant.split(",") if n.strip())
        except ValueError as e:
            raise ConfigError(f"[data] significant must list slice numbers: {e}") from e


@dataclass(frozen=True)
class NetworkConfig:
    arch: str = "synthetic"
    arch_file: str = ""
    bits: int = 8
    nonbinary_weight_bits: int = 16
    mb_bytes: int = 1_000_000
    threads: int = 1

    def __post_init__(self):
        if self.arch not in ARCH_CHOICES:
            raise ConfigError(f"[network] arch must be one of {ARCH_CHOICES}, got {self.arch!r}")
        if self.arch == "file" and not self.arch_file:
            raise ConfigError("[network] arch=file needs arch_file")
        if self.threads < 1 or self.bits < 1:
            raise ConfigError("[network] threads and bits must be >= 1")


@dataclass(frozen=True)
class RebuildConfig:
    strict: bool = True
    max_pruned: int = 5
    prunable: str = ""  # empty: take the set selected by the sensitivity analysis

    @property
    def prunable_slices(self):
        try:
            return tuple(int(n) for n in self.prunable.split(",") if n.strip())
        except ValueError as e:
            raise ConfigError(f"[rebuild] prunable must list slice numbers: {e}") from e


@dataclass(frozen=True)
class BenchConfig:
    mode: str = "kernel"
    dims: str = "256,256,256"
    repetitions: int = 10
    kernel: str = "dense"
    warmup: int = 1
    batch: int = 16
    pruned: int = 4

    def __post_init__(self):
        if self.mode not in BENCH_MODES:
            raise ConfigError(f"[bench] mode must be one of {BENCH_MODES}, got {self.mode!r}")
        if self.kernel not in BENCH_KERNELS:
            raise ConfigError(f"[bench] kernel must be one of {BENCH_KERNELS}, got {self.kernel!r}")
        if self.repetitions < 1 or self.warmup < 0 or self.batch < 1:
            raise ConfigError("[bench] repetitions and batch must be >= 1, warmup >= 0")

    @property
    def shape(self):
        try:
            m, k, n = (int(v) for v in self.dims.split(","))
        except ValueError as e:
            raise ConfigError(f"[bench] dims must be M,K,N: {e}") from e
        if min(m, k, n) < 1:
            raise ConfigError(f"[bench] dims must be positive, got {self.dims}")
        return m, k, n


SECTIONS = {
    "data": DataConfig,
    "network": NetworkConfig,
    "training": TrainConfig,
    "sensitivity": SensitivityConfig,
    "rebuild": RebuildConfig,
    "bench": BenchConfig,
}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    rebuild: RebuildConfig = field(default_factory=RebuildConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)


def _convert(section, key, raw, default):
    try:
        if isinstance(default, bool):
            value = raw.strip().lower()
            if value not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(f"not a boolean: {raw!r}")
            return configparser.ConfigParser.BOOLEAN_STATES[value]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from e


def parse_config(text):
    """Parse an INI document into a RunConfig; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    parts = {}
    for name, cls in SECTIONS.items():
        defaults = cls()
        known = {f.name: getattr(defaults, f.name) for f in fields(cls)}
        values = {}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in known:
                    raise ConfigError(f"[{name}] unknown key {key!r}")
                values[key] = _convert(name, key, raw, known[key])
        parts[name] = cls(**values)
    return RunConfig(**parts)


def load_config(path=None):
    if path is None:
        return RunConfig()
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as handle:
        return parse_config(handle.read())


def apply_overrides(run, seed: Optional[int] = None, threads: Optional[int] = None):
    """--seed and --threads win over the file."""
    if seed is not None:
        run = replace(
            run,
            data=replace(run.data, seed=seed),
            training=replace(run.training, seed=seed),
            sensitivity=replace(run.sensitivity, seed=seed),
        )
    if threads is not None:
        run = replace(
            run,
            network=replace(run.network, threads=threads),
            sensitivity=replace(run.sensitivity, threads=threads),
        )
    return run


def render_config(run):
    """The fully-resolved configuration as INI text, defaults included."""
    parser = configparser.ConfigParser(interpolation=None)
    for name in SECTIONS:
        section = getattr(run, name)
        parser[name] = {
            f.name: str(getattr(section, f.name)).lower() if isinstance(getattr(section, f.name), bool)
            else str(getattr(section, f.name))
            for f in fields(section)
        }
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()
