"""Run configuration.

One flat TOML file drives every command.  Parsing is strict: unknown keys
are rejected rather than ignored, and every value is range-checked up
front so failures happen before any work starts.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # 3.10 ships without tomllib
    import tomli as tomllib

from .errors import ConfigError

PIPELINE_ORDERS = ("paper-faithful", "leak-free")
MODEL_NAMES = ("svm", "knn", "tree", "voting", "cnn")
CNN_INPUTS = ("sequence", "ngram")


@dataclass(frozen=True)
class RunConfig:
    corpus_dir: str = "corpus"
    artifact_dir: str = "artifacts"
    model: str = "svm"
    pipeline_order: str = "paper-faithful"
    test_fraction: float = 0.2
    seed: int = 0
    ngram_orders: tuple[int, ...] = (1, 2)
    svm_c: float = 1.0
    svm_epochs: int = 200
    knn_k: int = 3
    tree_max_depth: int = 20
    tree_min_leaf: int = 1
    cnn_input: str = "sequence"
    cnn_seq_len: int = 512
    cnn_epochs: int = 10
    cnn_batch_size: int = 32
    cnn_lr: float = 0.001
    cnn_dropout: float = 0.3
    cnn_channels1: int = 64
    cnn_channels2: int = 128
    cnn_hidden: int = 128
    cnn_kernel: int = 5
    synth_classes: int = 3
    synth_samples: int = 30
    synth_seq_len: int = 120
    synth_vocab: int = 24


_STR_CHOICES = {
    "model": MODEL_NAMES,
    "pipeline_order": PIPELINE_ORDERS,
    "cnn_input": CNN_INPUTS,
}

_POSITIVE_INTS = (
    "svm_epochs",
    "knn_k",
    "tree_max_depth",
    "tree_min_leaf",
    "cnn_seq_len",
    "cnn_epochs",
    "cnn_batch_size",
    "cnn_channels1",
    "cnn_channels2",
    "cnn_hidden",
    "cnn_kernel",
    "synth_classes",
    "synth_samples",
    "synth_seq_len",
    "synth_vocab",
)

_POSITIVE_FLOATS = ("svm_c", "cnn_lr")


def validate_config(config: RunConfig) -> RunConfig:
    """Range-check every field; raises ConfigError naming the offender."""
    for name, choices in _STR_CHOICES.items():
        value = getattr(config, name)
        if value not in choices:
            raise ConfigError(f"{name} must be one of {', '.join(choices)}; got {value!r}")
    for name in ("corpus_dir", "artifact_dir"):
        if not isinstance(getattr(config, name), str) or not getattr(config, name):
            raise ConfigError(f"{name} must be a non-empty string")
    if not 0.0 < config.test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in (0, 1); got {config.test_fraction}")
    if config.seed < 0:
        raise ConfigError(f"seed must be non-negative; got {config.seed}")
    orders = config.ngram_orders
    if not orders or any(not isinstance(n, int) or isinstance(n, bool) or n < 1 for n in orders):
        raise ConfigError(f"ngram_orders must be a non-empty list of positive integers; got {orders!r}")
    if tuple(sorted(set(orders))) != orders:
        raise ConfigError(f"ngram_orders must be strictly increasing; got {orders!r}")
    for name in _POSITIVE_INTS:
        if getattr(config, name) < 1:
            raise ConfigError(f"{name} must be a positive integer; got {getattr(config, name)}")
    for name in _POSITIVE_FLOATS:
        if not getattr(config, name) > 0.0:
            raise ConfigError(f"{name} must be positive; got {getattr(config, name)}")
    if not 0.0 <= config.cnn_dropout < 1.0:
        raise ConfigError(f"cnn_dropout must lie in [0, 1); got {config.cnn_dropout}")
    if config.cnn_seq_len < 4:
        raise ConfigError(f"cnn_seq_len must be >= 4; got {config.cnn_seq_len}")
    return config


def _coerce(name: str, expected: type, value):
    # TOML has real booleans; bool is an int subclass in Python, so screen
    # them out of the integer fields explicitly.
    if isinstance(value, bool):
        raise ConfigError(f"{name} must be a {expected.__name__}, got a boolean")
    if expected is float and isinstance(value, int):
        return float(value)
    if expected is tuple and isinstance(value, list):
        return tuple(value)
    if not isinstance(value, expected):
        raise ConfigError(f"{name} must be a {expected.__name__}, got {type(value).__name__}")
    return value


def config_from_mapping(raw: dict) -> RunConfig:
    """Build a RunConfig from parsed key/values, rejecting unknown keys."""
    known = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    base_types = {"ngram_orders": tuple}
    kwargs = {}
    for name, value in raw.items():
        expected = base_types.get(name, type(getattr(RunConfig(), name)))
        kwargs[name] = _coerce(name, expected, value)
    return validate_config(RunConfig(**kwargs))


def load_config(path: str | Path) -> RunConfig:
    """Read and validate one TOML config file."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_mapping(raw)


def override_config(config: RunConfig, **overrides) -> RunConfig:
    """Apply CLI flag overrides (None values are ignored) and revalidate."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    return validate_config(replace(config, **changes)) if changes else config
