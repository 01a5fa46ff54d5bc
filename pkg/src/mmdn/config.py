"""Flat ``section.key = value`` run configuration with strict validation.

Lines are ``#`` comments or assignments; every key is checked against the
schema and errors always name the offending key. The effective config (all
defaults resolved) can be re-emitted and parsed back unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

MODEL_KINDS = ("mmdensenet", "densenet", "mini-vgg", "mini-vgg-fuse",
               "mini-resnet", "mini-resnet-fuse")


class ConfigError(Exception):
    pass


@dataclass
class ModelSection:
    kind: str = "mmdensenet"
    growth_rate: int = 8
    block_layers: list[int] = field(default_factory=lambda: [8, 8, 8])
    compression: float = 0.5
    num_classes: int = 3
    image_size: int = 32
    dropout: float = 0.0


@dataclass
class TrainSection:
    epochs: int = 30
    batch_size: int = 16
    optimizer: str = "sgd"          # sgd | adam
    schedule: str = "constant:0.001"
    seed: int = 0
    weight_decay: float = 1e-4
    momentum: float = 0.9
    early_stop_val_acc: float = 1.1   # > 1 disables early stopping


@dataclass
class DataSection:
    root: str = "dataset"
    modality_b_kind: str = "depth"  # depth (1 channel) | rgb (3 channels)


@dataclass
class OutputSection:
    dir: str = "run"
    log_every: int = 50


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def modality_b_channels(self) -> int:
        return 1 if self.data.modality_b_kind == "depth" else 3


_PARSERS = {
    "model.kind": ("model", "kind", str),
    "model.growth_rate": ("model", "growth_rate", int),
    "model.block_layers": ("model", "block_layers",
                           lambda s: [int(x) for x in s.split(",")]),
    "model.compression": ("model", "compression", float),
    "model.num_classes": ("model", "num_classes", int),
    "model.image_size": ("model", "image_size", int),
    "model.dropout": ("model", "dropout", float),
    "train.epochs": ("train", "epochs", int),
    "train.batch_size": ("train", "batch_size", int),
    "train.optimizer": ("train", "optimizer", str),
    "train.schedule": ("train", "schedule", str),
    "train.seed": ("train", "seed", int),
    "train.weight_decay": ("train", "weight_decay", float),
    "train.momentum": ("train", "momentum", float),
    "train.early_stop_val_acc": ("train", "early_stop_val_acc", float),
    "data.root": ("data", "root", str),
    "data.modality_b_kind": ("data", "modality_b_kind", str),
    "output.dir": ("output", "dir", str),
    "output.log_every": ("output", "log_every", int),
}


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, attr, parse = _PARSERS[key]
        try:
            setattr(getattr(cfg, section), attr, parse(value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}")
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def _fail(key: str, message: str):
    raise ConfigError(f"{key}: {message}")


def _validate(cfg: RunConfig) -> None:
    m, t, d = cfg.model, cfg.train, cfg.data
    if m.kind not in MODEL_KINDS:
        _fail("model.kind", f"{m.kind!r} not one of {MODEL_KINDS}")
    if m.growth_rate < 1:
        _fail("model.growth_rate", f"must be >= 1, got {m.growth_rate}")
    if m.kind in ("mmdensenet", "densenet"):
        if len(m.block_layers) != 3 or any(b < 1 for b in m.block_layers):
            _fail("model.block_layers", f"need 3 positive counts, got {m.block_layers}")
        if m.image_size % 4:
            _fail("model.image_size", f"must be divisible by 4, got {m.image_size}")
    else:
        if m.image_size % 8:
            _fail("model.image_size", f"must be divisible by 8, got {m.image_size}")
    if not 0 < m.compression <= 1:
        _fail("model.compression", f"must be in (0, 1], got {m.compression}")
    if m.num_classes < 2:
        _fail("model.num_classes", f"must be >= 2, got {m.num_classes}")
    if not 0 <= m.dropout < 1:
        _fail("model.dropout", f"must be in [0, 1), got {m.dropout}")
    if t.epochs < 1:
        _fail("train.epochs", f"must be >= 1, got {t.epochs}")
    if t.batch_size < 1:
        _fail("train.batch_size", f"must be >= 1, got {t.batch_size}")
    if t.optimizer not in ("sgd", "adam"):
        _fail("train.optimizer", f"{t.optimizer!r} not one of ('sgd', 'adam')")
    if t.weight_decay < 0:
        _fail("train.weight_decay", f"must be >= 0, got {t.weight_decay}")
    if not 0 <= t.momentum < 1:
        _fail("train.momentum", f"must be in [0, 1), got {t.momentum}")
    if d.modality_b_kind not in ("depth", "rgb"):
        _fail("data.modality_b_kind", f"{d.modality_b_kind!r} not one of ('depth', 'rgb')")
    if cfg.output.log_every < 1:
        _fail("output.log_every", f"must be >= 1, got {cfg.output.log_every}")


def emit_config(cfg: RunConfig) -> str:
    """Render the fully resolved config; parses back to an equal RunConfig."""
    lines = ["# effective run configuration"]
    for key, (section, attr, _) in _PARSERS.items():
        value = getattr(getattr(cfg, section), attr)
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
