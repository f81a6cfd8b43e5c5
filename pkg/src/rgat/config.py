"""Run configuration read from sectioned ``key = value`` files.

Grammar (parsed with :mod:`configparser`)::

    # comment
    [section]
    key = value

Section names are only for readability: every key is looked up by name in
any section, and a key may appear only once. Booleans accept
true/false/yes/no/1/0; empty values mean "unset". Relative paths resolve
against the config file's directory. Unknown keys are errors.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .decoder import QattConfig
from .layer import ConfigError, ModelConfig

# channel counts selected per dataset on validation data
DATASET_PRESETS = {"fb15k-237": 8, "wn18rr": 4, "aifb": 2, "mutag": 4, "bgs": 4}

TASKS = ("link_prediction", "entity_classification")
PATH_FIELDS = ("train_path", "valid_path", "test_path", "labels_path", "splits_path")


@dataclass
class RunConfig:
    task: str = "link_prediction"
    preset: str | None = None
    # data
    train_path: str | None = None
    valid_path: str | None = None
    test_path: str | None = None
    labels_path: str | None = None
    splits_path: str | None = None
    entity_vocab: str = "train"  # "all": also register entities seen only in valid/test
    # encoder
    layers: int = 1
    channels: int = 4
    dim: int = 64
    relation_dim: int | None = None
    relation_mode: str = "concat"
    attention_slope: float = 0.2
    aggregate: str = "elu"
    attention_dropout: float = 0.1
    feature_dropout: float = 0.2
    # decoder
    d_q: int | None = None
    heads: int = 1
    output_nonlinearity: str = "relu"
    label_smoothing: float = 0.1
    qatt_enabled: bool = True
    # optimiser / loop
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 500
    batch_size: int = 128
    seed: int = 0
    eval_every: int = 10
    patience: int = 30
    eval_batch_size: int = 256

    def __post_init__(self) -> None:
        if self.preset is not None:
            try:
                self.channels = DATASET_PRESETS[self.preset.lower()]
            except KeyError:
                raise ConfigError(f"unknown preset {self.preset!r}; known: {sorted(DATASET_PRESETS)}") from None
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.entity_vocab not in ("train", "all"):
            raise ConfigError(f"entity_vocab must be 'train' or 'all', got {self.entity_vocab!r}")
        if self.dim % self.channels:
            raise ConfigError(f"channels={self.channels} does not divide dim={self.dim}")
        for name in ("layers", "channels", "dim", "heads", "epochs", "batch_size", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def model_config(self) -> ModelConfig:
        return ModelConfig.stack(
            self.layers, self.channels, self.dim, self.relation_dim or self.dim, self.dim,
            relation_mode=self.relation_mode, attention_slope=self.attention_slope,
            aggregate=self.aggregate, attention_dropout=self.attention_dropout,
            feature_dropout=self.feature_dropout)

    def qatt_config(self, model: ModelConfig | None = None) -> QattConfig:
        model = model or self.model_config()
        return QattConfig(self.channels, model.d_out_e, model.d_out_r, self.d_q, self.heads,
                          self.output_nonlinearity, self.qatt_enabled, self.label_smoothing)

    def replace(self, **changes) -> "RunConfig":
        if "channels" in changes:
            changes.setdefault("preset", None)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def validate_paths(self) -> None:
        need = ["train_path"]
        if self.task == "entity_classification":
            need += ["labels_path", "splits_path"]
        for name in need:
            if not getattr(self, name):
                raise ConfigError(f"{name} is required for task {self.task}")
        for name in PATH_FIELDS:
            value = getattr(self, name)
            if value and not Path(value).is_file():
                raise ConfigError(f"{name}: no such file {value}")

    def dumps(self) -> str:
        out = ["[run]"]
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(out) + "\n"


def _coerce(name: str, raw: str, kind: str):
    raw = raw.strip()
    optional = "None" in kind
    if raw == "" and optional:
        return None
    try:
        if kind.startswith("bool"):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config(text: str, base_dir: str | Path | None = None, **overrides) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    kinds = {f.name: str(f.type) for f in fields(RunConfig)}
    values: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in kinds:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            if key in values:
                raise ConfigError(f"key {key!r} given twice")
            values[key] = _coerce(key, raw, kinds[key])
    if base_dir is not None:
        for key in PATH_FIELDS:
            if values.get(key):
                p = Path(values[key])
                values[key] = str(p if p.is_absolute() else Path(base_dir) / p)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path: str | Path, **overrides) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent, **overrides)
