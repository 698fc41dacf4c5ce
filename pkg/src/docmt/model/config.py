"""Model and training configuration, plus the key-value config file format."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields

from ..errors import ConfigError


@dataclass
class TransformerConfig:
    """Encoder-decoder shape and objective switches.

    depth counts blocks per stack (encoder and decoder alike); the desk-scale
    default is 6 with 12 available. dual_encoder adds a second, untied encoder
    for first-pass translations with serial cross-attention in the decoder.
    """
    vocab_size: int
    depth: int = 6
    model_dim: int = 256
    ff_dim: int = 1024
    heads: int = 8
    max_len: int = 1024
    dual_encoder: bool = False
    masked_lm: bool = False
    mask_rate: float = 0.2
    mlm_weight: float = 1.0
    dtype: str = "float32"
    init_scaling: str = "block-index"  # "block-index" (1/sqrt(i)) | "stack-depth" | "none"
    tie_mlm_head: bool = False
    bert_mask_split: bool = False

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError("model_dim must be divisible by heads")
        if self.max_len < 8:
            raise ConfigError("max_len must be >= 8")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError("mask_rate must be in (0, 1)")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.init_scaling not in ("block-index", "stack-depth", "none"):
            raise ConfigError(f"unknown init_scaling {self.init_scaling!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")


@dataclass
class TrainConfig:
    """Optimization settings; gradients accumulate over optimizer_delay batches."""
    batch_tokens: int = 2048
    max_updates: int = 1000
    seed: int = 1
    optimizer: str = "adam"  # "adam" | "sgd"
    lr: float = 1e-3
    warmup_steps: int = 100
    optimizer_delay: int = 16
    eval_every: int = 0  # 0 disables periodic dev evaluation
    early_stop_metric: str = "bleu"  # "bleu" | "neg_ce"
    early_stop_patience: int = 0  # 0 disables early stopping
    stop_below_loss: float = 0.0  # 0 disables loss-threshold stopping
    max_len: int = 1024

    def __post_init__(self):
        if self.optimizer_delay < 1:
            raise ConfigError("optimizer_delay must be >= 1")
        if self.batch_tokens < self.max_len:
            raise ConfigError("batch_tokens must be >= max_len")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LossBreakdown:
    ce: float
    mlm: float
    total: float
    ce_tokens: int = 0
    mlm_tokens: int = 0


_BOOL = {"true": True, "false": False, "1": True, "0": False}


def _parse_value(raw: str, target_type):
    if target_type is bool:
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ConfigError(f"expected a boolean, got {raw!r}")
    return target_type(raw)


def _section_to_dataclass(cls, section) -> dict:
    known = {f.name: f.type for f in fields(cls)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    out = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown {cls.__name__} field {key!r}")
        out[key] = _parse_value(raw, types[known[key]])
    return out


def write_configs(path: str, model: TransformerConfig, train: TrainConfig | None = None) -> None:
    cp = configparser.ConfigParser()
    cp["model"] = {f.name: str(getattr(model, f.name)) for f in fields(model)}
    if train is not None:
        cp["training"] = {f.name: str(getattr(train, f.name)) for f in fields(train)}
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def read_configs(path: str) -> tuple[TransformerConfig, TrainConfig | None]:
    cp = configparser.ConfigParser()
    read = cp.read(path, encoding="utf-8")
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    if "model" not in cp:
        raise ConfigError(f"{path}: missing [model] section")
    model = TransformerConfig(**_section_to_dataclass(TransformerConfig, cp["model"]))
    train = None
    if "training" in cp:
        train = TrainConfig(**_section_to_dataclass(TrainConfig, cp["training"]))
    return model, train


def config_to_header_lines(config: TransformerConfig) -> list[str]:
    return [f"config {f.name} {getattr(config, f.name)}" for f in fields(config)]


def config_from_header_pairs(pairs: dict[str, str]) -> TransformerConfig:
    types = {"int": int, "float": float, "str": str, "bool": bool}
    known = {f.name: types[f.type] for f in fields(TransformerConfig)}
    kwargs = {}
    for key, raw in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown config field {key!r} in checkpoint")
        kwargs[key] = _parse_value(raw, known[key])
    return TransformerConfig(**kwargs)
