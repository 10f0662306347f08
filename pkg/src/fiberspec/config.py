"""Run configuration: ``key = value`` files plus command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .exceptions import ValidationError
from .io import parse_kv, read_kv
from .models import (AUTOENCODER_TRAIN_DEFAULTS, CLASSIFIER_TRAIN_DEFAULTS, AutoencoderSpec,
                     ClassifierSpec)
from .nn import TrainConfig
from .spectra import PipelineConfig


@dataclass
class RunConfig:
    """Every tunable of a CLI run.

    Training fields left at ``None`` fall back to the per-model defaults
    (batch 128 and factor 0.2 for the classifier, batch 16 and factor 0.5
    for the autoencoder).
    """

    seed: int = 0
    # preprocessing
    apply_snv: bool = True
    block: int = 5
    sg_window: int = 9
    sg_order: int = 2
    sg_deriv: int = 1
    dark_threshold: float = 0.05
    # splitting
    split_ratios: tuple = (0.6, 0.2, 0.2)
    # training
    lr: float | None = None
    batch_size: int | None = None
    lr_factor: float | None = None
    lr_patience: int | None = None
    early_stop_patience: int | None = None
    max_epochs: int = 200
    min_lr: float = 1e-6
    # classifier
    conv_filters: tuple = (20, 32)
    kernel_size: int = 5
    dense_units: int = 128
    dropout: float = 0.5
    # autoencoder / detection
    hidden: tuple = (100, 100)
    latent: int = 20
    quantile: float = 0.95
    target: str = "C1"
    detect_split: str = "D4"
    # reports
    bins: int = 50

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(apply_snv=self.apply_snv, smooth_block=self.block,
                              sg_window=self.sg_window, sg_polyorder=self.sg_order,
                              sg_deriv=self.sg_deriv, dark_threshold=self.dark_threshold)

    def train_config(self, model: str) -> TrainConfig:
        defaults = dict(CLASSIFIER_TRAIN_DEFAULTS if model == "classifier"
                        else AUTOENCODER_TRAIN_DEFAULTS)
        overrides = dict(initial_lr=self.lr, batch_size=self.batch_size,
                         lr_factor=self.lr_factor, lr_patience=self.lr_patience,
                         early_stop_patience=self.early_stop_patience)
        defaults.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig(max_epochs=self.max_epochs, min_lr=self.min_lr, seed=self.seed,
                           **defaults)

    def classifier_spec(self, input_len: int, n_classes: int) -> ClassifierSpec:
        return ClassifierSpec(input_len=input_len, conv_filters=self.conv_filters,
                              kernel_size=self.kernel_size, dense_units=self.dense_units,
                              dropout=self.dropout, n_classes=n_classes)

    def autoencoder_spec(self, input_len: int) -> AutoencoderSpec:
        return AutoencoderSpec(input_len=input_len, hidden=self.hidden, latent=self.latent)

    def validate(self) -> "RunConfig":
        self.pipeline()
        if not 0 < self.quantile < 1:
            raise ValidationError("quantile must lie in (0, 1)")
        if self.bins < 1:
            raise ValidationError("bins must be >= 1")
        return self

    def to_kv(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ", ".join(map(str, value))
            elif value is None:
                value = "default"
            out[f.name] = value
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_kv().items())


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw):
    if not isinstance(raw, str):
        return raw
    kind = _TYPES[key]
    text = raw.strip()
    try:
        if "tuple" in kind:
            cast = float if key == "split_ratios" else int
            return tuple(cast(v) for v in text.split(",") if v.strip())
        if kind == "bool":
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes", "on")
        if text.lower() == "default" and "None" in kind:
            return None
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ValidationError(f"bad value {raw!r} for config key {key!r}") from None
    return text


def config_from_kv(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Apply ``values`` on top of ``base``; unknown keys are rejected."""
    cfg = base if base is not None else RunConfig()
    kwargs = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for key, raw in values.items():
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ValidationError(f"unknown config key {key!r}")
        kwargs[key] = _convert(key, raw)
    return RunConfig(**kwargs).validate()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Config file (optional) first, then ``overrides`` (flags win)."""
    cfg = config_from_kv(read_kv(path)) if path is not None else RunConfig()
    return config_from_kv({k: v for k, v in (overrides or {}).items() if v is not None}, cfg)


def loads_config(text: str) -> RunConfig:
    return config_from_kv(parse_kv(text))
