"""Experiment configuration: a flat key=value text format with documented
keys, parsed into a dataclass and validated before any work starts."""

import os
from dataclasses import dataclass, fields

from .errors import ConfigError


@dataclass
class ExperimentConfig:
    dataset: str = ""
    out_dir: str = ""
    bundle: str = ""
    seed: int = 0

    # split
    base_count: int = 4
    n_way: int = 2
    k_shot: int = 5
    n_incremental: int = 3

    # model
    channels: tuple = (16, 32, 64)
    embed_dim: int = 64
    d_common: int = 64
    disc_channels: int = 16
    gate_hidden: tuple = (128, 64)
    score_clamp: float = 20.0

    # training
    epochs_base: int = 100
    epochs_incremental: int = 20
    batch_size: int = 25
    lr: float = 1e-3
    incremental_lr_scale: float = 0.1
    lambda_bet: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    # ablation switches
    enable_bet: bool = True
    enable_iad: bool = True

    # reporting
    reference_final: float = None

    @property
    def num_scales(self):
        return len(self.channels)


def _parse_bool(value, key):
    low = value.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"config: key '{key}' expects a boolean, got '{value}'")


def _parse_int_tuple(value, key):
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"config: key '{key}' expects comma-separated ints, got '{value}'")


def parse_config_text(text):
    cfg = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"config line {lineno}: unknown key '{key}'")
        if key in ("channels", "gate_hidden"):
            setattr(cfg, key, _parse_int_tuple(value, key))
        elif key in ("enable_bet", "enable_iad"):
            setattr(cfg, key, _parse_bool(value, key))
        elif key == "reference_final":
            setattr(cfg, key, float(value) if value else None)
        elif isinstance(getattr(cfg, key), int):
            try:
                setattr(cfg, key, int(value))
            except ValueError:
                raise ConfigError(f"config line {lineno}: key '{key}' expects an int")
        elif isinstance(getattr(cfg, key), float):
            try:
                setattr(cfg, key, float(value))
            except ValueError:
                raise ConfigError(f"config line {lineno}: key '{key}' expects a float")
        else:
            setattr(cfg, key, value)
    return cfg


def parse_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e}")
    return parse_config_text(text)


def config_to_text(cfg):
    """Serialize back to the key=value format (stable order, full precision)."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if value is None:
            text = ""
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def validate_config(cfg):
    """Raise ConfigError on any inconsistency; referenced paths must exist."""
    if not cfg.dataset:
        raise ConfigError("config: 'dataset' is required")
    if not cfg.out_dir:
        raise ConfigError("config: 'out_dir' is required")
    if not cfg.dataset.startswith("blobs") and not os.path.isdir(cfg.dataset):
        raise ConfigError(f"config: dataset directory '{cfg.dataset}' does not exist")
    if (cfg.enable_bet or cfg.enable_iad) and not cfg.bundle:
        raise ConfigError(
            "config: 'bundle' is required when enable_bet or enable_iad is true")
    if cfg.bundle and not os.path.isfile(cfg.bundle):
        raise ConfigError(f"config: bundle file '{cfg.bundle}' does not exist")
    if len(cfg.channels) < 1:
        raise ConfigError("config: 'channels' needs at least one conv stage")
    for key in ("base_count", "k_shot", "batch_size", "embed_dim", "d_common",
                "disc_channels"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"config: '{key}' must be >= 1")
    for key in ("n_way", "n_incremental", "epochs_base", "epochs_incremental"):
        if getattr(cfg, key) < 0:
            raise ConfigError(f"config: '{key}' must be >= 0")
    if cfg.n_incremental > 0 and cfg.n_way < 1:
        raise ConfigError("config: 'n_way' must be >= 1 when sessions are incremental")
    if not cfg.lr > 0:
        raise ConfigError("config: 'lr' must be positive")
    if not 0 < cfg.beta1 < 1 or not 0 < cfg.beta2 < 1:
        raise ConfigError("config: betas must be in (0, 1)")
    if not cfg.adam_eps > 0:
        raise ConfigError("config: 'adam_eps' must be positive")
    if cfg.lambda_bet < 0:
        raise ConfigError("config: 'lambda_bet' must be >= 0")
    if cfg.incremental_lr_scale <= 0:
        raise ConfigError("config: 'incremental_lr_scale' must be positive")
    if len(cfg.gate_hidden) != 2:
        raise ConfigError("config: 'gate_hidden' expects exactly two widths")
    if cfg.score_clamp <= 0:
        raise ConfigError("config: 'score_clamp' must be positive")
    return cfg
