"""Run configuration: one JSON document with sections data/model/train/attention.

Every key mirrors a typed field; unknown sections or keys are rejected up
front.  Defaults depend on the model preset, and the fully populated
effective configuration is echoed next to every command output so a run can
be reproduced from its artifacts alone.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .model import ModelConfig, PRESETS
from .synthcorpus import CorpusConfig
from .train import TrainConfig

CONFIG_ENV_VAR = "LONGATTN_CONFIG"


@dataclass
class ModelSection:
    preset: str = "desk"
    attention_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    latent_dim: int = 64
    heads: int = 12
    maps: int = 4
    max_frames: int = 3


@dataclass
class TrainSection:
    lr: float = 0.0003
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    mode: str = "spatial-temporal"
    n: int = 3


@dataclass
class AttentionSection:
    temporal_reduction: str = "mean"
    combine_bias_init: float = 2.0
    residual_gain: float = 4.0


@dataclass
class RunConfig:
    data: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    attention: AttentionSection = field(default_factory=AttentionSection)


_SECTIONS = {
    "data": CorpusConfig,
    "model": ModelSection,
    "train": TrainSection,
    "attention": AttentionSection,
}


def _model_section_defaults(preset: str) -> ModelSection:
    if preset not in PRESETS:
        raise ConfigError(
            f"unknown model preset '{preset}'; expected one of {sorted(PRESETS)}"
        )
    mc: ModelConfig = PRESETS[preset]()
    return ModelSection(
        preset=preset,
        attention_size=mc.attention_size,
        patch_size=mc.patch_size,
        embed_dim=mc.embed_dim,
        latent_dim=mc.latent_dim,
        heads=mc.heads,
        maps=mc.maps,
        max_frames=mc.max_frames,
    )


def _coerce(value: Any, target_type: Any, key: str) -> Any:
    if target_type is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"key '{key}' must be a list")
        return tuple(value)
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"key '{key}' must be a boolean")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key '{key}' must be an integer, got {value!r}")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{key}' must be a number, got {value!r}")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"key '{key}' must be a string, got {value!r}")
        return value
    return value


# dataclass field annotations are strings under `from __future__ import
# annotations`; resolve them once for value checking
_TYPE_LOOKUP = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple}
_FIELD_TYPES = {
    name: {
        f.name: _TYPE_LOOKUP.get(str(f.type).split("[")[0], object)
        for f in dataclasses.fields(cls)
    }
    for name, cls in _SECTIONS.items()
}


def _apply_keys(instance: Any, data: dict, section: str) -> Any:
    valid = _FIELD_TYPES[section]
    unknown = set(data) - set(valid)
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in section '{section}'; "
            f"valid keys: {sorted(valid)}"
        )
    updates = {
        key: _coerce(value, valid[key], f"{section}.{key}")
        for key, value in data.items()
    }
    try:
        return dataclasses.replace(instance, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section '{section}': {exc}") from exc


def parse_run_config(document: dict, overrides: dict | None = None) -> RunConfig:
    """Strictly parse a config document, then apply CLI overrides on top."""
    if not isinstance(document, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(document) - set(_SECTIONS)
    if unknown:
        raise ConfigError(
            f"unknown config section(s) {sorted(unknown)}; "
            f"valid sections: {sorted(_SECTIONS)}"
        )
    merged: dict[str, dict] = {name: dict(document.get(name, {})) for name in _SECTIONS}
    for name, extra in (overrides or {}).items():
        merged.setdefault(name, {})
        merged[name].update({k: v for k, v in extra.items() if v is not None})

    model_keys = merged["model"]
    preset = model_keys.get("preset", "desk")
    model = _apply_keys(_model_section_defaults(preset), model_keys, "model")
    try:
        data = _apply_keys(CorpusConfig(), merged["data"], "data")
        trn = _apply_keys(TrainSection(), merged["train"], "train")
        attn = _apply_keys(AttentionSection(), merged["attention"], "attention")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(data=data, model=model, train=trn, attention=attn)


def load_run_config(
    path: str | Path | None, overrides: dict | None = None
) -> RunConfig:
    """Load config from a JSON file (or env default, or built-in defaults)."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return parse_run_config({}, overrides)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_run_config(document, overrides)


def run_config_dict(cfg: RunConfig) -> dict:
    return {
        "data": dataclasses.asdict(cfg.data),
        "model": dataclasses.asdict(cfg.model),
        "train": dataclasses.asdict(cfg.train),
        "attention": dataclasses.asdict(cfg.attention),
    }


def build_model_config(cfg: RunConfig) -> ModelConfig:
    """Concrete model configuration: preset structure + section overrides."""
    base: ModelConfig = PRESETS[cfg.model.preset]()
    backbone = dataclasses.replace(base.backbone, maps=cfg.model.maps)
    try:
        return dataclasses.replace(
            base,
            backbone=backbone,
            attention_size=cfg.model.attention_size,
            patch_size=cfg.model.patch_size,
            embed_dim=cfg.model.embed_dim,
            latent_dim=cfg.model.latent_dim,
            heads=cfg.model.heads,
            maps=cfg.model.maps,
            max_frames=cfg.model.max_frames,
            temporal_reduction=cfg.attention.temporal_reduction,
            combine_bias_init=cfg.attention.combine_bias_init,
            residual_gain=cfg.attention.residual_gain,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_train_config(cfg: RunConfig) -> TrainConfig:
    try:
        return TrainConfig(
            lr=cfg.train.lr,
            momentum=cfg.train.momentum,
            batch_size=cfg.train.batch_size,
            epochs=cfg.train.epochs,
            seed=cfg.train.seed,
            mode=cfg.train.mode,
            maps=cfg.model.maps,
            heads=cfg.model.heads,
            n=cfg.train.n,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write-then-rename so re-runs replace outputs atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def echo_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    """Write the fully populated effective configuration next to outputs."""
    return atomic_write_text(
        Path(out_dir) / "effective_config.json",
        json.dumps(run_config_dict(cfg), indent=2, sort_keys=True),
    )
