"""One JSON document configures a run: data, model, training, modifiers, sweep."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .data import SynthConfig
from .evaluation.sweep import DEFAULT_GRID
from .evaluation.training import TrainConfig
from .models import CustomNetConfig, SimpleCNNConfig


class ConfigError(ValueError):
    pass


class ModifierSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    mu: float = Field(0.8, ge=0.0, le=1.0)
    sigma: float = Field(0.05, ge=0.0)


class SweepSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid: list[float] = Field(default_factory=lambda: list(DEFAULT_GRID), min_length=1)
    n_seeds: int = Field(3, ge=1)
    include_unweighted: bool = False


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int | None = None
    synth: SynthConfig | None = None
    model: Union[CustomNetConfig, SimpleCNNConfig] = Field(default_factory=CustomNetConfig, discriminator="kind")
    train: TrainConfig = Field(default_factory=TrainConfig)
    modifier: ModifierSettings = Field(default_factory=ModifierSettings)
    weighting: Literal["class", "none"] = "class"
    sweep: SweepSettings = Field(default_factory=SweepSettings)
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    split_seed: int = 0
    strict_ingestion: bool = True
    jobs: int = Field(1, ge=1)


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def _set_path(doc: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"cannot override {dotted}: {k} is not a section")
    cur[keys[-1]] = value


def _get_path(doc: dict, dotted: str) -> Any:
    cur: Any = doc
    for k in dotted.split("."):
        if not isinstance(cur, dict) or k not in cur:
            return None
        cur = cur[k]
    return cur


def read_config_file(path: str | Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def resolve(file_doc: dict, flags: dict[str, Any]) -> tuple[RunConfig, list[tuple[str, Any, str]]]:
    """Merge flags over the config file over defaults.

    ``flags`` maps dotted keys to values; None means "flag not given".
    Returns the validated config and (key, value, source) for every flag-able key.
    """
    doc = json.loads(json.dumps(file_doc))
    provenance = []
    for key, value in flags.items():
        if value is not None:
            _set_path(doc, key, value)
            provenance.append((key, value, "flag"))
        elif _get_path(file_doc, key) is not None:
            provenance.append((key, _get_path(file_doc, key), "config"))
        else:
            provenance.append((key, None, "default"))
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from None
    dumped = cfg.model_dump()
    provenance = [(k, _get_path(dumped, k) if src == "default" else v, src) for k, v, src in provenance]
    return cfg, provenance
