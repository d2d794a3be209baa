import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from src.exceptions import ConfigError
from src.models.geometry import StageGeometry
from src.models.model_config import ModelConfig
from src.models.train_config import TrainConfig

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s: %(message)s"

PRESETS: Dict[str, Tuple[Dict[str, Any], Dict[str, Any]]] = {
    # Full-size model and schedule
    "paper": ({}, {}),
    # Small enough to train on a laptop CPU
    "desk": (
        {"patch_side": 32, "embed_dim": 64, "heads": 4},
        {"patch_side": 32, "learning_rate": 1e-3, "max_steps": 500, "batch_size": 8},
    ),
}

_STAGE_KEYS = ("kernels", "strides", "dilations", "paddings")


@dataclass(frozen=True)
class Settings:
    """Process-level settings read from the environment (and a ``.env`` file)"""
    log_level: str = "INFO"
    params_path: Optional[Path] = None
    preset: str = "desk"
    workers: Optional[int] = None


def get_settings() -> Settings:
    load_dotenv()
    params_path = os.getenv("TEDNET_PARAMS_PATH")
    workers = os.getenv("TEDNET_WORKERS")
    preset = os.getenv("TEDNET_PRESET", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"TEDNET_PRESET={preset!r} is not one of {sorted(PRESETS)}")
    try:
        worker_count = int(workers) if workers else None
    except ValueError as exc:
        raise ConfigError(f"TEDNET_WORKERS={workers!r} is not an integer") from exc
    return Settings(
        log_level=os.getenv("TEDNET_LOG_LEVEL", "INFO").upper(),
        params_path=Path(params_path) if params_path else None,
        preset=preset,
        workers=worker_count,
    )


def configure_logging(level: Union[str, int] = "INFO") -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _parse_scalar(text: str) -> Any:
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """``key=value`` lines; ``#`` starts a comment, blank lines are skipped"""
    values: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _STAGE_KEYS:
            try:
                values[key] = [int(v) for v in value.split(",") if v.strip()]
            except ValueError as exc:
                raise ConfigError(f"{source}:{number}: {key} must be a comma list of integers") from exc
        else:
            values[key] = _parse_scalar(value)
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def _stages_from(values: Dict[str, Any]) -> Optional[Tuple[StageGeometry, ...]]:
    given = [key for key in _STAGE_KEYS if key in values]
    if not given:
        return None
    missing = [key for key in _STAGE_KEYS if key not in values]
    if missing:
        raise ConfigError(f"stage lists must be given together; missing {', '.join(missing)}")
    lists: List[List[int]] = [values[key] for key in _STAGE_KEYS]
    if len({len(items) for items in lists}) != 1:
        raise ConfigError(f"stage lists differ in length: {dict(zip(_STAGE_KEYS, map(len, lists)))}")
    return tuple(
        StageGeometry(kernel=k, stride=s, dilation=d, padding=p) for k, s, d, p in zip(*lists)
    )


def build_configs(preset: str = "desk", overrides: Optional[Dict[str, Any]] = None,
                  seed: Optional[int] = None) -> Tuple[ModelConfig, TrainConfig]:
    """Preset values, then ``overrides`` (e.g. from a config file), then ``seed``"""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    model_values, train_values = (dict(part) for part in PRESETS[preset])
    overrides = dict(overrides or {})

    try:
        stages = _stages_from(overrides)
    except ValidationError as exc:
        raise ConfigError(f"invalid stage geometry: {exc}") from exc
    if stages is not None:
        model_values["stages"] = stages
    for key, value in overrides.items():
        if key in _STAGE_KEYS:
            continue
        known = False
        if key in ModelConfig.model_fields and key != "stages":
            model_values[key] = value
            known = True
        if key in TrainConfig.model_fields:
            train_values[key] = value
            known = True
        if not known:
            raise ConfigError(f"unknown configuration key {key!r}")
    if seed is not None:
        train_values["seed"] = seed

    try:
        return ModelConfig(**model_values), TrainConfig(**train_values)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
