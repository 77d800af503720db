"""
delaynet/utils/config.py

Layered configuration: `config/config.yaml`, deep-merged with a profile
overlay (`config/ci.yaml`, `config/paper.yaml`), then overridden by
`DELAYNET_<SECTION>__<KEY>` environment variables.

Design Decisions:
- YAML files are read here and handed to pydantic-settings as init
  values; the source order is customised so environment variables win
  over files.
- Every numeric default also lives on the pydantic models, so library
  callers that never touch YAML get the same behaviour as the CLI.
- Validation errors are re-raised as ConfigurationError naming the file
  set that produced them.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from delaynet.schemas.anneal_schema import AnnealSchedule, OptimizerConfig
from delaynet.schemas.experiment_schema import SweepConfig
from delaynet.utils.exceptions import ConfigurationError
from delaynet.utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_PROFILE = "ci"
PROFILE_ALIASES = {"full": "paper"}
_DEFAULT_CONFIG_DIR = Path(__file__).resolve().parents[2] / "config"


# ── Section models ─────────────────────────────────────────────

class DataSettings(BaseModel):
    d: int = Field(default=5, ge=4)
    forcing: float = 8.15
    dt: float = Field(default=0.05, gt=0.0)
    n_total: int = Field(default=100_000, ge=2)
    n_discard: int = Field(default=10_000, ge=0)
    seed: int = 42
    component: int = Field(default=0, ge=0)
    perturbation: float = Field(default=0.01, ge=0.0)
    sigma_fraction: float = Field(default=0.02, ge=0.0, lt=1.0)
    noise_seed: int = 43


class EmbedSettings(BaseModel):
    tau: int | None = Field(default=None, ge=1)
    d_e: int | None = Field(default=None, ge=1)
    tau_max: int = Field(default=50, ge=3)
    n_bins: int = Field(default=128, ge=2)
    d_max: int = Field(default=10, ge=2)
    r_tol: float = Field(default=15.0, gt=0.0)
    a_tol: float = Field(default=2.0, gt=0.0)
    fnn_threshold: float = Field(default=0.02, ge=0.0, le=1.0)
    ami_samples: int | None = Field(default=32_768, ge=16)


class LyapSettings(BaseModel):
    n_neighbors: int | None = Field(default=None, ge=2)
    order: int = Field(default=2, ge=1, le=2)
    evolution: int | None = Field(default=None, ge=1)
    dt: float = Field(default=1.0, gt=0.0)
    max_points: int | None = Field(default=20_000, ge=2)


class NetworkSettings(BaseModel):
    l_f: int = Field(default=4, ge=3)
    d_h: int = Field(default=15, ge=1)
    output_activation: str = Field(default="tanh", pattern="^(tanh|identity)$")
    use_bias: bool = False


class TrainingSettings(BaseModel):
    m: int = Field(default=400, ge=1)
    m_total: int | None = Field(default=None, ge=2)
    workers: int = Field(default=1, ge=1)


class EvaluateSettings(BaseModel):
    against_clean: bool = False
    predict_start: int = Field(default=0, ge=0)
    predict_steps: int = Field(default=500, ge=0)


class LoggingSettings(BaseModel):
    level: str = "INFO"
    format: str = Field(default="text", pattern="^(json|text)$")
    file: str | None = None


class Settings(BaseSettings):
    """All resolved settings for one invocation."""

    model_config = SettingsConfigDict(
        env_prefix="DELAYNET_",
        env_nested_delimiter="__",
        extra="ignore",
    )

    profile: str = DEFAULT_PROFILE
    data: DataSettings = Field(default_factory=DataSettings)
    embed: EmbedSettings = Field(default_factory=EmbedSettings)
    lyap: LyapSettings = Field(default_factory=LyapSettings)
    network: NetworkSettings = Field(default_factory=NetworkSettings)
    anneal: AnnealSchedule = Field(default_factory=AnnealSchedule)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    training: TrainingSettings = Field(default_factory=TrainingSettings)
    evaluate: EvaluateSettings = Field(default_factory=EvaluateSettings)
    experiments: SweepConfig = Field(default_factory=SweepConfig)
    logging: LoggingSettings = Field(default_factory=LoggingSettings)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        # Environment beats the YAML values passed in as init kwargs
        return env_settings, dotenv_settings, init_settings


def _deep_merge(base: dict[str, Any], overlay: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_yaml(path: Path) -> dict[str, Any]:
    try:
        with path.open("r", encoding="utf-8") as handle:
            content = yaml.safe_load(handle) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"Invalid YAML in {path.name}.", detail=str(exc)) from exc
    if not isinstance(content, dict):
        raise ConfigurationError(f"{path.name} must contain a mapping at top level.")
    return content


def load_settings(profile: str | None = None, config_dir: str | Path | None = None) -> Settings:
    """
    Resolve settings from YAML files and the environment.

    Args:
        profile: Overlay name (`ci`, `paper`, ...); `full` is an alias of
            `paper`. Falls back to DELAYNET_PROFILE, then to `ci`.
        config_dir: Directory holding config.yaml and the overlays. Falls
            back to DELAYNET_CONFIG_DIR, then to the repository's config/.

    Raises:
        ConfigurationError: Unknown profile, unreadable YAML or values that
            fail validation.
    """
    resolved_profile = profile or os.environ.get("DELAYNET_PROFILE") or DEFAULT_PROFILE
    resolved_profile = PROFILE_ALIASES.get(resolved_profile, resolved_profile)
    directory = Path(config_dir or os.environ.get("DELAYNET_CONFIG_DIR") or _DEFAULT_CONFIG_DIR)

    values: dict[str, Any] = {}
    base_file = directory / "config.yaml"
    if base_file.is_file():
        values = _read_yaml(base_file)
    else:
        logger.warning("No config.yaml found; using built-in defaults", config_dir=str(directory))

    overlay_file = directory / f"{resolved_profile}.yaml"
    if overlay_file.is_file():
        values = _deep_merge(values, _read_yaml(overlay_file))
    elif directory.is_dir():
        raise ConfigurationError(
            f"Unknown profile '{resolved_profile}'.",
            detail=f"Expected {overlay_file.name} in {directory}.",
        )

    values["profile"] = resolved_profile
    try:
        settings = Settings(**values)
    except ValidationError as exc:
        raise ConfigurationError(
            "Configuration failed validation.",
            detail=str(exc),
            profile=resolved_profile,
        ) from exc

    logger.debug("Settings loaded", profile=resolved_profile, config_dir=str(directory))
    return settings
