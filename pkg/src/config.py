"""
Application Configuration

Environment-based settings layered over the YAML defaults in
config/calibration.yaml. Priority order:

  1. Environment variables (INCICAL_*, nested with "__")
  2. .env file
  3. config/calibration.yaml (or the file named by INCICAL_CONFIG_PATH)
  4. Coded defaults

Seeds are never read from the environment: all randomness is explicit
on the command line.
"""

from __future__ import annotations

import os
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    YamlConfigSettingsSource,
)


BASE_DIR = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG_PATH = BASE_DIR / "config" / "calibration.yaml"


# ---------------------------------------------------------------------------
# Enums
# ---------------------------------------------------------------------------

class Environment(str, Enum):
    """Application environment profiles."""
    DEVELOPMENT = "development"
    TESTING = "testing"
    PRODUCTION = "production"


class LogLevel(str, Enum):
    """Supported log levels."""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


# ---------------------------------------------------------------------------
# Section models
# ---------------------------------------------------------------------------

class SolverSettings(BaseModel):
    """RANSAC and focal enumeration defaults."""

    iterations: int = Field(default=2048, ge=1)
    inlier_threshold: float = Field(default=0.008727, gt=0.0, lt=1.5707, description="Radians (0.5 deg)")
    min_inlier_ratio: float = Field(default=0.2, gt=0.0, le=1.0)
    confidence: float = Field(default=1.0, gt=0.0, le=1.0, description="Below 1.0 enables early exit")
    min_trials: int = Field(default=64, ge=1)
    chunk_size: int = Field(default=32, ge=1, le=1024)
    refine_iterations: int = Field(default=3, ge=1, le=20)
    max_scored_pixels: int = Field(default=65536, ge=16)
    focal_grid_size: int = Field(default=512, ge=2)
    fov_min_deg: float = Field(default=15.0, gt=0.0, lt=180.0)
    fov_max_deg: float = Field(default=140.0, gt=0.0, lt=180.0)

    @model_validator(mode="after")
    def validate_fov_range(self) -> "SolverSettings":
        if self.fov_min_deg >= self.fov_max_deg:
            raise ValueError("fov_min_deg must be less than fov_max_deg")
        return self


class DiffusionSettings(BaseModel):
    """Noise schedule and sampler defaults."""

    steps: int = Field(default=1000, ge=1, description="Training step count T")
    beta_start: float = Field(default=0.00085, ge=0.0, lt=1.0)
    beta_end: float = Field(default=0.012, ge=0.0, lt=1.0)
    beta_schedule: Literal["linear", "scaled_linear"] = "linear"
    noise_levels: int = Field(default=4, ge=1, le=16)
    noise_decay: float = Field(default=0.5, gt=0.0, le=1.0)
    ensemble_size: int = Field(default=10, ge=1)
    inference_steps: int = Field(default=10, ge=1)
    aggregation: Literal["mean", "median"] = "mean"

    @model_validator(mode="after")
    def validate_beta_range(self) -> "DiffusionSettings":
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")
        if self.inference_steps > self.steps:
            raise ValueError("inference_steps must not exceed steps")
        return self


class EvaluationSettings(BaseModel):
    """Metric thresholds."""

    fscore_tau: float = Field(default=0.05, gt=0.0, description="Meters")
    delta1_threshold: float = Field(default=1.25, gt=1.0)


class BenchmarkSettings(BaseModel):
    """Benchmark harness defaults."""

    max_side: int = Field(default=256, ge=16, description="Longest map side after resizing")
    outlier_max_angle_deg: float = Field(default=60.0, gt=0.0, lt=90.0)


# ---------------------------------------------------------------------------
# Main Settings
# ---------------------------------------------------------------------------

class Settings(BaseSettings):
    """
    Application settings, single source of truth for all configuration.
    """

    model_config = SettingsConfigDict(
        env_prefix="INCICAL_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    app_name: str = Field(default="incical")
    environment: Environment = Field(default=Environment.DEVELOPMENT)
    log_level: LogLevel = Field(default=LogLevel.WARNING)
    json_logs: bool = Field(default=False)
    workers: int = Field(default=1, ge=1, le=64, description="Benchmark thread pool size")

    solver: SolverSettings = Field(default_factory=SolverSettings)
    diffusion: DiffusionSettings = Field(default_factory=DiffusionSettings)
    evaluation: EvaluationSettings = Field(default_factory=EvaluationSettings)
    benchmark: BenchmarkSettings = Field(default_factory=BenchmarkSettings)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        yaml_settings = YamlConfigSettingsSource(settings_cls, yaml_file=config_path())
        return (init_settings, env_settings, dotenv_settings, yaml_settings, file_secret_settings)

    @property
    def is_production(self) -> bool:
        return self.environment == Environment.PRODUCTION

    def display(self) -> dict[str, Any]:
        """Return the effective configuration as a plain dict."""
        return self.model_dump(mode="json")


def config_path() -> Path:
    """Path of the YAML defaults file; a missing file means coded defaults."""
    return Path(os.getenv("INCICAL_CONFIG_PATH", str(DEFAULT_CONFIG_PATH)))


# ---------------------------------------------------------------------------
# Singleton Access
# ---------------------------------------------------------------------------

@lru_cache
def get_settings() -> Settings:
    """
    Return cached application settings.

    To reload settings (e.g., in tests), call `get_settings.cache_clear()`.
    """
    return Settings()
