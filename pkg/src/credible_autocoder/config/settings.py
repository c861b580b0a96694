from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
    "CRITICAL": logging.CRITICAL,
}


class AppSettings(BaseSettings):
    """應用程式環境設定。"""

    output_dir: Path = Field(Path("build"), alias="AUTOCODER_OUTPUT_DIR")

    samples: int = Field(100_000, alias="AUTOCODER_SAMPLES")
    depth: int = Field(12, alias="AUTOCODER_DEPTH")
    seed: int = Field(42, alias="AUTOCODER_SEED")
    workers: int = Field(4, alias="AUTOCODER_WORKERS")
    max_boxes: int = Field(2_000_000, alias="AUTOCODER_MAX_BOXES")

    containment_tolerance: float = Field(1e-9, alias="AUTOCODER_CONTAINMENT_TOL")
    interval_margin: float = Field(1e-7, alias="AUTOCODER_INTERVAL_MARGIN")
    fd_step_scale: float = Field(1e-5, alias="AUTOCODER_FD_STEP")
    lyapunov_q: float = Field(1e-2, alias="AUTOCODER_LYAPUNOV_Q")
    iteration_cap: int = Field(200, alias="AUTOCODER_ITERATION_CAP")
    slip_max: float = Field(2.0, alias="AUTOCODER_SLIP_MAX")

    sim_steps: int = Field(10_000, alias="AUTOCODER_SIM_STEPS")

    log_level: str = Field("WARNING", alias="AUTOCODER_LOG_LEVEL")

    model_config = SettingsConfigDict(
        env_file=(".env",),
        env_file_encoding="utf-8",
        extra="ignore",
        populate_by_name=True,
    )

    @field_validator("log_level", mode="before")
    @classmethod
    def _normalize_level(cls, value: object) -> str:
        text = str(value or "WARNING").strip().upper()
        if text not in _LEVELS:
            raise ValueError(f"未知的日誌等級: {value}")
        return text

    @property
    def log_level_value(self) -> int:
        return _LEVELS[self.log_level]


@lru_cache(maxsize=1)
def get_settings() -> AppSettings:
    """載入並快取設定。"""

    return AppSettings()
