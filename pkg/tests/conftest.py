from pathlib import Path

import pytest

from credible_autocoder.config.settings import AppSettings

MODELS_DIR = Path(__file__).resolve().parents[1] / "models"


@pytest.fixture
def car_model_path() -> Path:
    return MODELS_DIR / "car.model.json"


@pytest.fixture
def toy_model_path() -> Path:
    return MODELS_DIR / "toy_scalar.model.json"


@pytest.fixture
def fast_settings(tmp_path: Path) -> AppSettings:
    """縮小取樣預算的設定，讓整合測試在數秒內完成。"""

    return AppSettings(
        AUTOCODER_OUTPUT_DIR=str(tmp_path / "build"),
        AUTOCODER_SAMPLES=2000,
        AUTOCODER_DEPTH=8,
        AUTOCODER_WORKERS=2,
    )
