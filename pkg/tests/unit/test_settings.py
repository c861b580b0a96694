import logging

import pytest
from pydantic import ValidationError

from credible_autocoder.config.settings import AppSettings
from credible_autocoder.config.validators import validate_settings
from credible_autocoder.core.errors import ConfigurationError
from credible_autocoder.verifier.checks import CheckBudget


def test_settings_default_values() -> None:
    settings = AppSettings(AUTOCODER_SAMPLES=500)
    assert settings.samples == 500
    assert settings.depth == 12
    assert settings.seed == 42
    assert settings.sim_steps == 10_000
    assert settings.log_level_value == logging.WARNING
    validate_settings(settings)


def test_log_level_is_normalized() -> None:
    settings = AppSettings(AUTOCODER_LOG_LEVEL=" debug ")
    assert settings.log_level == "DEBUG"
    assert settings.log_level_value == logging.DEBUG
    with pytest.raises(ValidationError):
        AppSettings(AUTOCODER_LOG_LEVEL="chatty")


def test_settings_read_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("AUTOCODER_DEPTH", "3")
    monkeypatch.setenv("AUTOCODER_WORKERS", "1")
    settings = AppSettings()
    assert settings.depth == 3
    assert settings.workers == 1


@pytest.mark.parametrize(
    "overrides",
    [
        {"AUTOCODER_SAMPLES": -1},
        {"AUTOCODER_WORKERS": 0},
        {"AUTOCODER_CONTAINMENT_TOL": 0.0},
        {"AUTOCODER_SIM_STEPS": 0},
    ],
)
def test_out_of_range_settings_are_rejected(overrides: dict) -> None:
    with pytest.raises(ConfigurationError):
        validate_settings(AppSettings(**overrides))


def test_budget_follows_settings() -> None:
    budget = CheckBudget.from_settings(
        AppSettings(AUTOCODER_SAMPLES=10, AUTOCODER_DEPTH=2, AUTOCODER_INTERVAL_MARGIN=1e-6)
    )
    assert (budget.samples, budget.depth, budget.margin) == (10, 2, 1e-6)
