from __future__ import annotations

from ..core.errors import ConfigurationError
from .settings import AppSettings


def validate_settings(settings: AppSettings) -> None:
    """確認驗證預算與容差位於合理區間。"""

    if settings.samples < 0 or settings.depth < 0:
        raise ConfigurationError("樣本數與二分深度不可為負")
    if settings.workers < 1:
        raise ConfigurationError("workers 至少為 1")
    if settings.max_boxes < 1:
        raise ConfigurationError("max_boxes 至少為 1")
    if settings.containment_tolerance <= 0 or settings.interval_margin <= 0:
        raise ConfigurationError("容差必須為正數")
    if settings.fd_step_scale <= 0 or settings.lyapunov_q <= 0:
        raise ConfigurationError("差分步長與 Lyapunov 權重必須為正數")
    if settings.iteration_cap < 1:
        raise ConfigurationError("疊代上限至少為 1")
    if settings.slip_max <= 0:
        raise ConfigurationError("slip 上界必須為正數")
    if settings.sim_steps < 1:
        raise ConfigurationError("模擬步數至少為 1")
