from __future__ import annotations

from typing import Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..core.errors import ModelValidationError
from ..core.types import Diagnostic


class CarParams(BaseModel):
    """單軌車輛參數（桌面尺度預設值，可由模型檔 bindings.vehicle 覆寫）。"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    m: float = Field(1500.0, gt=0)
    I_z: float = Field(2500.0, gt=0)
    l_f: float = Field(1.2, gt=0)
    l_r: float = Field(1.4, gt=0)
    r: float = Field(0.3, gt=0)
    I_w: float = Field(1.8, gt=0)
    C_x: float = Field(60000.0, gt=0)
    C_alpha: float = Field(55000.0, gt=0)
    delta: float = 0.05
    c_sat: float = Field(1.0, gt=0)
    omega_min: float = Field(1e-3, gt=0)
    slip_epsilon: float = Field(0.05, gt=0, lt=1)

    @property
    def slip_floor(self) -> float:
        return -1.0 + self.slip_epsilon

    def as_params(self) -> dict:
        """輸出給註解表達式使用的具名純量。"""

        return {
            "r": self.r,
            "Iw": self.I_w,
            "csat": self.c_sat,
            "lf": self.l_f,
            "lr": self.l_r,
            "delta": self.delta,
        }


def load_params(overrides: Optional[Mapping[str, float]]) -> CarParams:
    try:
        return CarParams(**dict(overrides or {}))
    except ValidationError as exc:
        diagnostics = [
            Diagnostic(
                location="bindings.vehicle." + ".".join(str(part) for part in error["loc"]),
                message=error["msg"],
            )
            for error in exc.errors()
        ]
        raise ModelValidationError("車輛參數不合法", diagnostics) from exc
