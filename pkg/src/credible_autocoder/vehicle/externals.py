"""模型中宣告的外部函數與車輛實作的綁定。"""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from .control import closed_loop_phi_jacobian
from .dynamics import friction_force, plant_f
from ..verifier.intervals import Interval, IntervalFn
from .params import CarParams

EXTERNAL_SHAPES = {
    "f_func": (3, 1),
    "dphi_func": (3, 2),
    "friction_func": (2, 1),
}


def bind_externals(
    p: CarParams, gain: object, step_scale: float = 1e-5
) -> Dict[str, Callable[..., np.ndarray]]:
    """回傳 f_func、dphi_func（3×2，閉迴路 ∂φ 的轉置）與 friction_func。"""

    matrix = np.atleast_2d(np.asarray(gain, dtype=float))

    def f_func(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return plant_f(x, u, p)

    def dphi_func(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return closed_loop_phi_jacobian(x, u, matrix, p, step_scale).T

    def friction_func(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        del x
        return friction_force(u, p)

    return {"f_func": f_func, "dphi_func": dphi_func, "friction_func": friction_func}


def bind_interval_externals(p: CarParams) -> Dict[str, IntervalFn]:
    """有保守區間延伸的外部函數；f_func、dphi_func 沒有，遇到時該盒維持未判定。"""

    def friction_func(x: Interval, u: Interval) -> Interval:
        del x
        return Interval.of(-p.C_x * u.hi, -p.C_x * u.lo)

    return {"friction_func": friction_func}
