from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from ..core.errors import EquilibriumError, NonFiniteError, VehicleSingularityError
from ..numerics.linalg import jacobian_fd
from .dynamics import plant_f
from .params import CarParams

logger = logging.getLogger(__name__)

ACCEPT_TOLERANCE = 1e-8
REFINE_TARGET = 1e-11
DAMPING_SCHEDULE = (1.0, 0.5, 0.25)


@dataclass(frozen=True)
class Equilibrium:
    x_ss: Tuple[float, ...]
    u_ss: Tuple[float, ...]
    residual: float

    @property
    def x(self) -> np.ndarray:
        return np.array(self.x_ss)

    @property
    def u(self) -> np.ndarray:
        return np.array(self.u_ss)


def _residual(x: np.ndarray, u: np.ndarray, p: CarParams) -> float:
    return float(np.max(np.abs(plant_f(x, u, p))))


def _refine(
    x: np.ndarray,
    u: np.ndarray,
    p: CarParams,
    damping: float,
    max_iterations: int,
    tolerance: float,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """最小範數阻尼 Gauss-Newton，含回溯線搜尋。"""

    point = np.concatenate([x, u])
    split = x.size
    residual = _residual(x, u, p)
    for _ in range(max_iterations):
        if residual <= REFINE_TARGET:
            break
        jac_x, jac_u = jacobian_fd(lambda xs, us: plant_f(xs, us, p), point[:split], point[split:])
        value = plant_f(point[:split], point[split:], p)
        direction = -np.linalg.pinv(np.hstack([jac_x, jac_u])) @ value
        step = damping
        while step > 1e-6:
            trial = point + step * direction
            try:
                trial_residual = _residual(trial[:split], trial[split:], p)
            except VehicleSingularityError:
                trial_residual = np.inf
            if trial_residual < residual:
                point, residual = trial, trial_residual
                break
            step *= 0.5
        else:
            break
    if residual > tolerance:
        raise EquilibriumError(f"阻尼 {damping} 的 Newton 精化未收斂", residual)
    return point[:split], point[split:], residual


def verify_equilibrium(
    x_ss: Sequence[float],
    u_ss: Sequence[float],
    p: CarParams,
    tolerance: float = ACCEPT_TOLERANCE,
    max_iterations: int = 50,
    damping_schedule: Sequence[float] = DAMPING_SCHEDULE,
) -> Equilibrium:
    """接受 ‖f(x_ss, u_ss)‖∞ <= tolerance 的平衡點，否則精化後再檢查。"""

    x = np.asarray(x_ss, dtype=float).reshape(-1)
    u = np.asarray(u_ss, dtype=float).reshape(-1)
    if x.size != 3 or u.size != 2:
        raise EquilibriumError("平衡點維度應為 x:3、u:2", float("nan"))
    try:
        residual = _residual(x, u, p)
    except VehicleSingularityError as exc:
        raise EquilibriumError(f"候選平衡點不在容許範圍: {exc}", float("inf")) from exc
    if residual <= tolerance:
        return Equilibrium(tuple(x.tolist()), tuple(u.tolist()), residual)

    schedule = list(damping_schedule)
    try:
        for attempt in Retrying(
            retry=retry_if_exception_type(
                (EquilibriumError, NonFiniteError, VehicleSingularityError)
            ),
            stop=stop_after_attempt(len(schedule)),
            reraise=True,
        ):
            with attempt:
                damping = schedule[attempt.retry_state.attempt_number - 1]
                x_new, u_new, residual = _refine(x, u, p, damping, max_iterations, tolerance)
    except (NonFiniteError, VehicleSingularityError) as exc:
        raise EquilibriumError(f"平衡點精化失敗: {exc}", float("inf")) from exc

    logger.info(
        "equilibrium_refined",
        extra={"residual": residual, "x_ss": x_new.tolist(), "u_ss": u_new.tolist()},
    )
    return Equilibrium(tuple(x_new.tolist()), tuple(u_new.tolist()), residual)
