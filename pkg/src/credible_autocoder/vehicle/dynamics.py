"""單軌車輛模型：縱向滑移、φ 映射、輪胎力與車身動態。

狀態 x = [V, β, ψ̇]，控制 u = [s_F, s_R]（前後輪縱向滑移）。
輪胎力對滑移量線性：縱向 fx_i = -C_x·s_i（正滑移代表制動），
側向 F_y = C_α·α（α 為輪軸側偏角）。
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..core.errors import VehicleSingularityError
from .params import CarParams


@dataclass(frozen=True)
class CarState:
    """車身狀態 x = [V, β, ψ̇] 與前後輪角速度 ω。"""

    x: Tuple[float, float, float]
    omega: Tuple[float, float]

    @classmethod
    def of(cls, x: object, omega: object) -> "CarState":
        body = np.asarray(x, dtype=float).reshape(-1)
        wheels = np.asarray(omega, dtype=float).reshape(-1)
        return cls(tuple(body.tolist()), tuple(wheels.tolist()))  # type: ignore[arg-type]

    @property
    def x_vector(self) -> np.ndarray:
        return np.array(self.x)

    @property
    def omega_vector(self) -> np.ndarray:
        return np.array(self.omega)


def _vector(value: object, size: int, name: str) -> np.ndarray:
    data = np.asarray(value, dtype=float).reshape(-1)
    if data.size != size:
        raise ValueError(f"{name} 維度應為 {size}，得到 {data.size}")
    return data


def wheel_ground_speeds(x: object, p: CarParams) -> np.ndarray:
    """車身速度投影到前後輪軸方向的分量。"""

    speed, beta, yaw_rate = _vector(x, 3, "x")
    front = speed * math.cos(beta - p.delta) + yaw_rate * p.l_f * math.sin(p.delta)
    rear = speed * math.cos(beta)
    return np.array([front, rear])


def longitudinal_slips(
    speed: float,
    beta: float,
    yaw_rate: float,
    omega_front: float,
    omega_rear: float,
    p: CarParams,
) -> np.ndarray:
    if min(omega_front, omega_rear) < p.omega_min:
        raise VehicleSingularityError(
            f"輪速低於 ω_min={p.omega_min}：ω_F={omega_front}, ω_R={omega_rear}"
        )
    ground = wheel_ground_speeds([speed, beta, yaw_rate], p)
    tangential = np.array([omega_front, omega_rear]) * p.r
    return (ground - tangential) / tangential


def _check_slips(u: np.ndarray, p: CarParams) -> None:
    if np.any(u <= p.slip_floor):
        raise VehicleSingularityError(f"滑移量 {u.tolist()} 低於下限 {p.slip_floor}")


def phi(x: object, u: object, p: CarParams) -> np.ndarray:
    """實現指令滑移所需的輪速。"""

    slips = _vector(u, 2, "u")
    _check_slips(slips, p)
    return wheel_ground_speeds(x, p) / ((1.0 + slips) * p.r)


def manifold_z(omega: object, x: object, u: object, p: CarParams) -> np.ndarray:
    return _vector(omega, 2, "omega") - phi(x, u, p)


def friction_force(u: object, p: CarParams) -> np.ndarray:
    return -p.C_x * _vector(u, 2, "u")


def slip_angles(x: object, p: CarParams) -> Tuple[float, float]:
    speed, beta, yaw_rate = _vector(x, 3, "x")
    if speed <= 0.0:
        raise VehicleSingularityError(f"車速必須為正，得到 V={speed}")
    forward = speed * math.cos(beta)
    front = p.delta - math.atan((speed * math.sin(beta) + p.l_f * yaw_rate) / forward)
    rear = -math.atan((speed * math.sin(beta) - p.l_r * yaw_rate) / forward)
    return front, rear


def lateral_forces(x: object, p: CarParams) -> np.ndarray:
    front, rear = slip_angles(x, p)
    return p.C_alpha * np.array([front, rear])


def body_forces(x: object, u: object, p: CarParams) -> Tuple[float, float, float]:
    """車身座標下的合力 (F_X, F_Y) 與橫擺力矩 M。"""

    fx_front, fx_rear = friction_force(u, p)
    fy_front, fy_rear = lateral_forces(x, p)
    cos_d, sin_d = math.cos(p.delta), math.sin(p.delta)
    force_x = fx_front * cos_d - fy_front * sin_d + fx_rear
    force_y = fx_front * sin_d + fy_front * cos_d + fy_rear
    moment = p.l_f * (fx_front * sin_d + fy_front * cos_d) - p.l_r * fy_rear
    return force_x, force_y, moment


def plant_f(x: object, u: object, p: CarParams) -> np.ndarray:
    """ẋ = f(x, u)。"""

    speed, beta, yaw_rate = _vector(x, 3, "x")
    _check_slips(_vector(u, 2, "u"), p)
    force_x, force_y, moment = body_forces([speed, beta, yaw_rate], u, p)
    cos_b, sin_b = math.cos(beta), math.sin(beta)
    return np.array(
        [
            (force_x * cos_b + force_y * sin_b) / p.m,
            (-force_x * sin_b + force_y * cos_b) / (p.m * speed) - yaw_rate,
            moment / p.I_z,
        ]
    )


def wheel_dynamics(torque: object, fx: object, p: CarParams) -> np.ndarray:
    return (_vector(torque, 2, "T") - _vector(fx, 2, "fx") * p.r) / p.I_w
