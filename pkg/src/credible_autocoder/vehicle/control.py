"""LQR 外迴路與滑動模態內迴路控制律。"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from ..core.errors import NumericsError
from ..numerics.linalg import jacobian_fd
from .dynamics import friction_force, phi, plant_f
from .params import CarParams


def linear_control(x_tilde: object, gain: object) -> np.ndarray:
    """ũ = -K x̃。"""

    deviation = np.asarray(x_tilde, dtype=float).reshape(-1)
    matrix = np.atleast_2d(np.asarray(gain, dtype=float))
    if matrix.shape[1] != deviation.size:
        raise NumericsError(f"K 維度 {matrix.shape} 與 x̃ 維度 {deviation.size} 不符")
    return -matrix @ deviation


def saturate(z: object, bound: float) -> np.ndarray:
    return np.clip(np.asarray(z, dtype=float), -bound, bound)


def phi_jacobians(
    x: object, u: object, p: CarParams, step_scale: float = 1e-5
) -> Tuple[np.ndarray, np.ndarray]:
    """(∂φ/∂x, ∂φ/∂u)，以中央差分計算。"""

    return jacobian_fd(lambda xs, us: phi(xs, us, p), x, u, step_scale=step_scale)


def closed_loop_phi_jacobian(
    x: object, u: object, gain: object, p: CarParams, step_scale: float = 1e-5
) -> np.ndarray:
    """沿 LQR 控制律的全微分 ∂φ/∂x - ∂φ/∂u·K（2×3）。"""

    d_x, d_u = phi_jacobians(x, u, p, step_scale)
    return d_x - d_u @ np.atleast_2d(np.asarray(gain, dtype=float))


def feedforward(x: object, u: object, p: CarParams, dphi: Optional[np.ndarray] = None) -> np.ndarray:
    """fx·r + I_w·(∂φ/∂x)·f(x, u)。"""

    if dphi is None:
        dphi, _ = phi_jacobians(x, u, p)
    return friction_force(u, p) * p.r + p.I_w * (dphi @ plant_f(x, u, p))


def torque_control(
    z: object, x: object, u: object, p: CarParams, dphi: Optional[np.ndarray] = None
) -> np.ndarray:
    """T = fx·r + I_w·(∂φ/∂x)·f - sat(z)。"""

    return feedforward(x, u, p, dphi) - saturate(z, p.c_sat)


def aux_dynamics(
    z: object,
    torque: object,
    x: object,
    u: object,
    p: CarParams,
    dphi: Optional[np.ndarray] = None,
) -> np.ndarray:
    """ż = (T - fx·r - I_w·(∂φ/∂x)·f) / I_w；z 不出現在右側。"""

    del z
    return (np.asarray(torque, dtype=float) - feedforward(x, u, p, dphi)) / p.I_w
