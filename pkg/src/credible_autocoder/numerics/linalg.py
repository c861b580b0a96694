"""Lyapunov / Riccati 求解、正定檢查與有限差分 Jacobian。"""

from __future__ import annotations

import logging
from typing import Callable, Optional, Tuple

import numpy as np

from ..core.errors import (
    AsymmetricMatrixError,
    ConvergenceError,
    InstabilityError,
    NonFiniteError,
    NumericsError,
)

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-12
PIVOT_TOLERANCE = 1e-12
DEFAULT_ITERATION_CAP = 200


def _square(matrix: object, name: str) -> np.ndarray:
    data = np.atleast_2d(np.asarray(matrix, dtype=float))
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise NumericsError(f"{name} 必須為方陣，得到 {data.shape}")
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"{name} 含有非有限元素")
    return data


def _inf_norm(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(matrix), axis=1)))


def is_symmetric(matrix: np.ndarray, tolerance: float = SYMMETRY_TOLERANCE) -> bool:
    scale = max(1.0, float(np.max(np.abs(matrix)))) if matrix.size else 1.0
    return bool(np.max(np.abs(matrix - matrix.T), initial=0.0) <= tolerance * scale)


def spectral_radius(matrix: object) -> float:
    data = _square(matrix, "A")
    if data.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(data))))


def is_positive_definite(matrix: object) -> bool:
    """Cholesky 成功且所有樞軸 > 1e-12 才視為正定；不對稱輸入直接報錯。"""

    data = _square(matrix, "M")
    if not is_symmetric(data):
        raise AsymmetricMatrixError("矩陣不對稱，無法判斷正定性")
    try:
        factor = np.linalg.cholesky(data)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.diag(factor) ** 2 > PIVOT_TOLERANCE))


def solve_discrete_lyapunov(
    a: object,
    q: object,
    iteration_cap: int = DEFAULT_ITERATION_CAP,
    tolerance: float = 1e-9,
) -> np.ndarray:
    """以倍增法求解 P = AᵀPA + Q。"""

    a_k = _square(a, "A")
    q_mat = _square(q, "Q")
    if a_k.shape != q_mat.shape:
        raise NumericsError(f"A 與 Q 維度不符 {a_k.shape} / {q_mat.shape}")
    radius = spectral_radius(a_k)
    if radius >= 1.0:
        raise InstabilityError(f"A 的譜半徑 {radius:.6f} >= 1，Lyapunov 方程無解")

    p = q_mat.copy()
    iteration = 0
    for iteration in range(1, iteration_cap + 1):
        p_next = p + a_k.T @ p @ a_k
        a_k = a_k @ a_k
        change = _inf_norm(p_next - p)
        p = p_next
        if change <= np.finfo(float).eps * max(1.0, _inf_norm(p)):
            break

    a_mat = _square(a, "A")
    p = 0.5 * (p + p.T)
    residual = _inf_norm(p - a_mat.T @ p @ a_mat - q_mat)
    if residual > tolerance * max(_inf_norm(q_mat), np.finfo(float).tiny):
        raise ConvergenceError("Lyapunov 倍增疊代未收斂", residual)
    logger.debug(
        "lyapunov_solved",
        extra={"iterations": iteration, "residual": residual, "spectral_radius": radius},
    )
    return p


def riccati_residual(
    a: np.ndarray, b: np.ndarray, q: np.ndarray, r: np.ndarray, p: np.ndarray
) -> float:
    gain_term = a.T @ p @ b @ np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    return _inf_norm(a.T @ p @ a - p - gain_term + q)


def lqr_gain(
    a: object,
    b: object,
    qc: object,
    rc: object,
    iteration_cap: int = DEFAULT_ITERATION_CAP,
    tolerance: float = 1e-9,
) -> Tuple[np.ndarray, np.ndarray]:
    """離散 LQR：以結構保持倍增法解 DARE，回傳 (K, P)。"""

    a_mat = _square(a, "A")
    q_mat = _square(qc, "Qc")
    r_mat = _square(rc, "Rc")
    b_mat = np.asarray(b, dtype=float).reshape(a_mat.shape[0], -1)
    n, m = b_mat.shape
    if q_mat.shape != (n, n) or r_mat.shape != (m, m):
        raise NumericsError(f"LQR 權重維度不符：Qc {q_mat.shape}、Rc {r_mat.shape}")
    for name, weight in (("Qc", q_mat), ("Rc", r_mat)):
        if not is_positive_definite(weight):
            raise NumericsError(f"{name} 必須為對稱正定")

    identity = np.eye(n)
    a_k = a_mat.copy()
    g_k = b_mat @ np.linalg.solve(r_mat, b_mat.T)
    h_k = q_mat.copy()
    converged = False
    iterations = 0
    for iterations in range(1, iteration_cap + 1):
        try:
            w_inv_a = np.linalg.solve(identity + g_k @ h_k, a_k)
            w_inv_g = np.linalg.solve(identity + g_k @ h_k, g_k)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("Riccati 倍增疊代遇到奇異矩陣", float("nan")) from exc
        h_next = h_k + a_k.T @ h_k @ w_inv_a
        g_k = g_k + a_k @ w_inv_g @ a_k.T
        a_k = a_k @ w_inv_a
        change = _inf_norm(h_next - h_k)
        h_k = 0.5 * (h_next + h_next.T)
        if not np.all(np.isfinite(h_k)):
            break
        if change <= 1e-15 * max(1.0, _inf_norm(h_k)):
            converged = True
            break

    p = h_k
    residual = riccati_residual(a_mat, b_mat, q_mat, r_mat, p) if np.all(np.isfinite(p)) else np.inf
    if not converged or residual > tolerance * max(1.0, _inf_norm(p)):
        raise ConvergenceError("Riccati 疊代在上限內未收斂", float(residual))

    gain = np.linalg.solve(r_mat + b_mat.T @ p @ b_mat, b_mat.T @ p @ a_mat)
    radius = spectral_radius(a_mat - b_mat @ gain)
    if radius >= 1.0:
        raise InstabilityError(f"閉迴路譜半徑 {radius:.6f} >= 1，(A, B) 無法穩定")
    logger.info(
        "lqr_converged",
        extra={"iterations": iterations, "residual": float(residual), "spectral_radius": radius},
    )
    return gain, p


def jacobian_fd(
    function: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x0: object,
    u0: object,
    step: Optional[float] = None,
    step_scale: float = 1e-5,
) -> Tuple[np.ndarray, np.ndarray]:
    """中央差分 Jacobian，回傳 (∂f/∂x, ∂f/∂u)。"""

    x_point = np.asarray(x0, dtype=float).reshape(-1)
    u_point = np.asarray(u0, dtype=float).reshape(-1)
    if step is None:
        step = step_scale * max(1.0, float(np.max(np.abs(x_point), initial=0.0)))
    h = step

    def call(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        value = np.asarray(function(x, u), dtype=float).reshape(-1)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError("函數在差分點回傳非有限值", (x.copy(), u.copy()))
        return value

    def columns(point: np.ndarray, other: np.ndarray, wrt_x: bool) -> np.ndarray:
        result = []
        for index in range(point.size):
            offset = np.zeros_like(point)
            offset[index] = h
            if wrt_x:
                forward, backward = call(point + offset, other), call(point - offset, other)
            else:
                forward, backward = call(other, point + offset), call(other, point - offset)
            result.append((forward - backward) / (2.0 * h))
        return np.column_stack(result) if result else np.zeros((rows, 0))

    rows = call(x_point, u_point).size
    return columns(x_point, u_point, True), columns(u_point, x_point, False)
