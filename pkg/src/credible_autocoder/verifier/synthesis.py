from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from ..numerics.ellipsoid import Ellipsoid
from ..numerics.linalg import DEFAULT_ITERATION_CAP, solve_discrete_lyapunov, spectral_radius

logger = logging.getLogger(__name__)

DEFAULT_LYAPUNOV_Q = 1e-2


def synthesize_linear_invariant(
    a: object,
    b: object,
    gain: object,
    initial_box: Sequence[float],
    lyapunov_q: float = DEFAULT_LYAPUNOV_Q,
    iteration_cap: int = DEFAULT_ITERATION_CAP,
) -> Ellipsoid:
    """解閉迴路 Lyapunov 方程 P = (A-BK)ᵀP(A-BK) + q·I，再縮放使初始盒落在橢球內。"""

    a_mat = np.atleast_2d(np.asarray(a, dtype=float))
    b_mat = np.asarray(b, dtype=float).reshape(a_mat.shape[0], -1)
    k_mat = np.atleast_2d(np.asarray(gain, dtype=float))
    closed = a_mat - b_mat @ k_mat
    shape = solve_discrete_lyapunov(
        closed, lyapunov_q * np.eye(a_mat.shape[0]), iteration_cap=iteration_cap
    )
    ellipsoid = Ellipsoid(shape).scaled_to_contain(initial_box)
    logger.info(
        "invariant_synthesized",
        extra={
            "dimension": ellipsoid.dimension,
            "spectral_radius": spectral_radius(closed),
            "min_eigenvalue": float(np.linalg.eigvalsh(ellipsoid.P)[0]),
        },
    )
    return ellipsoid
