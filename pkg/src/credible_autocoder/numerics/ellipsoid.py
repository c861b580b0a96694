"""橢球 {x : xᵀPx <= 1}。"""

from __future__ import annotations

import itertools
from typing import Optional, Tuple

import numpy as np

from ..core.errors import AsymmetricMatrixError, NumericsError
from .linalg import is_positive_definite, is_symmetric


class Ellipsoid:
    """水準固定為 1 的橢球，P 對稱正定。"""

    __slots__ = ("_shape",)

    def __init__(self, shape: object) -> None:
        data = np.atleast_2d(np.asarray(shape, dtype=float))
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise NumericsError(f"橢球矩陣必須為方陣，得到 {data.shape}")
        if not is_symmetric(data):
            raise AsymmetricMatrixError("橢球矩陣不對稱")
        data = 0.5 * (data + data.T)
        if not is_positive_definite(data):
            raise NumericsError("橢球矩陣必須為正定")
        data.setflags(write=False)
        self._shape = data

    @property
    def P(self) -> np.ndarray:
        return self._shape

    @property
    def dimension(self) -> int:
        return self._shape.shape[0]

    def __repr__(self) -> str:
        return f"Ellipsoid(dimension={self.dimension})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Ellipsoid):
            return NotImplemented
        return self._shape.shape == other._shape.shape and bool(np.all(self._shape == other._shape))

    def __hash__(self) -> int:
        return hash(self._shape.tobytes())

    def value(self, points: object) -> np.ndarray:
        """逐點計算 xᵀPx；points 形狀為 (n,) 或 (N, n)。"""

        data = np.asarray(points, dtype=float)
        batch = np.atleast_2d(data)
        values = np.einsum("ij,jk,ik->i", batch, self._shape, batch)
        return values[0] if data.ndim == 1 else values

    def contains(self, points: object, tolerance: float = 1e-9) -> np.ndarray:
        return np.asarray(self.value(points) <= 1.0 + tolerance)

    def half_widths(self) -> np.ndarray:
        """軸向半寬 √diag(P⁻¹)。"""

        return np.sqrt(np.diag(np.linalg.inv(self._shape)))

    def bounding_box(self, center: Optional[object] = None) -> Tuple[np.ndarray, np.ndarray]:
        widths = self.half_widths()
        origin = np.zeros(self.dimension) if center is None else np.asarray(center, dtype=float)
        return origin - widths, origin + widths

    def scaled_to_contain(self, half_widths: object) -> "Ellipsoid":
        """P ← P/γ，γ 為盒角點上 xᵀPx 的最大值，使整個盒落在橢球內。"""

        widths = np.asarray(half_widths, dtype=float).reshape(-1)
        if widths.size != self.dimension:
            raise NumericsError(f"初始盒維度 {widths.size} 與橢球維度 {self.dimension} 不符")
        corners = np.array(list(itertools.product((-1.0, 1.0), repeat=self.dimension))) * widths
        gamma = float(np.max(self.value(corners)))
        if gamma <= 0.0:
            return self
        return Ellipsoid(self._shape / gamma)

    def boundary_samples(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """在邊界 xᵀPx = 1 上均勻方向取樣。"""

        directions = rng.standard_normal((count, self.dimension))
        norms = np.sqrt(self.value(directions))
        return directions / norms[:, np.newaxis]

    def interior_samples(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """在橢球內部均勻取樣。"""

        boundary = self.boundary_samples(count, rng)
        radii = rng.uniform(0.0, 1.0, size=count) ** (1.0 / self.dimension)
        return boundary * radii[:, np.newaxis]
