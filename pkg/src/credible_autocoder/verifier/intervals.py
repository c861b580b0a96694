"""矩陣區間算術：表達式在變數盒上的保守包絡。

實數語意，不做向外捨入；判定時以 margin 吸收浮點誤差。
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from ..model.expr import (
    Add,
    Apply,
    Const,
    Div,
    Expr,
    Mul,
    Neg,
    Sat,
    Sub,
    Transpose,
    Trig,
    Var,
    VCat,
)

TWO_PI = 2.0 * math.pi


class IntervalDomainError(ArithmeticError):
    """區間運算超出定義域（例如除數區間含 0）。"""


class IntervalUnsupportedError(ValueError):
    """運算沒有區間延伸（例如未提供區間版本的外部函數）。"""


def _matrix(value: object) -> np.ndarray:
    data = np.asarray(value, dtype=float)
    if data.ndim == 0:
        return data.reshape(1, 1)
    if data.ndim == 1:
        return data.reshape(-1, 1)
    return data


@dataclass(frozen=True, eq=False)
class Interval:
    """二維區間矩陣 [lo, hi]，逐元素 lo <= hi。"""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def of(cls, lo: object, hi: object) -> "Interval":
        low, high = _matrix(lo), _matrix(hi)
        if low.shape != high.shape:
            raise ValueError(f"區間上下界維度不符 {low.shape} / {high.shape}")
        if np.any(low > high):
            raise ValueError("區間下界大於上界")
        return cls(low, high)

    @classmethod
    def point(cls, value: object) -> "Interval":
        return cls.of(value, value)

    @property
    def shape(self) -> tuple:
        return self.lo.shape

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, value: object, tolerance: float = 0.0) -> bool:
        data = _matrix(value)
        return bool(np.all(data >= self.lo - tolerance) and np.all(data <= self.hi + tolerance))

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __add__(self, other: "Interval") -> "Interval":
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def __sub__(self, other: "Interval") -> "Interval":
        return Interval(self.lo - other.hi, self.hi - other.lo)

    def transpose(self) -> "Interval":
        return Interval(self.lo.T, self.hi.T)

    def __repr__(self) -> str:
        return f"Interval(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


def _elementwise_product(left: Interval, right: Interval) -> Interval:
    with np.errstate(invalid="ignore"):
        candidates = np.stack(
            [
                left.lo * right.lo,
                left.lo * right.hi,
                left.hi * right.lo,
                left.hi * right.hi,
            ]
        )
    candidates = np.nan_to_num(candidates, nan=0.0)
    return Interval(candidates.min(axis=0), candidates.max(axis=0))


def multiply(left: Interval, right: Interval) -> Interval:
    """純量與矩陣逐元素相乘，否則為矩陣乘法。"""

    if left.shape == (1, 1) or right.shape == (1, 1):
        return _elementwise_product(left, right)
    if left.shape[1] != right.shape[0]:
        raise ValueError(f"矩陣乘法維度不符 {left.shape} 與 {right.shape}")
    a = Interval(left.lo[:, :, np.newaxis], left.hi[:, :, np.newaxis])
    b = Interval(right.lo[np.newaxis, :, :], right.hi[np.newaxis, :, :])
    terms = _elementwise_product(a, b)
    return Interval(terms.lo.sum(axis=1), terms.hi.sum(axis=1))


def divide(left: Interval, right: Interval) -> Interval:
    if np.any((right.lo <= 0.0) & (right.hi >= 0.0)):
        raise IntervalDomainError("除數區間包含 0")
    reciprocal = Interval(1.0 / right.hi, 1.0 / right.lo)
    if right.shape != (1, 1) and right.shape != left.shape:
        raise ValueError(f"除法維度不符 {left.shape} / {right.shape}")
    return _elementwise_product(left, reciprocal)


def square_sum(vector: Interval) -> Interval:
    """v'v 的緊包絡：各分量平方區間相加。"""

    lo, hi = vector.lo, vector.hi
    straddles = (lo <= 0.0) & (hi >= 0.0)
    low = np.where(straddles, 0.0, np.minimum(lo * lo, hi * hi))
    high = np.maximum(lo * lo, hi * hi)
    return Interval(np.array([[low.sum()]]), np.array([[high.sum()]]))


def saturate(value: Interval, lo: Interval, hi: Interval) -> Interval:
    """sat(x, a, b) = min(max(x, a), b) 對三個引數皆單調遞增，端點直接夾限。"""

    return Interval(
        np.minimum(np.maximum(value.lo, lo.lo), hi.lo),
        np.minimum(np.maximum(value.hi, lo.hi), hi.hi),
    )


def sine(value: Interval) -> Interval:
    lo, hi = value.lo, value.hi
    low = np.minimum(np.sin(lo), np.sin(hi))
    high = np.maximum(np.sin(lo), np.sin(hi))
    peak = np.ceil((lo - math.pi / 2) / TWO_PI) * TWO_PI + math.pi / 2
    trough = np.ceil((lo + math.pi / 2) / TWO_PI) * TWO_PI - math.pi / 2
    high = np.where(peak <= hi, 1.0, high)
    low = np.where(trough <= hi, -1.0, low)
    full = (hi - lo) >= TWO_PI
    return Interval(np.where(full, -1.0, low), np.where(full, 1.0, high))


def cosine(value: Interval) -> Interval:
    return sine(Interval(value.lo + math.pi / 2, value.hi + math.pi / 2))


def vcat(items: List[Interval]) -> Interval:
    return Interval(np.vstack([item.lo for item in items]), np.vstack([item.hi for item in items]))


IntervalFn = Callable[..., Interval]


class IntervalEvaluator:
    """以區間環境評估表達式；v'*v 形式的相鄰因子以平方和包絡。"""

    def __init__(
        self,
        env: Mapping[str, Interval],
        externals: Optional[Mapping[str, IntervalFn]] = None,
    ) -> None:
        self._env = dict(env)
        self._externals = dict(externals or {})

    def evaluate(self, expr: Expr) -> Interval:
        if isinstance(expr, Var):
            try:
                return self._env[expr.name]
            except KeyError as exc:
                raise IntervalUnsupportedError(f"變數 {expr.name} 沒有區間") from exc
        if isinstance(expr, Const):
            return Interval.point(expr.array())
        if isinstance(expr, Neg):
            return -self.evaluate(expr.arg)
        if isinstance(expr, Add):
            return self.evaluate(expr.left) + self.evaluate(expr.right)
        if isinstance(expr, Sub):
            return self.evaluate(expr.left) - self.evaluate(expr.right)
        if isinstance(expr, Mul):
            return self._product(expr)
        if isinstance(expr, Div):
            return divide(self.evaluate(expr.left), self.evaluate(expr.right))
        if isinstance(expr, Transpose):
            return self.evaluate(expr.arg).transpose()
        if isinstance(expr, VCat):
            return vcat([self.evaluate(item) for item in expr.items])
        if isinstance(expr, Sat):
            return saturate(
                self.evaluate(expr.arg), self.evaluate(expr.lo), self.evaluate(expr.hi)
            )
        if isinstance(expr, Trig):
            inner = self.evaluate(expr.arg)
            return sine(inner) if expr.fn == "sin" else cosine(inner)
        if isinstance(expr, Apply):
            function = self._externals.get(expr.name)
            if function is None:
                raise IntervalUnsupportedError(f"外部函數 {expr.name} 沒有區間延伸")
            return function(*(self.evaluate(arg) for arg in expr.args))
        raise TypeError(f"未知的表達式節點: {expr!r}")

    def _product(self, expr: Mul) -> Interval:
        factors: List[Expr] = []
        stack: List[Expr] = [expr]
        while stack:
            node = stack.pop()
            if isinstance(node, Mul):
                stack.append(node.right)
                stack.append(node.left)
            else:
                factors.append(node)
        values: List[Interval] = []
        index = 0
        while index < len(factors):
            factor = factors[index]
            following = factors[index + 1] if index + 1 < len(factors) else None
            if isinstance(factor, Transpose) and following is not None and factor.arg == following:
                values.append(square_sum(self.evaluate(following)))
                index += 2
                continue
            values.append(self.evaluate(factor))
            index += 1
        result = values[0]
        for value in values[1:]:
            result = multiply(result, value)
        return result


def interval_of(
    expr: Expr,
    env: Mapping[str, Interval],
    externals: Optional[Mapping[str, IntervalFn]] = None,
) -> Interval:
    return IntervalEvaluator(env, externals).evaluate(expr)


def box_env(names: Mapping[str, tuple], lo: np.ndarray, hi: np.ndarray) -> Dict[str, Interval]:
    """將扁平盒 [lo, hi] 依 names（名稱 → (起點, 形狀)）切成各變數的區間。"""

    env: Dict[str, Interval] = {}
    for name, (start, shape) in names.items():
        size = shape[0] * shape[1]
        env[name] = Interval(
            lo[start : start + size].reshape(shape), hi[start : start + size].reshape(shape)
        )
    return env
