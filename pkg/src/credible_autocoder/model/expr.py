"""表達式與謂詞 AST。

所有值皆為二維矩陣（行向量為 n×1，純量為 1×1）。數值評估採批次形式：
每個值的形狀為 (N, r, c)，N 為樣本數；參數可用 (r, c) 形狀並自動廣播。
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Iterable, Iterator, Mapping, Optional, Tuple

import numpy as np

from ..core.utils import format_number

Matrix = Tuple[Tuple[float, ...], ...]
Shape = Tuple[int, int]
ExternalFn = Callable[..., np.ndarray]

TRIG_FUNCTIONS = ("sin", "cos")


class Expr:
    """表達式節點基底類別。"""

    __slots__ = ()


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Const(Expr):
    value: Matrix

    @classmethod
    def scalar(cls, value: float) -> "Const":
        return cls(((float(value),),))

    @classmethod
    def from_array(cls, array: object) -> "Const":
        data = np.asarray(array, dtype=float)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        elif data.ndim == 1:
            data = data.reshape(-1, 1)
        return cls(tuple(tuple(float(item) for item in row) for row in data))

    @property
    def shape(self) -> Shape:
        return (len(self.value), len(self.value[0]) if self.value else 0)

    def array(self) -> np.ndarray:
        return np.array(self.value, dtype=float)

    def is_scalar(self) -> bool:
        return self.shape == (1, 1)

    def scalar_value(self) -> float:
        return self.value[0][0]


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Transpose(Expr):
    arg: Expr


@dataclass(frozen=True)
class VCat(Expr):
    items: Tuple[Expr, ...]


@dataclass(frozen=True)
class Sat(Expr):
    arg: Expr
    lo: Expr
    hi: Expr


@dataclass(frozen=True)
class Trig(Expr):
    fn: str
    arg: Expr


@dataclass(frozen=True)
class Apply(Expr):
    name: str
    args: Tuple[Expr, ...]


@dataclass(frozen=True)
class Atom:
    """逐元素不等式 lhs <= rhs。"""

    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Predicate:
    """不等式的合取。"""

    atoms: Tuple[Atom, ...]

    @classmethod
    def of(cls, *atoms: Atom) -> "Predicate":
        return cls(tuple(atoms))


@dataclass(frozen=True)
class QuadraticForm:
    """v'*M*v（M 為 None 時代表單位矩陣）。"""

    vector: Expr
    matrix: Optional[Expr]


ONE = Const.scalar(1.0)
ZERO = Const.scalar(0.0)


def children(expr: Expr) -> Tuple[Expr, ...]:
    if isinstance(expr, (Var, Const)):
        return ()
    if isinstance(expr, (Neg, Transpose)):
        return (expr.arg,)
    if isinstance(expr, Trig):
        return (expr.arg,)
    if isinstance(expr, (Add, Sub, Mul, Div)):
        return (expr.left, expr.right)
    if isinstance(expr, VCat):
        return expr.items
    if isinstance(expr, Sat):
        return (expr.arg, expr.lo, expr.hi)
    if isinstance(expr, Apply):
        return expr.args
    raise TypeError(f"未知的表達式節點: {expr!r}")


def walk(expr: Expr) -> Iterator[Expr]:
    yield expr
    for child in children(expr):
        yield from walk(child)


def free_vars(expr: Expr) -> FrozenSet[str]:
    return frozenset(node.name for node in walk(expr) if isinstance(node, Var))



def pred_free_vars(pred: Predicate) -> FrozenSet[str]:
    names: FrozenSet[str] = frozenset()
    for atom in pred.atoms:
        names = names | free_vars(atom.lhs) | free_vars(atom.rhs)
    return names



def substitute(expr: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """以 mapping 取代自由變數（無綁定子，天然避免捕獲）。"""

    if not mapping:
        return expr
    if isinstance(expr, Var):
        return mapping.get(expr.name, expr)
    if isinstance(expr, Const):
        return expr
    if isinstance(expr, Neg):
        return Neg(substitute(expr.arg, mapping))
    if isinstance(expr, Transpose):
        return Transpose(substitute(expr.arg, mapping))
    if isinstance(expr, Trig):
        return Trig(expr.fn, substitute(expr.arg, mapping))
    if isinstance(expr, (Add, Sub, Mul, Div)):
        return type(expr)(substitute(expr.left, mapping), substitute(expr.right, mapping))
    if isinstance(expr, VCat):
        return VCat(tuple(substitute(item, mapping) for item in expr.items))
    if isinstance(expr, Sat):
        return Sat(
            substitute(expr.arg, mapping),
            substitute(expr.lo, mapping),
            substitute(expr.hi, mapping),
        )
    if isinstance(expr, Apply):
        return Apply(expr.name, tuple(substitute(arg, mapping) for arg in expr.args))
    raise TypeError(f"未知的表達式節點: {expr!r}")


def map_children(expr: Expr, fn: Callable[[Expr], Expr]) -> Expr:
    """以 fn 改寫直接子節點並重建同型節點。"""

    if isinstance(expr, (Var, Const)):
        return expr
    if isinstance(expr, (Neg, Transpose)):
        return type(expr)(fn(expr.arg))
    if isinstance(expr, Trig):
        return Trig(expr.fn, fn(expr.arg))
    if isinstance(expr, (Add, Sub, Mul, Div)):
        return type(expr)(fn(expr.left), fn(expr.right))
    if isinstance(expr, VCat):
        return VCat(tuple(fn(item) for item in expr.items))
    if isinstance(expr, Sat):
        return Sat(fn(expr.arg), fn(expr.lo), fn(expr.hi))
    if isinstance(expr, Apply):
        return Apply(expr.name, tuple(fn(arg) for arg in expr.args))
    raise TypeError(f"未知的表達式節點: {expr!r}")


def pred_substitute(pred: Predicate, mapping: Mapping[str, Expr]) -> Predicate:
    return Predicate(
        tuple(Atom(substitute(a.lhs, mapping), substitute(a.rhs, mapping)) for a in pred.atoms)
    )


def quad_form(vector: Expr, matrix: Optional[Expr] = None) -> Expr:
    if matrix is None:
        return Mul(Transpose(vector), vector)
    return Mul(Mul(Transpose(vector), matrix), vector)


def quad_atom(vector: Expr, matrix: Optional[Expr] = None, level: float = 1.0) -> Atom:
    return Atom(quad_form(vector, matrix), Const.scalar(level))


def match_quadratic(expr: Expr) -> Optional[QuadraticForm]:
    """辨識 v'*v、v'*M*v 與 v'*(M*v) 三種寫法。"""

    if not isinstance(expr, Mul):
        return None
    left, right = expr.left, expr.right
    if isinstance(left, Transpose) and left.arg == right:
        return QuadraticForm(right, None)
    if isinstance(left, Mul) and isinstance(left.left, Transpose) and left.left.arg == right:
        return QuadraticForm(right, left.right)
    if isinstance(left, Transpose) and isinstance(right, Mul) and right.right == left.arg:
        return QuadraticForm(left.arg, right.left)
    return None


# ---------------------------------------------------------------------------
# 批次數值評估


def as_batch(value: object) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.ndim == 0:
        return array.reshape(1, 1, 1)
    if array.ndim == 1:
        return array.reshape(1, -1, 1)
    if array.ndim == 2:
        return array[np.newaxis]
    return array


def _unbatch(value: np.ndarray) -> np.ndarray:
    matrix = value[0]
    if matrix.shape[1] == 1:
        return matrix[:, 0]
    return matrix


def _broadcast_batch(values: Iterable[np.ndarray]) -> Tuple[np.ndarray, ...]:
    items = tuple(values)
    size = max(item.shape[0] for item in items)
    return tuple(np.broadcast_to(item, (size,) + item.shape[1:]) for item in items)


class Evaluator:
    """批次評估器：env 為名稱至陣列的映射，externals 為具名外部函數。"""

    def __init__(
        self,
        env: Mapping[str, object],
        externals: Optional[Mapping[str, ExternalFn]] = None,
    ) -> None:
        self._env: Dict[str, np.ndarray] = {name: as_batch(value) for name, value in env.items()}
        self._externals = dict(externals or {})

    def __call__(self, expr: Expr) -> np.ndarray:
        return self.evaluate(expr)

    def evaluate(self, expr: Expr) -> np.ndarray:
        if isinstance(expr, Var):
            try:
                return self._env[expr.name]
            except KeyError as exc:
                raise KeyError(f"未綁定的變數: {expr.name}") from exc
        if isinstance(expr, Const):
            return as_batch(expr.array())
        if isinstance(expr, Neg):
            return -self.evaluate(expr.arg)
        if isinstance(expr, Add):
            return self.evaluate(expr.left) + self.evaluate(expr.right)
        if isinstance(expr, Sub):
            return self.evaluate(expr.left) - self.evaluate(expr.right)
        if isinstance(expr, Mul):
            left, right = self.evaluate(expr.left), self.evaluate(expr.right)
            if left.shape[1:] == (1, 1) or right.shape[1:] == (1, 1):
                return left * right
            return np.matmul(left, right)
        if isinstance(expr, Div):
            return self.evaluate(expr.left) / self.evaluate(expr.right)
        if isinstance(expr, Transpose):
            return np.swapaxes(self.evaluate(expr.arg), -1, -2)
        if isinstance(expr, VCat):
            parts = _broadcast_batch(self.evaluate(item) for item in expr.items)
            return np.concatenate(parts, axis=1)
        if isinstance(expr, Sat):
            arg = self.evaluate(expr.arg)
            return np.minimum(np.maximum(arg, self.evaluate(expr.lo)), self.evaluate(expr.hi))
        if isinstance(expr, Trig):
            arg = self.evaluate(expr.arg)
            return np.sin(arg) if expr.fn == "sin" else np.cos(arg)
        if isinstance(expr, Apply):
            return self._apply(expr)
        raise TypeError(f"未知的表達式節點: {expr!r}")

    def _apply(self, expr: Apply) -> np.ndarray:
        try:
            function = self._externals[expr.name]
        except KeyError as exc:
            raise KeyError(f"未綁定的外部函數: {expr.name}") from exc
        args = _broadcast_batch(self.evaluate(arg) for arg in expr.args)
        rows = []
        for index in range(args[0].shape[0]):
            point = [_unbatch(arg[index : index + 1]) for arg in args]
            rows.append(as_batch(function(*point))[0])
        return np.stack(rows)

    def residual(self, pred: Predicate) -> np.ndarray:
        """每個樣本的最大違反量（<= 0 代表謂詞成立）。"""

        worst: Optional[np.ndarray] = None
        for atom in pred.atoms:
            gap = self.evaluate(atom.lhs) - self.evaluate(atom.rhs)
            value = gap.reshape(gap.shape[0], -1).max(axis=1)
            worst = value if worst is None else np.maximum(worst, value)
        if worst is None:
            return np.full(1, -np.inf)
        return worst


def evaluate(
    expr: Expr,
    env: Mapping[str, object],
    externals: Optional[Mapping[str, ExternalFn]] = None,
) -> np.ndarray:
    return Evaluator(env, externals).evaluate(expr)


def pred_residual(
    pred: Predicate,
    env: Mapping[str, object],
    externals: Optional[Mapping[str, ExternalFn]] = None,
) -> np.ndarray:
    return Evaluator(env, externals).residual(pred)


# ---------------------------------------------------------------------------
# 形狀推導


class ShapeError(ValueError):
    """表達式維度不一致。"""


def shape_of(
    expr: Expr,
    shapes: Mapping[str, Shape],
    external_shapes: Optional[Mapping[str, Shape]] = None,
) -> Shape:
    externals = external_shapes or {}
    if isinstance(expr, Var):
        if expr.name not in shapes:
            raise ShapeError(f"未知名稱 {expr.name}")
        return shapes[expr.name]
    if isinstance(expr, Const):
        return expr.shape
    if isinstance(expr, (Neg, Trig)):
        return shape_of(expr.arg, shapes, externals)
    if isinstance(expr, Transpose):
        rows, cols = shape_of(expr.arg, shapes, externals)
        return (cols, rows)
    if isinstance(expr, (Add, Sub)):
        left = shape_of(expr.left, shapes, externals)
        right = shape_of(expr.right, shapes, externals)
        if left == right or right == (1, 1):
            return left
        if left == (1, 1):
            return right
        raise ShapeError(f"加減法維度不符 {left} 與 {right}")
    if isinstance(expr, Mul):
        left = shape_of(expr.left, shapes, externals)
        right = shape_of(expr.right, shapes, externals)
        if left == (1, 1):
            return right
        if right == (1, 1):
            return left
        if left[1] != right[0]:
            raise ShapeError(f"矩陣乘法維度不符 {left} 與 {right}")
        return (left[0], right[1])
    if isinstance(expr, Div):
        left = shape_of(expr.left, shapes, externals)
        if shape_of(expr.right, shapes, externals) != (1, 1):
            raise ShapeError("除數必須為純量")
        return left
    if isinstance(expr, VCat):
        parts = [shape_of(item, shapes, externals) for item in expr.items]
        if len({cols for _, cols in parts}) != 1:
            raise ShapeError("垂直串接的行數不一致")
        return (sum(rows for rows, _ in parts), parts[0][1])
    if isinstance(expr, Sat):
        arg = shape_of(expr.arg, shapes, externals)
        for bound in (expr.lo, expr.hi):
            if shape_of(bound, shapes, externals) not in ((1, 1), arg):
                raise ShapeError("sat 邊界維度不符")
        return arg
    if isinstance(expr, Apply):
        for arg in expr.args:
            shape_of(arg, shapes, externals)
        if expr.name not in externals:
            raise ShapeError(f"未宣告的外部函數 {expr.name}")
        return externals[expr.name]
    raise TypeError(f"未知的表達式節點: {expr!r}")


# ---------------------------------------------------------------------------
# Matlab 風格輸出

_SUM, _PRODUCT, _UNARY, _POSTFIX, _ATOM = 1, 2, 3, 4, 5


def _level(expr: Expr) -> int:
    if isinstance(expr, (Add, Sub)):
        return _SUM
    if isinstance(expr, (Mul, Div)):
        return _PRODUCT
    if isinstance(expr, Neg):
        return _UNARY
    if isinstance(expr, Const) and expr.is_scalar() and expr.scalar_value() < 0:
        return _UNARY
    if isinstance(expr, Transpose):
        return _POSTFIX
    return _ATOM


def _wrap(expr: Expr, minimum: int) -> str:
    text = to_matlab(expr)
    return f"({text})" if _level(expr) < minimum else text


def _const_text(const: Const) -> str:
    if const.is_scalar():
        return format_number(const.scalar_value())
    rows = ("; ".join(", ".join(format_number(v) for v in row) for row in const.value))
    return f"[{rows}]"


def to_matlab(expr: Expr) -> str:
    """輸出可被 parser 還原為相同 AST 的文字。"""

    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Const):
        return _const_text(expr)
    if isinstance(expr, Neg):
        inner = _wrap(expr.arg, _UNARY)
        if inner[:1].isdigit():
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(expr, Add):
        return f"{_wrap(expr.left, _SUM)} + {_wrap(expr.right, _PRODUCT)}"
    if isinstance(expr, Sub):
        return f"{_wrap(expr.left, _SUM)} - {_wrap(expr.right, _PRODUCT)}"
    if isinstance(expr, Mul):
        return f"{_wrap(expr.left, _PRODUCT)}*{_wrap(expr.right, _UNARY)}"
    if isinstance(expr, Div):
        return f"{_wrap(expr.left, _PRODUCT)}/{_wrap(expr.right, _UNARY)}"
    if isinstance(expr, Transpose):
        return f"{_wrap(expr.arg, _POSTFIX)}'"
    if isinstance(expr, VCat):
        return "[" + "; ".join(to_matlab(item) for item in expr.items) + "]"
    if isinstance(expr, Sat):
        return f"sat({to_matlab(expr.arg)}, {to_matlab(expr.lo)}, {to_matlab(expr.hi)})"
    if isinstance(expr, Trig):
        return f"{expr.fn}({to_matlab(expr.arg)})"
    if isinstance(expr, Apply):
        return f"{expr.name}(" + ", ".join(to_matlab(arg) for arg in expr.args) + ")"
    raise TypeError(f"未知的表達式節點: {expr!r}")


def atom_to_matlab(atom: Atom) -> str:
    return f"{to_matlab(atom.lhs)} <= {to_matlab(atom.rhs)}"


def pred_to_matlab(pred: Predicate) -> str:
    return " && ".join(atom_to_matlab(atom) for atom in pred.atoms)
