"""線性迴路的橢球前向傳遞（仿射像）。"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..core.errors import DegenerateImageError, NonlinearStatementError, PropagationError
from ..model.expr import (
    Add,
    Const,
    Div,
    Expr,
    Mul,
    Neg,
    Predicate,
    Sub,
    Transpose,
    Var,
    VCat,
    quad_atom,
)
from ..model.ir import EllipsoidObserver, LinearPlant, signal_vector
from ..model.validate import Loop
from ..codegen.program import AnnotatedProgram, Contract, shape_param
from .steps import PropagationStep

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10


def _numeric_rank(matrix: np.ndarray) -> int:
    scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
    return int(np.linalg.matrix_rank(matrix, tol=RANK_TOLERANCE * scale))


def ellipsoid_affine_image(shape: np.ndarray, mapping: np.ndarray) -> np.ndarray:
    """{x : x'Px <= 1} 在 y = Lx 下的像 {y : y'Qy <= 1}。

    寬或方陣 L 需列滿秩，Q = (L P⁻¹ L')⁻¹；高且單射的 L 取 Q = L⁺' P L⁺，
    在像空間上與原橢球完全一致。
    """

    p = np.asarray(shape, dtype=float)
    lin = np.atleast_2d(np.asarray(mapping, dtype=float))
    rows, cols = lin.shape
    if p.shape != (cols, cols):
        raise PropagationError(f"橢球維度 {p.shape} 與映射 {lin.shape} 不符")
    rank = _numeric_rank(lin)
    if rows <= cols:
        if rank < rows:
            raise DegenerateImageError(f"映射秩 {rank} 小於列數 {rows}，像集退化")
        image = np.linalg.inv(lin @ np.linalg.solve(p, lin.T))
    else:
        if rank < cols:
            raise DegenerateImageError(f"高映射秩 {rank} 小於行數 {cols}，不是單射")
        pinv = np.linalg.pinv(lin)
        image = pinv.T @ p @ pinv
    return 0.5 * (image + image.T)


def ellipsoid_image_shape(shape: np.ndarray, mapping: np.ndarray) -> np.ndarray:
    """y = Lx 下的像以形狀矩陣 S = L P⁻¹ L' 表示，像集為 {S^½w : |w| <= 1}。

    不要求 L 滿秩；L 奇異時 S 奇異，像集是落在 range(L) 上的扁平橢球。
    """

    p = np.asarray(shape, dtype=float)
    lin = np.atleast_2d(np.asarray(mapping, dtype=float))
    if p.shape != (lin.shape[1], lin.shape[1]):
        raise PropagationError(f"橢球維度 {p.shape} 與映射 {lin.shape} 不符")
    image = lin @ np.linalg.solve(p, lin.T)
    return 0.5 * (image + image.T)


def image_matrix(image_shape: np.ndarray) -> np.ndarray:
    """形狀矩陣的擬反矩陣 Q = S⁺；在 range(S) 上 y'Qy <= 1 與像集一致。"""

    s = np.asarray(image_shape, dtype=float)
    q = np.linalg.pinv(s, rcond=RANK_TOLERANCE, hermitian=True)
    return 0.5 * (q + q.T)


@dataclass(frozen=True)
class _Term:
    """仿射項 linear·x + offset；linear 為 None 代表常數。"""

    linear: Optional[np.ndarray]
    offset: Optional[np.ndarray]

    @property
    def rows(self) -> int:
        source = self.linear if self.linear is not None else self.offset
        assert source is not None
        return source.shape[0]


def _zero_offset(term: _Term) -> bool:
    return term.offset is None or not np.any(term.offset)


class _AffineReader:
    def __init__(self, maps: Mapping[str, np.ndarray], params: Mapping[str, Const], width: int):
        self.maps = maps
        self.params = params
        self.width = width
        self.statement = ""

    def fail(self, message: str) -> NonlinearStatementError:
        return NonlinearStatementError(message, self.statement)

    def read(self, expr: Expr) -> _Term:
        if isinstance(expr, Var):
            if expr.name in self.maps:
                return _Term(self.maps[expr.name], None)
            if expr.name in self.params:
                return _Term(None, self.params[expr.name].array())
            raise self.fail(f"變數 {expr.name} 不是迴路狀態也不是已綁定參數")
        if isinstance(expr, Const):
            return _Term(None, expr.array())
        if isinstance(expr, Neg):
            inner = self.read(expr.arg)
            return _Term(
                None if inner.linear is None else -inner.linear,
                None if inner.offset is None else -inner.offset,
            )
        if isinstance(expr, (Add, Sub)):
            sign = 1.0 if isinstance(expr, Add) else -1.0
            left, right = self.read(expr.left), self.read(expr.right)
            return _Term(
                _combine(left.linear, right.linear, sign),
                _combine(left.offset, right.offset, sign),
            )
        if isinstance(expr, Mul):
            return self._product(self.read(expr.left), self.read(expr.right))
        if isinstance(expr, Div):
            left, right = self.read(expr.left), self.read(expr.right)
            if right.linear is not None or right.offset is None or right.offset.size != 1:
                raise self.fail("除數必須為純量常數")
            scale = 1.0 / float(right.offset.reshape(-1)[0])
            return self._product(left, _Term(None, np.array([[scale]])))
        if isinstance(expr, Transpose):
            inner = self.read(expr.arg)
            if inner.linear is not None:
                raise self.fail("迴路變數不可轉置")
            assert inner.offset is not None
            return _Term(None, inner.offset.T)
        if isinstance(expr, VCat):
            parts = [self.read(item) for item in expr.items]
            if all(part.linear is None for part in parts):
                return _Term(None, np.vstack([part.offset for part in parts]))
            linear = [
                part.linear if part.linear is not None else np.zeros((part.rows, self.width))
                for part in parts
            ]
            offsets = [
                part.offset if part.offset is not None else np.zeros((part.rows, 1))
                for part in parts
            ]
            return _Term(np.vstack(linear), np.vstack(offsets))
        raise self.fail(f"{type(expr).__name__} 不是仿射運算")

    def _product(self, left: _Term, right: _Term) -> _Term:
        if left.linear is not None and right.linear is not None:
            raise self.fail("兩個迴路變數相乘")
        if left.linear is None and right.linear is None:
            assert left.offset is not None and right.offset is not None
            return _Term(None, _matmul(left.offset, right.offset))
        if left.linear is None:
            assert left.offset is not None
            return _Term(
                _matmul(left.offset, right.linear),
                None if right.offset is None else _matmul(left.offset, right.offset),
            )
        assert right.offset is not None
        if right.offset.size != 1:
            raise self.fail("迴路變數只能右乘純量")
        return _Term(
            left.linear * right.offset.item(),
            None if left.offset is None else left.offset * right.offset.item(),
        )


def _combine(
    left: Optional[np.ndarray], right: Optional[np.ndarray], sign: float
) -> Optional[np.ndarray]:
    if left is None and right is None:
        return None
    if left is None:
        return sign * right  # type: ignore[operator]
    if right is None:
        return left
    return left + sign * right


def _matmul(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    if left.size == 1 or right.size == 1:
        return left * right
    return left @ right


def _param_name(base: str, loop: int) -> str:
    return base if loop == 1 else f"{base}_{loop}"


@dataclass(frozen=True, eq=False)
class ForwardResult:
    """前向傳遞結果：Q1 為區段末端所有已指派變數的橢球，Q2 為受控體更新後的狀態橢球。

    q2_shape 為 Q2 的形狀矩陣；閉迴路奇異時 Q2 只在像空間上描述像集。
    """

    loop: int
    q1: np.ndarray
    q2: np.ndarray
    q2_shape: np.ndarray
    q1_name: str
    q2_name: str
    steps: Tuple[PropagationStep, ...]
    contracts: Tuple[Contract, ...]
    params: Tuple[Tuple[str, Const], ...]


def _linear_plant(loop: Loop) -> LinearPlant:
    plant = loop.plant
    if not isinstance(plant, LinearPlant):
        raise PropagationError(f"迴路 {loop.index} 的受控體不是線性，無法前向傳遞")
    return plant


def _constant(expr: Optional[Expr], params: Mapping[str, Const], what: str) -> Optional[np.ndarray]:
    if expr is None:
        return None
    reader = _AffineReader({}, params, 0)
    reader.statement = what
    term = reader.read(expr)
    assert term.offset is not None
    return term.offset


def propagate_linear_forward(
    prog: AnnotatedProgram, loop: Loop, shape: np.ndarray
) -> ForwardResult:
    """將迴路不變量 x'Px <= 1 經區段內仿射敘述與受控體更新往前傳遞。"""

    plant = _linear_plant(loop)
    observer = loop.invariant
    if not isinstance(observer, EllipsoidObserver) or tuple(observer.watched) != (plant.state,):
        raise PropagationError(f"迴路 {loop.index} 需要監看狀態 {plant.state} 的橢球不變量")
    params = prog.param_map()
    p = np.asarray(shape, dtype=float)
    width = p.shape[0]

    c_matrix = _constant(plant.C, params, f"{plant.id}.C")
    d_matrix = _constant(plant.D, params, f"{plant.id}.D")
    if c_matrix is not None and not np.allclose(c_matrix, np.eye(width)):
        raise PropagationError(f"受控體 {plant.id} 的 C 必須為單位矩陣")
    if d_matrix is not None and np.any(d_matrix):
        raise PropagationError(f"受控體 {plant.id} 的 D 必須為零")

    span = prog.span(loop.index)
    maps: Dict[str, np.ndarray] = {plant.state: np.eye(width)}
    names: List[str] = [plant.state]
    current = observer.predicate
    steps: List[PropagationStep] = []
    contracts: List[Contract] = []
    images: List[Tuple[str, np.ndarray]] = []
    reader = _AffineReader(maps, params, width)
    assigns = [
        index
        for index in range(span.first, span.last + 1)
        if prog.statements[index].kind == "assign"
    ]
    q1_name = _param_name("Q1", loop.index)
    for index in assigns:
        statement = prog.statements[index]
        assert statement.target is not None and statement.expr is not None
        reader.statement = statement.render()
        term = reader.read(statement.expr)
        if not _zero_offset(term):
            raise NonlinearStatementError("迴路內敘述含常數偏移", reader.statement)
        maps[statement.target] = (
            term.linear if term.linear is not None else np.zeros((term.rows, width))
        )
        names.append(statement.target)
        stacked = np.vstack([maps[name] for name in names])
        name = q1_name if index == assigns[-1] else _param_name(f"Q1s{index}", loop.index)
        image = ellipsoid_affine_image(p, stacked)
        images.append((name, image))
        post = Predicate.of(quad_atom(signal_vector(names), Var(name)))
        steps.append(PropagationStep(index, "forward", current, post, loop.index))
        contracts.append(
            Contract("ensure", index, "before", "propagated", post, loop=loop.index, label=name)
        )
        current = post

    missing = [name for name in plant.inputs if name not in maps]
    if missing:
        raise PropagationError(f"受控體輸入 {', '.join(missing)} 不在迴路 {loop.index} 的區段內")
    a_matrix = _constant(plant.A, params, f"{plant.id}.A")
    b_matrix = _constant(plant.B, params, f"{plant.id}.B")
    assert a_matrix is not None and b_matrix is not None
    inputs = np.vstack([maps[name] for name in plant.inputs])
    closed = _matmul(a_matrix, np.eye(width)) + _matmul(b_matrix, inputs)
    q2_shape = ellipsoid_image_shape(p, closed)
    q2 = image_matrix(q2_shape)
    rank = _numeric_rank(q2_shape)
    if rank < width:
        logger.info("flat_image", extra={"loop": loop.index, "rank": rank, "dimension": width})
    q2_name = _param_name("Q2", loop.index)
    q2_pred = Predicate.of(quad_atom(Var(plant.state), Var(q2_name)))
    steps.append(PropagationStep(span.last, "forward", current, q2_pred, loop.index))
    if assigns:
        contracts.append(
            Contract(
                "require", span.last, "after", "propagated", current,
                loop=loop.index, label=q1_name,
            )
        )
    contracts.append(
        Contract("ensure", span.last, "after", "propagated", q2_pred, loop=loop.index, label=q2_name)
    )
    q1 = images[-1][1] if images else p
    images.append((q2_name, q2))
    images.append((shape_param(q2_name), q2_shape))
    logger.info(
        "forward_propagated",
        extra={"loop": loop.index, "statements": len(assigns), "q2_trace": float(np.trace(q2))},
    )
    return ForwardResult(
        loop=loop.index,
        q1=q1,
        q2=q2,
        q2_shape=q2_shape,
        q1_name=q1_name,
        q2_name=q2_name,
        steps=tuple(steps),
        contracts=tuple(contracts),
        params=tuple((name, Const.from_array(value)) for name, value in images),
    )
