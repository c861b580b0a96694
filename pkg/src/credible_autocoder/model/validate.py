"""模型語意檢查與驗證迴路辨識。"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from ..core.errors import AsymmetricMatrixError, ModelValidationError, NumericsError
from ..core.types import Diagnostic
from ..numerics.linalg import is_positive_definite
from .expr import Const, Expr, Shape, ShapeError, free_vars, pred_free_vars, shape_of
from .ir import (
    Block,
    EllipsoidObserver,
    GeneralObserver,
    LinearPlant,
    Model,
    Observer,
    Plant,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Loop:
    """受控體註解與其子系統方塊組成的閉迴路。"""

    index: int
    subsystem: str
    plant: Plant
    blocks: Tuple[Block, ...]
    observers: Tuple[Observer, ...] = ()

    @property
    def block_ids(self) -> Tuple[str, ...]:
        return tuple(block.id for block in self.blocks)

    @property
    def states(self) -> Tuple[str, ...]:
        return self.plant.outputs

    @property
    def invariant(self) -> Optional[Observer]:
        return self.observers[0] if self.observers else None


def topological_blocks(blocks: Sequence[Block]) -> Tuple[List[Block], List[Block]]:
    """依資料流排序；同層以宣告順序決定先後。回傳 (已排序, 形成迴圈的剩餘方塊)。"""

    produced_by = {block.output: block for block in blocks}
    pending = list(blocks)
    ordered: List[Block] = []
    done: Set[str] = set()
    while pending:
        for block in pending:
            upstream = [produced_by[name].id for name in block.inputs if name in produced_by]
            if all(item in done for item in upstream):
                ordered.append(block)
                done.add(block.id)
                pending.remove(block)
                break
        else:
            return ordered, pending
    return ordered, []


class _Checker:
    def __init__(self, model: Model, param_shapes: Mapping[str, Shape]) -> None:
        self.model = model
        self.diagnostics: List[Diagnostic] = []
        self.signal_shapes = model.signal_shapes()
        self.shapes: Dict[str, Shape] = {**param_shapes, **self.signal_shapes}
        for name, value in model.bindings.params.items():
            if not isinstance(value, str) and name not in self.shapes:
                array = np.atleast_1d(np.asarray(value, dtype=float))
                self.shapes[name] = (array.shape[0], array.shape[1] if array.ndim == 2 else 1)
        self.external_shapes = model.external_shapes()

    def fail(self, location: str, message: str) -> None:
        self.diagnostics.append(Diagnostic(location=location, message=message))

    def typed(self, expr: Expr) -> bool:
        return free_vars(expr) <= set(self.shapes)

    def shape(self, expr: Expr, location: str) -> Optional[Shape]:
        if not self.typed(expr):
            return None
        try:
            return shape_of(expr, self.shapes, self.external_shapes)
        except ShapeError as exc:
            self.fail(location, f"維度錯誤: {exc}")
            return None

    def expect(self, expr: Expr, target: str, location: str) -> None:
        found = self.shape(expr, location)
        wanted = self.signal_shapes.get(target)
        if found is not None and wanted is not None and found != wanted:
            self.fail(location, f"輸出 {target} 維度應為 {wanted}，表達式為 {found}")

    def blocks(self) -> None:
        for block in self.model.blocks:
            self.expect(block.expression(), block.output, block.id)
            if isinstance(block.lo, Const) and isinstance(block.hi, Const):
                if not np.all(block.lo.array() < block.hi.array()):
                    self.fail(block.id, "saturation 需要 lo < hi")
        _, cyclic = topological_blocks(self.model.blocks)
        if cyclic:
            names = ", ".join(block.id for block in cyclic)
            self.fail("blocks", f"計算方塊形成迴圈: {names}")

    def plants(self) -> None:
        for plant in self.model.plants:
            if isinstance(plant, LinearPlant):
                self._linear(plant)
            elif set(dict(plant.updates)) != set(plant.outputs):
                self.fail(plant.id, "update 的狀態必須與 outputs 一致")
            for state, update in plant.updates:
                self.expect(update, state, f"{plant.id}.update.{state}")

    def _linear(self, plant: LinearPlant) -> None:
        n = self.signal_shapes.get(plant.state, (0, 1))[0]
        m = sum(self.signal_shapes.get(name, (0, 1))[0] for name in plant.inputs)
        expected = {"A": (n, n), "B": (n, m), "C": (n, n), "D": (n, m)}
        for key, wanted in expected.items():
            value = getattr(plant, key)
            if value is None:
                continue
            found = self.shape(value, f"{plant.id}.{key}")
            if found is not None and found != wanted:
                self.fail(f"{plant.id}.{key}", f"{key} 維度應為 {wanted}，得到 {found}")

    def observers(self) -> None:
        for observer in self.model.observers:
            unknown = [name for name in observer.watched if name not in self.signal_shapes]
            if unknown:
                self.fail(observer.id, f"觀察器監看未知訊號: {', '.join(unknown)}")
                continue
            if isinstance(observer, EllipsoidObserver):
                self._ellipsoid(observer)
            else:
                self._general(observer)

    def _ellipsoid(self, observer: EllipsoidObserver) -> None:
        n = sum(self.signal_shapes[name][0] for name in observer.watched)
        if observer.matrix is None:
            return
        found = self.shape(observer.matrix, f"{observer.id}.matrix")
        if found is not None and found != (n, n):
            self.fail(observer.id, f"橢球矩陣維度應為 {(n, n)}，得到 {found}")
            return
        if isinstance(observer.matrix, Const):
            try:
                definite = is_positive_definite(observer.matrix.array())
            except (AsymmetricMatrixError, NumericsError) as exc:
                self.fail(observer.id, str(exc))
                return
            if not definite:
                self.fail(observer.id, "橢球矩陣必須對稱正定")

    def _general(self, observer: GeneralObserver) -> None:
        signals = pred_free_vars(observer.predicate) & set(self.signal_shapes)
        outside = sorted(signals - set(observer.watched))
        if outside:
            self.fail(observer.id, f"謂詞引用未監看的訊號: {', '.join(outside)}")
        for index, atom in enumerate(observer.predicate.atoms):
            left = self.shape(atom.lhs, f"{observer.id}.atom{index}")
            right = self.shape(atom.rhs, f"{observer.id}.atom{index}")
            if left is not None and right is not None and (1, 1) not in (left, right) and left != right:
                self.fail(observer.id, f"不等式兩側維度不符 {left} / {right}")

    def loops(self) -> List[Loop]:
        loops: List[Loop] = []
        for plant in self.model.plants:
            members = tuple(b for b in self.model.blocks if b.subsystem == plant.subsystem)
            if not members:
                self.fail(plant.id, f"子系統 {plant.subsystem} 沒有任何計算方塊")
                continue
            outputs = {block.output for block in members}
            consumed = {name for block in members for name in block.inputs}
            missing = [name for name in plant.inputs if name not in outputs]
            if missing:
                self.fail(plant.id, f"受控體輸入 {', '.join(missing)} 不是由子系統 {plant.subsystem} 產生")
            if not set(plant.outputs) & consumed:
                self.fail(plant.id, f"受控體輸出沒有回饋到子系統 {plant.subsystem}")
            loops.append(Loop(len(loops) + 1, plant.subsystem, plant, members))
        return self._attach(loops)

    def _attach(self, loops: List[Loop]) -> List[Loop]:
        attached: Dict[int, List[Observer]] = {loop.index: [] for loop in loops}
        for observer in self.model.observers:
            if observer.role != "invariant":
                continue
            owner = next((loop for loop in loops if set(observer.watched) <= set(loop.states)), None)
            if owner is None:
                self.fail(observer.id, "不變量觀察器無法對應到任何迴路的受控體狀態")
                continue
            attached[owner.index].append(observer)
        return [
            Loop(loop.index, loop.subsystem, loop.plant, loop.blocks, tuple(attached[loop.index]))
            for loop in loops
        ]


def validate_model(model: Model, param_shapes: Optional[Mapping[str, Shape]] = None) -> List[Loop]:
    """檢查維度、迴圈與觀察器，並依宣告順序回傳驗證迴路。"""

    checker = _Checker(model, param_shapes or {})
    checker.blocks()
    checker.plants()
    checker.observers()
    loops = checker.loops()
    if checker.diagnostics:
        raise ModelValidationError("模型驗證失敗", checker.diagnostics)
    logger.info(
        "loops_detected",
        extra={"model": model.name, "loops": len(loops), "subsystems": [loop.subsystem for loop in loops]},
    )
    return loops


def assumption_observers(model: Model) -> List[Observer]:
    return [observer for observer in model.observers if observer.role == "assumption"]
