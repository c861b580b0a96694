"""控制器模型的中介表示：方塊、訊號與四種註解方塊。"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from pydantic import ValidationError

from ..core.errors import ModelParseError
from ..core.types import Diagnostic
from .expr import (
    Add,
    Apply,
    Const,
    Expr,
    Mul,
    Neg,
    Predicate,
    Sat,
    Shape,
    Sub,
    Transpose,
    Trig,
    Var,
    VCat,
    pred_to_matlab,
    quad_atom,
    to_matlab,
)
from .parser import parse_expr, parse_predicate
from .schema import (
    BindingsSpec,
    BlockSpec,
    MatrixLike,
    ModelFile,
    ObserverSpec,
    PlantSpec,
    SignalSpec,
)

SYNTHESIZE = "synthesize"
_RESERVED_FUNCTIONS = ("sat", "sin", "cos")


def signal_vector(names: Sequence[str]) -> Expr:
    """單一訊號回傳變數，多個訊號回傳垂直串接。"""

    if len(names) == 1:
        return Var(names[0])
    return VCat(tuple(Var(name) for name in names))


@dataclass(frozen=True)
class Signal:
    name: str
    shape: Shape
    temp: bool = False
    boundary: bool = False

    @property
    def rows(self) -> int:
        return self.shape[0]


@dataclass(frozen=True)
class Block:
    """無記憶計算方塊；expression() 給出輸出訊號對輸入訊號的表達式。"""

    id: str
    kind: str
    inputs: Tuple[str, ...]
    output: str
    subsystem: Optional[str] = None
    matrix: Optional[Expr] = None
    signs: Optional[str] = None
    transpose: Tuple[bool, ...] = ()
    lo: Optional[Expr] = None
    hi: Optional[Expr] = None
    fn: Optional[str] = None
    value: Optional[Expr] = None
    function: Optional[str] = None

    def expression(self) -> Expr:
        operands: List[Expr] = [Var(name) for name in self.inputs]
        if self.kind == "gain":
            assert self.matrix is not None
            return Mul(self.matrix, operands[0])
        if self.kind == "sum":
            signs = self.signs or "+" * len(operands)
            node = operands[0] if signs[0] == "+" else Neg(operands[0])
            for sign, operand in zip(signs[1:], operands[1:]):
                node = Add(node, operand) if sign == "+" else Sub(node, operand)
            return node
        if self.kind == "product":
            flags = self.transpose or (False,) * len(operands)
            factors = [Transpose(op) if flag else op for op, flag in zip(operands, flags)]
            node = factors[0]
            for factor in factors[1:]:
                node = Mul(node, factor)
            return node
        if self.kind == "saturation":
            assert self.lo is not None and self.hi is not None
            return Sat(operands[0], self.lo, self.hi)
        if self.kind == "trig":
            assert self.fn is not None
            return Trig(self.fn, operands[0])
        if self.kind == "constant":
            assert self.value is not None
            return self.value
        if self.kind == "external":
            assert self.function is not None
            return Apply(self.function, tuple(operands))
        raise ValueError(f"未知的方塊種類 {self.kind}")


@dataclass(frozen=True)
class LinearPlant:
    """線性受控體 x⁺ = A x + B u（輸出為狀態本身時 C = I、D = 0）。"""

    id: str
    subsystem: str
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    A: Expr
    B: Expr
    C: Optional[Expr] = None
    D: Optional[Expr] = None

    kind = "linear"

    @property
    def state(self) -> str:
        return self.outputs[0]

    def input_vector(self) -> Expr:
        return signal_vector(self.inputs)

    @property
    def updates(self) -> Tuple[Tuple[str, Expr], ...]:
        update = Add(Mul(self.A, Var(self.state)), Mul(self.B, self.input_vector()))
        return ((self.state, update),)


@dataclass(frozen=True)
class GeneralPlant:
    """一般受控體：每個狀態一條更新表達式。"""

    id: str
    subsystem: str
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    updates: Tuple[Tuple[str, Expr], ...]

    kind = "general"


@dataclass(frozen=True)
class EllipsoidObserver:
    """橢球觀察器 v'*P*v <= 1；matrix 為 None 代表由管線合成。"""

    id: str
    watched: Tuple[str, ...]
    role: str
    matrix: Optional[Expr]
    param: str = "P"

    kind = "ellipsoid"

    def vector(self) -> Expr:
        return signal_vector(self.watched)

    @property
    def predicate(self) -> Predicate:
        return Predicate.of(quad_atom(self.vector(), Var(self.param)))


@dataclass(frozen=True)
class GeneralObserver:
    id: str
    watched: Tuple[str, ...]
    role: str
    predicate: Predicate

    kind = "general"


Plant = Union[LinearPlant, GeneralPlant]
Observer = Union[EllipsoidObserver, GeneralObserver]


@dataclass(frozen=True)
class Model:
    name: str
    signals: Tuple[Signal, ...]
    blocks: Tuple[Block, ...]
    plants: Tuple[Plant, ...] = ()
    observers: Tuple[Observer, ...] = ()
    bindings: BindingsSpec = field(default_factory=BindingsSpec)

    @property
    def annotations(self) -> Tuple[Union[Plant, Observer], ...]:
        return self.plants + self.observers

    def signal(self, name: str) -> Signal:
        for item in self.signals:
            if item.name == name:
                return item
        raise KeyError(name)

    def signal_shapes(self) -> Dict[str, Shape]:
        return {item.name: item.shape for item in self.signals}

    def externals(self) -> Dict[str, int]:
        """外部函數名稱與參數個數。"""

        return {b.function: len(b.inputs) for b in self.blocks if b.function is not None}

    def external_shapes(self) -> Dict[str, Shape]:
        shapes = self.signal_shapes()
        return {
            b.function: shapes[b.output]
            for b in self.blocks
            if b.function is not None and b.output in shapes
        }

    def producers(self) -> Dict[str, str]:
        """訊號名稱對應產生它的方塊或受控體 id。"""

        owners: Dict[str, str] = {}
        for block in self.blocks:
            owners[block.output] = block.id
        for plant in self.plants:
            for name in plant.outputs:
                owners[name] = plant.id
        return owners

    def block(self, block_id: str) -> Block:
        for item in self.blocks:
            if item.id == block_id:
                return item
        raise KeyError(block_id)


# ---------------------------------------------------------------------------
# 剖析


class _Builder:
    def __init__(self, externals: Mapping[str, int]) -> None:
        self.diagnostics: List[Diagnostic] = []
        self.externals = dict(externals)

    def fail(self, location: str, message: str) -> None:
        self.diagnostics.append(Diagnostic(location=location, message=message))

    def expr(self, text: str, location: str) -> Optional[Expr]:
        try:
            return parse_expr(text, self.externals, location)
        except ModelParseError as exc:
            self.diagnostics.extend(exc.diagnostics)
            return None

    def predicate(self, text: str, location: str) -> Optional[Predicate]:
        try:
            return parse_predicate(text, self.externals, location)
        except ModelParseError as exc:
            self.diagnostics.extend(exc.diagnostics)
            return None

    def matrix(self, value: MatrixLike, location: str) -> Optional[Expr]:
        if isinstance(value, str):
            return self.expr(value, location)
        if isinstance(value, (int, float)):
            return Const.scalar(value)
        if not value:
            self.fail(location, "矩陣不可為空")
            return None
        if all(isinstance(item, (int, float)) for item in value):
            return Const(tuple((float(item),) for item in value))
        rows = [list(row) if isinstance(row, list) else None for row in value]
        if any(row is None for row in rows) or len({len(row) for row in rows if row}) != 1:
            self.fail(location, "矩陣各列長度不一致")
            return None
        return Const(tuple(tuple(float(item) for item in row) for row in rows if row))


def _signal(spec: SignalSpec, index: int, builder: _Builder) -> Signal:
    if isinstance(spec.dim, int):
        shape: Shape = (spec.dim, 1)
    else:
        shape = (spec.dim[0], spec.dim[1])
    if shape[0] < 1 or shape[1] < 1:
        builder.fail(f"signals.{index}.dim", f"訊號 {spec.name} 維度必須為正")
    return Signal(spec.name, shape, spec.temp, spec.input)


_ARITY = {
    "gain": (1, 1),
    "sum": (1, None),
    "product": (2, None),
    "saturation": (1, 1),
    "trig": (1, 1),
    "constant": (0, 0),
    "external": (0, None),
}
_REQUIRED = {
    "gain": ("matrix",),
    "saturation": ("lo", "hi"),
    "trig": ("fn",),
    "constant": ("value",),
    "external": ("name",),
}


def _block(spec: BlockSpec, index: int, builder: _Builder) -> Optional[Block]:
    where = f"blocks.{index}"
    arity = len(spec.inputs)
    errors: List[str] = []
    low, high = _ARITY[spec.kind]
    if arity < low or (high is not None and arity > high):
        errors.append(f"{spec.kind} 的輸入個數 {arity} 不合法")
    errors.extend(
        f"{spec.kind} 需要 {key}" for key in _REQUIRED.get(spec.kind, ()) if getattr(spec, key) is None
    )
    signs = spec.signs or "+" * arity
    if spec.kind == "sum" and (len(signs) != arity or not set(signs) <= {"+", "-"}):
        errors.append("signs 與輸入不符")
    flags = tuple(spec.transpose or (False,) * arity)
    if spec.kind == "product" and len(flags) != arity:
        errors.append("transpose 與輸入不符")
    if spec.kind == "external":
        if spec.name in _RESERVED_FUNCTIONS:
            errors.append(f"{spec.name} 為保留函數名稱")
        if spec.arity is not None and spec.arity != arity:
            errors.append("arity 與輸入個數不符")
    for message in errors:
        builder.fail(where, f"方塊 {spec.id}: {message}")
    if errors:
        return None

    fields: Dict[str, Any] = {}
    if spec.kind == "sum":
        fields["signs"] = signs
    elif spec.kind == "product":
        fields["transpose"] = flags
    elif spec.kind == "trig":
        fields["fn"] = spec.fn
    elif spec.kind == "external":
        fields["function"] = spec.name
    for key in ("matrix", "lo", "hi", "value"):
        raw = getattr(spec, key)
        if raw is not None and key in _REQUIRED.get(spec.kind, ()):
            fields[key] = builder.matrix(raw, f"{where}.{key}")
            if fields[key] is None:
                return None
    return Block(
        id=spec.id,
        kind=spec.kind,
        inputs=tuple(spec.inputs),
        output=spec.output,
        subsystem=spec.subsystem,
        **fields,
    )


def _plant(spec: PlantSpec, index: int, builder: _Builder) -> Optional[Plant]:
    where = f"plants.{index}"
    inputs, outputs = tuple(spec.inputs), tuple(spec.outputs)
    if spec.kind == "linear":
        if len(outputs) != 1:
            builder.fail(where, f"線性受控體 {spec.id} 必須恰有一個狀態輸出")
            return None
        if spec.A is None or spec.B is None:
            builder.fail(where, f"線性受控體 {spec.id} 需要 A 與 B")
            return None
        matrices = {
            key: builder.matrix(getattr(spec, key), f"{where}.{key}")
            for key in ("A", "B", "C", "D")
            if getattr(spec, key) is not None
        }
        if any(value is None for value in matrices.values()):
            return None
        return LinearPlant(spec.id, spec.subsystem, inputs, outputs, **matrices)  # type: ignore[arg-type]
    if not spec.update:
        builder.fail(where, f"一般受控體 {spec.id} 需要 update")
        return None
    updates = []
    for state, text in spec.update.items():
        expr = builder.expr(text, f"{where}.update.{state}")
        if expr is None:
            return None
        updates.append((state, expr))
    return GeneralPlant(spec.id, spec.subsystem, inputs, outputs, tuple(updates))


def _observer(spec: ObserverSpec, index: int, builder: _Builder) -> Optional[Observer]:
    where = f"observers.{index}"
    watched = tuple(spec.watched)
    if spec.kind == "ellipsoid":
        matrix: Optional[Expr] = None
        if spec.matrix is None:
            builder.fail(where, f"橢球觀察器 {spec.id} 需要 matrix（或 \"{SYNTHESIZE}\"）")
            return None
        if spec.matrix != SYNTHESIZE:
            matrix = builder.matrix(spec.matrix, f"{where}.matrix")
            if matrix is None:
                return None
        return EllipsoidObserver(spec.id, watched, spec.role, matrix, spec.param)
    if spec.predicate is None:
        builder.fail(where, f"一般觀察器 {spec.id} 需要 predicate")
        return None
    pred = builder.predicate(spec.predicate, f"{where}.predicate")
    if pred is None:
        return None
    return GeneralObserver(spec.id, watched, spec.role, pred)


def _check_references(model: Model, builder: _Builder) -> None:
    declared = {item.name: item for item in model.signals}
    seen: Dict[str, int] = {}
    for item in model.signals:
        seen[item.name] = seen.get(item.name, 0) + 1
    for name, count in seen.items():
        if count > 1:
            builder.fail("signals", f"訊號 {name} 重複宣告")

    producers: Dict[str, List[str]] = {}
    consumers: Dict[str, List[str]] = {}
    for block in model.blocks:
        producers.setdefault(block.output, []).append(block.id)
        for name in block.inputs:
            consumers.setdefault(name, []).append(block.id)
    for plant in model.plants:
        for name in plant.outputs:
            producers.setdefault(name, []).append(plant.id)
        for name in plant.inputs:
            consumers.setdefault(name, []).append(plant.id)

    for name in sorted(set(producers) | set(consumers)):
        owners = producers.get(name, []) + consumers.get(name, [])
        if name not in declared:
            builder.fail(owners[0], f"引用了未宣告的訊號 {name}")
            continue
        made = producers.get(name, [])
        if declared[name].boundary and made:
            builder.fail(made[0], f"訊號 {name} 宣告為輸入，卻由 {made[0]} 產生")
        elif len(made) > 1:
            builder.fail(made[1], f"訊號 {name} 有多個產生者: {', '.join(made)}")
        elif not made and not declared[name].boundary:
            builder.fail(consumers[name][0], f"訊號 {name} 被使用但沒有產生者")

    ids = [item.id for item in (*model.blocks, *model.plants, *model.observers)]
    for item_id in sorted({i for i in ids if ids.count(i) > 1}):
        builder.fail(item_id, f"id {item_id} 重複")


def build_model(spec: ModelFile) -> Model:
    """將已通過結構驗證的檔案轉為 Model。"""

    externals = {
        b.name: len(b.inputs) for b in spec.blocks if b.kind == "external" and b.name is not None
    }
    builder = _Builder(externals)
    signals = tuple(_signal(item, index, builder) for index, item in enumerate(spec.signals))
    blocks = [_block(item, index, builder) for index, item in enumerate(spec.blocks)]
    plants = [_plant(item, index, builder) for index, item in enumerate(spec.plants)]
    observers = [_observer(item, index, builder) for index, item in enumerate(spec.observers)]
    if builder.diagnostics:
        raise ModelParseError("模型檔內容錯誤", builder.diagnostics)
    model = Model(
        name=spec.name,
        signals=signals,
        blocks=tuple(b for b in blocks if b is not None),
        plants=tuple(p for p in plants if p is not None),
        observers=tuple(o for o in observers if o is not None),
        bindings=spec.bindings,
    )
    _check_references(model, builder)
    if builder.diagnostics:
        raise ModelParseError("模型檔訊號連接錯誤", builder.diagnostics)
    return model


def parse_model(text: str, location: str = "<model>") -> Model:
    """剖析 JSON 模型檔。"""

    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(
            "模型檔不是合法的 JSON",
            [Diagnostic(location=location, line=exc.lineno, message=exc.msg)],
        ) from exc
    try:
        spec = ModelFile.model_validate(data)
    except ValidationError as exc:
        diagnostics = [
            Diagnostic(
                location=".".join(str(part) for part in error["loc"]) or location,
                message=error["msg"],
            )
            for error in exc.errors()
        ]
        raise ModelParseError("模型檔結構錯誤", diagnostics) from exc
    return build_model(spec)


def read_model(path: Union[str, Path]) -> Model:
    source = Path(path)
    return parse_model(source.read_text(encoding="utf-8"), location=str(source))


# ---------------------------------------------------------------------------
# 輸出


def _matrix_out(expr: Expr) -> Union[float, List[List[float]], str]:
    if isinstance(expr, Const):
        if expr.is_scalar():
            return expr.scalar_value()
        return [list(row) for row in expr.value]
    return to_matlab(expr)


def _block_out(block: Block) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "id": block.id,
        "kind": block.kind,
        "inputs": list(block.inputs),
        "output": block.output,
        "subsystem": block.subsystem,
    }
    if block.matrix is not None:
        data["matrix"] = _matrix_out(block.matrix)
    if block.kind == "sum":
        data["signs"] = block.signs
    if block.kind == "product":
        data["transpose"] = list(block.transpose)
    if block.lo is not None and block.hi is not None:
        data["lo"] = _matrix_out(block.lo)
        data["hi"] = _matrix_out(block.hi)
    if block.fn is not None:
        data["fn"] = block.fn
    if block.value is not None:
        data["value"] = _matrix_out(block.value)
    if block.function is not None:
        data["name"] = block.function
    return data


def _plant_out(plant: Plant) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "id": plant.id,
        "kind": plant.kind,
        "subsystem": plant.subsystem,
        "inputs": list(plant.inputs),
        "outputs": list(plant.outputs),
    }
    if isinstance(plant, LinearPlant):
        for key in ("A", "B", "C", "D"):
            value = getattr(plant, key)
            if value is not None:
                data[key] = _matrix_out(value)
    else:
        data["update"] = {state: to_matlab(expr) for state, expr in plant.updates}
    return data


def _observer_out(observer: Observer) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "id": observer.id,
        "kind": observer.kind,
        "watched": list(observer.watched),
        "role": observer.role,
    }
    if isinstance(observer, EllipsoidObserver):
        data["matrix"] = SYNTHESIZE if observer.matrix is None else _matrix_out(observer.matrix)
        data["param"] = observer.param
    else:
        data["predicate"] = pred_to_matlab(observer.predicate)
    return data


def print_model(model: Model) -> str:
    """輸出可再次被 parse_model 讀回相同 AST 的 JSON。"""

    spec = ModelFile.model_validate(
        {
            "name": model.name,
            "signals": [
                {
                    "name": item.name,
                    "dim": item.shape[0] if item.shape[1] == 1 else list(item.shape),
                    "temp": item.temp,
                    "input": item.boundary,
                }
                for item in model.signals
            ],
            "blocks": [_block_out(item) for item in model.blocks],
            "plants": [_plant_out(item) for item in model.plants],
            "observers": [_observer_out(item) for item in model.observers],
            "bindings": model.bindings.model_dump(),
        }
    )
    return json.dumps(spec.model_dump(mode="json", exclude_defaults=True), indent=2) + "\n"
