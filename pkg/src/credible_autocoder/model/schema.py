"""模型檔（JSON）的 pydantic 結構定義。"""

from __future__ import annotations

from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

MatrixLike = Union[float, List[float], List[List[float]], str]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SignalSpec(_Strict):
    """訊號宣告。"""

    name: str
    dim: Union[int, Tuple[int, int]] = 1
    temp: bool = False
    input: bool = False


BlockKind = Literal["gain", "sum", "product", "saturation", "trig", "constant", "external"]


class BlockSpec(_Strict):
    """計算方塊宣告。"""

    id: str
    kind: BlockKind
    inputs: List[str] = Field(default_factory=list)
    output: str
    subsystem: Optional[str] = None
    matrix: Optional[MatrixLike] = None
    signs: Optional[str] = None
    transpose: Optional[List[bool]] = None
    lo: Optional[Union[float, str]] = None
    hi: Optional[Union[float, str]] = None
    fn: Optional[Literal["sin", "cos"]] = None
    value: Optional[MatrixLike] = None
    name: Optional[str] = None
    arity: Optional[int] = None


class PlantSpec(_Strict):
    """受控體註解方塊。"""

    id: str
    kind: Literal["linear", "general"]
    subsystem: str
    inputs: List[str]
    outputs: List[str]
    A: Optional[MatrixLike] = None
    B: Optional[MatrixLike] = None
    C: Optional[MatrixLike] = None
    D: Optional[MatrixLike] = None
    update: Optional[Dict[str, str]] = None


class ObserverSpec(_Strict):
    """同步觀察器註解方塊。"""

    id: str
    kind: Literal["ellipsoid", "general"]
    watched: List[str]
    role: Literal["invariant", "assumption"] = "invariant"
    matrix: Optional[MatrixLike] = None
    param: str = "P"
    predicate: Optional[str] = None


class EquilibriumSpec(_Strict):
    x_ss: List[float]
    u_ss: List[float]


class LqrSpec(_Strict):
    Qc: MatrixLike
    Rc: MatrixLike
    gain: str = "K"


class InvariantSpec(_Strict):
    initial_box: List[float]
    lyapunov_q: Optional[float] = None


class BindingsSpec(_Strict):
    """參數綁定與物理假設。"""

    dt: float = 0.01
    vehicle: Optional[Dict[str, float]] = None
    equilibrium: Optional[EquilibriumSpec] = None
    lqr: Optional[LqrSpec] = None
    invariant: Optional[InvariantSpec] = None
    slip_bounds: Optional[Tuple[float, float]] = None
    params: Dict[str, MatrixLike] = Field(default_factory=dict)


class ModelFile(_Strict):
    """模型檔根節點。"""

    name: str
    signals: List[SignalSpec] = Field(default_factory=list)
    blocks: List[BlockSpec] = Field(default_factory=list)
    plants: List[PlantSpec] = Field(default_factory=list)
    observers: List[ObserverSpec] = Field(default_factory=list)
    bindings: BindingsSpec = Field(default_factory=BindingsSpec)
