"""帶合約的直線程式。"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterator, List, Optional, Tuple

from ..model.expr import Const, Expr, Predicate, free_vars, pred_free_vars, to_matlab
from ..propagation.steps import PropagationStep

KINDS = ("require", "assume", "ensure")
SIDES = ("before", "after")
ORIGINS = ("inserted", "propagated", "plant", "assumption")
SHAPE_SUFFIX = "_shape"


@dataclass(frozen=True)
class Statement:
    kind: str
    target: Optional[str] = None
    expr: Optional[Expr] = None
    source: str = ""

    @classmethod
    def input(cls, target: str, source: str) -> "Statement":
        return cls("input", target, None, source)

    @classmethod
    def assign(cls, target: str, expr: Expr, source: str) -> "Statement":
        return cls("assign", target, expr, source)

    @classmethod
    def output(cls, expr: Expr, source: str) -> "Statement":
        return cls("output", None, expr, source)

    @property
    def defines(self) -> Optional[str]:
        return self.target if self.kind in ("input", "assign") else None

    def render(self) -> str:
        if self.kind == "input":
            return f"{self.target} = Input();"
        if self.kind == "output":
            assert self.expr is not None
            return f"Output({to_matlab(self.expr)});"
        assert self.expr is not None
        return f"{self.target} = {to_matlab(self.expr)};"


@dataclass(frozen=True)
class Contract:
    """require / assume / ensure；update 僅用於受控體 assume（狀態更新等式）。"""

    kind: str
    index: int
    side: str
    origin: str
    pred: Optional[Predicate] = None
    update: Optional[Tuple[str, Expr]] = None
    loop: Optional[int] = None
    label: str = ""

    def free_vars(self) -> FrozenSet[str]:
        if self.update is not None:
            state, expr = self.update
            return frozenset({state}) | free_vars(expr)
        assert self.pred is not None
        return pred_free_vars(self.pred)

    def sort_key(self) -> Tuple[int, int, int, int, int, str]:
        return (
            self.index,
            SIDES.index(self.side),
            KINDS.index(self.kind),
            ORIGINS.index(self.origin),
            self.loop or 0,
            self.label,
        )


@dataclass(frozen=True)
class LoopSpan:
    index: int
    first: int
    last: int
    subsystem: str
    plant: str


@dataclass(frozen=True)
class DomainFact:
    """物理假設或不變量導出的變數區間。"""

    name: str
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    provenance: str


@dataclass(frozen=True)
class AnnotatedProgram:
    name: str
    statements: Tuple[Statement, ...] = ()
    contracts: Tuple[Contract, ...] = ()
    spans: Tuple[LoopSpan, ...] = ()
    params: Tuple[Tuple[str, Const], ...] = ()
    facts: Tuple[DomainFact, ...] = ()
    steps: Tuple[PropagationStep, ...] = ()
    meta: Tuple[Tuple[str, str], ...] = field(default=())

    def span(self, loop: int) -> LoopSpan:
        for item in self.spans:
            if item.index == loop:
                return item
        raise KeyError(loop)

    def param_map(self) -> Dict[str, Const]:
        return dict(self.params)

    def meta_map(self) -> Dict[str, str]:
        return dict(self.meta)

    def contracts_at(self, index: int, side: str) -> Iterator[Contract]:
        return (c for c in self.contracts if c.index == index and c.side == side)

    def with_contracts(self, contracts: List[Contract]) -> "AnnotatedProgram":
        """去重並以標準順序排序，重複套用結果不變。"""

        unique = list(dict.fromkeys(contracts))
        return replace(self, contracts=tuple(sorted(unique, key=Contract.sort_key)))


def shape_param(name: str) -> str:
    """橢球像 name 的形狀矩陣 S 所用的參數名；像集為 {S^½w : |w| <= 1}。"""

    return f"{name}{SHAPE_SUFFIX}"
