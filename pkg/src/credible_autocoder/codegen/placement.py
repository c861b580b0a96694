"""合約放置規則與定義先於使用檢查。"""

from __future__ import annotations

from typing import Collection, Dict, Iterable, List, Mapping, Optional, Sequence

from ..core.errors import PlacementError
from ..model.expr import Predicate, pred_free_vars
from ..model.ir import GeneralObserver, Observer
from ..model.validate import Loop
from .program import AnnotatedProgram, Contract


def _first_definitions(prog: AnnotatedProgram) -> Dict[str, int]:
    first: Dict[str, int] = {}
    for index, statement in enumerate(prog.statements):
        name = statement.defines
        if name is not None and name not in first:
            first[name] = index
    return first


def _require_assigned(
    pred: Predicate, defined: Mapping[str, int], signals: Collection[str], what: str
) -> None:
    missing = sorted((pred_free_vars(pred) & set(signals)) - set(defined))
    if missing:
        raise PlacementError(f"{what} 引用從未指派的變數: {', '.join(missing)}")


def place_annotations(
    prog: AnnotatedProgram,
    loops: Sequence[Loop],
    invariants: Mapping[int, Predicate],
    assumptions: Iterable[Observer] = (),
    signals: Collection[str] = (),
    labels: Optional[Mapping[int, str]] = None,
) -> AnnotatedProgram:
    """插入迴路不變量（區段首 require、尾 ensure）、受控體 assume 與非歸納假設。"""

    defined = _first_definitions(prog)
    contracts: List[Contract] = list(prog.contracts)
    for loop in loops:
        span = prog.span(loop.index)
        invariant = invariants.get(loop.index)
        label = (labels or {}).get(loop.index, "invariant")
        if invariant is not None:
            _require_assigned(invariant, defined, signals, f"迴路 {loop.index} 的不變量")
            contracts.append(
                Contract(
                    "require", span.first, "before", "inserted", invariant,
                    loop=loop.index, label=label,
                )
            )
            contracts.append(
                Contract(
                    "ensure", span.last, "after", "inserted", invariant,
                    loop=loop.index, label=label,
                )
            )
        for update in loop.plant.updates:
            contracts.append(
                Contract(
                    "assume", span.last, "after", "plant", update=update,
                    loop=loop.index, label=loop.plant.id,
                )
            )
    for observer in assumptions:
        if not isinstance(observer, GeneralObserver):
            continue
        _require_assigned(observer.predicate, defined, signals, f"假設 {observer.id}")
        anchor = max((defined[name] for name in observer.watched if name in defined), default=None)
        if anchor is None:
            raise PlacementError(
                f"假設 {observer.id} 監看的變數 {', '.join(observer.watched)} 沒有對應的敘述"
            )
        contracts.append(
            Contract("assume", anchor, "after", "assumption", observer.predicate, label=observer.id)
        )
    placed = prog.with_contracts(contracts)
    problems = check_def_before_use(placed)
    if problems:
        raise PlacementError("合約引用了尚未定義的變數: " + "; ".join(problems))
    return placed


def check_def_before_use(prog: AnnotatedProgram) -> List[str]:
    """before i 區塊的 require/assume 只能使用 i 之前定義的變數；ensure 為敘述 i 的後條件。"""

    first = _first_definitions(prog)
    problems: List[str] = []
    for contract in prog.contracts:
        if not 0 <= contract.index < len(prog.statements):
            problems.append(f"{contract.kind}@{contract.index} 超出程式範圍")
            continue
        limit = contract.index
        if contract.side == "before" and contract.kind != "ensure":
            limit -= 1
        for name in sorted(contract.free_vars()):
            position = first.get(name)
            if position is not None and position > limit:
                problems.append(
                    f"{contract.kind}@{contract.index} 使用了在敘述 {position} 才定義的 {name}"
                )
    return problems
