"""非線性迴路的最弱前條件（賦值規則）反向傳遞。"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Tuple

from ..codegen.program import AnnotatedProgram, Contract
from ..model.expr import Expr, Predicate, pred_substitute
from ..model.validate import Loop
from .steps import PropagationStep

logger = logging.getLogger(__name__)


def wp_assign(post: Predicate, target: str, expr: Expr) -> Predicate:
    return pred_substitute(post, {target: expr})


@dataclass(frozen=True)
class BackwardResult:
    loop: int
    pre: Predicate
    after_plant: Predicate
    steps: Tuple[PropagationStep, ...]
    contracts: Tuple[Contract, ...]


def propagate_backward(prog: AnnotatedProgram, loop: Loop, post: Predicate) -> BackwardResult:
    """由區段尾的後條件往回代換：先經受控體更新，再逐條經過區段內的指派。"""

    span = prog.span(loop.index)
    updates = dict(loop.plant.updates)
    after_plant = pred_substitute(post, updates)
    steps: List[PropagationStep] = [
        PropagationStep(span.last, "backward", after_plant, post, loop.index)
    ]
    current = after_plant
    for index in range(span.last, span.first - 1, -1):
        statement = prog.statements[index]
        if statement.kind != "assign":
            continue
        assert statement.target is not None and statement.expr is not None
        pre = wp_assign(current, statement.target, statement.expr)
        steps.append(PropagationStep(index, "backward", pre, current, loop.index))
        current = pre
    contracts = (
        Contract(
            "require", span.last, "after", "propagated", after_plant,
            loop=loop.index, label="wp",
        ),
        Contract(
            "require", span.first, "before", "propagated", current,
            loop=loop.index, label="wp",
        ),
    )
    logger.info("backward_propagated", extra={"loop": loop.index, "steps": len(steps)})
    return BackwardResult(loop.index, current, after_plant, tuple(steps), contracts)
