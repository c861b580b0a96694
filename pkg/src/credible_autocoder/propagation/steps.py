from __future__ import annotations

from dataclasses import dataclass

from ..model.expr import Predicate


@dataclass(frozen=True)
class PropagationStep:
    """單一敘述上的傳遞紀錄：forward 為強後條件，backward 為最弱前條件。"""

    index: int
    direction: str
    pre: Predicate
    post: Predicate
    loop: int
