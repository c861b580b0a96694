"""由帶合約程式產生驗證條件（VC）。"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

from ..codegen.program import AnnotatedProgram, Contract, DomainFact
from ..core.errors import VerificationError
from ..model.expr import Const, Expr, Predicate, Var, match_quadratic, pred_free_vars

logger = logging.getLogger(__name__)

CONTAINMENT = "containment"
IMPLICATION = "implication"


@dataclass(frozen=True)
class VC:
    """hypothesis ⇒ conclusion；facts 為變數的定義域盒。"""

    ordinal: int
    name: str
    loop: Optional[int]
    kind: str
    hypothesis: Predicate
    conclusion: Predicate
    origin: Tuple[str, ...]
    facts: Tuple[DomainFact, ...] = ()

    def free_vars(self) -> frozenset:
        return pred_free_vars(self.hypothesis) | pred_free_vars(self.conclusion)


def _ellipsoid_matrix(pred: Predicate) -> Optional[Tuple[Expr, str]]:
    """單一 v'*M*v <= 1 謂詞回傳 (v, M 的參數名)。"""

    if len(pred.atoms) != 1:
        return None
    atom = pred.atoms[0]
    form = match_quadratic(atom.lhs)
    if form is None or not isinstance(form.matrix, Var):
        return None
    if not (isinstance(atom.rhs, Const) and atom.rhs.value == ((1.0,),)):
        return None
    return form.vector, form.matrix.name


def containment_matrices(vc: VC) -> Optional[Tuple[str, str]]:
    """兩側皆為同一向量上的橢球時回傳 (假設矩陣名, 結論矩陣名)。"""

    left = _ellipsoid_matrix(vc.hypothesis)
    right = _ellipsoid_matrix(vc.conclusion)
    if left is None or right is None or left[0] != right[0]:
        return None
    return left[1], right[1]


def _anchor(contract: Contract) -> str:
    return f"{contract.kind}@{contract.index}:{contract.side}:{contract.label or contract.origin}"


def _make(
    ordinal: int,
    loop: Optional[int],
    name: str,
    hypothesis: Contract,
    conclusion: Contract,
    facts: Tuple[DomainFact, ...],
) -> VC:
    assert hypothesis.pred is not None and conclusion.pred is not None
    draft = VC(
        ordinal=ordinal,
        name=name,
        loop=loop,
        kind=IMPLICATION,
        hypothesis=hypothesis.pred,
        conclusion=conclusion.pred,
        origin=(_anchor(hypothesis), _anchor(conclusion)),
        facts=facts,
    )
    if containment_matrices(draft) is not None:
        return replace(draft, kind=CONTAINMENT)
    return draft


def _pick(contracts: List[Contract], **criteria: object) -> List[Contract]:
    return [c for c in contracts if all(getattr(c, key) == value for key, value in criteria.items())]


def gen_vcs(prog: AnnotatedProgram) -> List[VC]:
    """每個迴路兩類 VC：插入的 require ⇒ 傳遞出的 wp，以及傳遞出的強後條件 ⇒ 插入的 ensure。"""

    vcs: List[VC] = []
    contracts = list(prog.contracts)
    for span in prog.spans:
        loop = span.index
        head_inserted = _pick(
            contracts, kind="require", index=span.first, side="before", origin="inserted", loop=loop
        )
        head_propagated = _pick(
            contracts, kind="require", index=span.first, side="before", origin="propagated", loop=loop
        )
        tail_inserted = _pick(
            contracts, kind="ensure", index=span.last, side="after", origin="inserted", loop=loop
        )
        tail_propagated = _pick(
            contracts, kind="ensure", index=span.last, side="after", origin="propagated", loop=loop
        )
        produced = 0
        for inserted in head_inserted:
            for propagated in head_propagated:
                vcs.append(
                    _make(len(vcs) + 1, loop, f"loop{loop}.entry", inserted, propagated, prog.facts)
                )
                produced += 1
        for propagated in tail_propagated:
            for inserted in tail_inserted:
                vcs.append(
                    _make(len(vcs) + 1, loop, f"loop{loop}.exit", propagated, inserted, prog.facts)
                )
                produced += 1
        if (head_inserted or tail_inserted) and not produced:
            raise VerificationError(f"迴路 {loop} 的不變量沒有對應的傳遞謂詞")
    logger.info("vcs_generated", extra={"program": prog.name, "vcs": len(vcs)})
    return vcs
