"""帶合約程式的文字輸出：Matlab 風格註解程式與機器可讀 VC 檔。"""

from __future__ import annotations

import json
from typing import List, Optional

from ..core.errors import ModelParseError
from ..core.types import Diagnostic
from ..model.expr import Const, atom_to_matlab, to_matlab
from ..model.sexpr import (
    SNode,
    build_expr,
    build_predicate,
    dump_expr,
    dump_predicate,
    read_sexprs,
)
from ..propagation.steps import PropagationStep
from .program import AnnotatedProgram, Contract, DomainFact, LoopSpan, Statement

MATLAB = "matlab-like"
MACHINE = "machine-vc"
STYLES = (MATLAB, MACHINE)
VC_VERSION = "1"

_KEYWORDS = {"require": "requires", "assume": "assumes", "ensure": "ensures"}


def _contract_lines(contract: Contract) -> List[str]:
    keyword = _KEYWORDS[contract.kind]
    if contract.update is not None:
        state, expr = contract.update
        return [f"{keyword} {state} = {to_matlab(expr)};"]
    assert contract.pred is not None
    return [f"{keyword} {atom_to_matlab(atom)};" for atom in contract.pred.atoms]


def _contract_block(contracts: List[Contract]) -> List[str]:
    if not contracts:
        return []
    body = [line for contract in contracts for line in _contract_lines(contract)]
    lines = [f"/*@ {body[0]}"]
    lines.extend(f"  @ {line}" for line in body[1:])
    lines.append("  @*/")
    return lines


def _emit_matlab(prog: AnnotatedProgram) -> str:
    lines = [f"% annotated program for model {prog.name}"]
    for span in prog.spans:
        lines.append(
            f"% loop {span.index}: subsystem {span.subsystem}, plant {span.plant}, "
            f"statements {span.first + 1}-{span.last + 1}"
        )
    for index, statement in enumerate(prog.statements):
        lines.extend(_contract_block(list(prog.contracts_at(index, "before"))))
        lines.append(statement.render())
        lines.extend(_contract_block(list(prog.contracts_at(index, "after"))))
    return "\n".join(lines) + "\n"


def _vector_sexpr(values: tuple) -> str:
    return dump_expr(Const(tuple((float(value),) for value in values)))


def _emit_machine(prog: AnnotatedProgram) -> str:
    lines = [f"vc {VC_VERSION}", f"program {prog.name}"]
    for key, value in prog.meta:
        lines.append(f"meta {key} {json.dumps(value)}")
    for name, const in prog.params:
        lines.append(f"param {name} {dump_expr(const)}")
    for fact in prog.facts:
        lines.append(
            f"fact {fact.name} {fact.provenance} {_vector_sexpr(fact.lo)} {_vector_sexpr(fact.hi)}"
        )
    for statement in prog.statements:
        target = statement.target or "-"
        tail = f" {dump_expr(statement.expr)}" if statement.expr is not None else ""
        lines.append(f"stmt {statement.kind} {target} {statement.source or '-'}{tail}")
    for span in prog.spans:
        lines.append(f"span {span.index} {span.first} {span.last} {span.subsystem} {span.plant}")
    for contract in prog.contracts:
        head = (
            f"contract {contract.kind} {contract.index} {contract.side} {contract.origin} "
            f"{contract.loop if contract.loop is not None else '-'} {contract.label or '-'}"
        )
        if contract.update is not None:
            state, expr = contract.update
            lines.append(f"{head} update {state} {dump_expr(expr)}")
        else:
            assert contract.pred is not None
            lines.append(f"{head} pred {dump_predicate(contract.pred)}")
    for step in prog.steps:
        lines.append(
            f"step {step.loop} {step.index} {step.direction} "
            f"{dump_predicate(step.pre)} {dump_predicate(step.post)}"
        )
    return "\n".join(lines) + "\n"


def emit_text(prog: AnnotatedProgram, style: str = MATLAB) -> str:
    """輸出固定格式文字；相同輸入必得相同位元組。"""

    if style == MATLAB:
        return _emit_matlab(prog)
    if style == MACHINE:
        return _emit_machine(prog)
    raise ValueError(f"未知的輸出格式 {style}，可用: {', '.join(STYLES)}")


def _fail(line_no: int, message: str) -> ModelParseError:
    return ModelParseError("VC 檔格式錯誤", [Diagnostic(location="<vc>", line=line_no, message=message)])


def _optional(token: str) -> Optional[str]:
    return None if token == "-" else token


def _vector(node: SNode) -> tuple:
    const = build_expr(node)
    if not isinstance(const, Const):
        raise TypeError("fact 邊界必須為常數")
    return tuple(row[0] for row in const.value)


def parse_vc(text: str) -> AnnotatedProgram:
    """emit_text(..., "machine-vc") 的反函數。"""

    name = ""
    meta: List[tuple] = []
    params: List[tuple] = []
    facts: List[DomainFact] = []
    statements: List[Statement] = []
    spans: List[LoopSpan] = []
    contracts: List[Contract] = []
    steps: List[PropagationStep] = []
    seen_header = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        keyword, _, rest = line.partition(" ")
        try:
            if keyword == "vc":
                if rest != VC_VERSION:
                    raise _fail(line_no, f"不支援的 VC 版本 {rest}")
                seen_header = True
            elif keyword == "program":
                name = rest
            elif keyword == "meta":
                key, _, value = rest.partition(" ")
                meta.append((key, json.loads(value)))
            elif keyword == "param":
                key, _, body = rest.partition(" ")
                const = build_expr(read_sexprs(body)[0])
                if not isinstance(const, Const):
                    raise _fail(line_no, f"參數 {key} 必須為常數")
                params.append((key, const))
            elif keyword == "fact":
                fact_name, provenance, body = rest.split(" ", 2)
                lo, hi = read_sexprs(body)
                facts.append(DomainFact(fact_name, _vector(lo), _vector(hi), provenance))
            elif keyword == "stmt":
                parts = rest.split(" ", 3)
                expr = build_expr(read_sexprs(parts[3])[0]) if len(parts) > 3 else None
                statements.append(Statement(parts[0], _optional(parts[1]), expr, _optional(parts[2]) or ""))
            elif keyword == "span":
                index, first, last, subsystem, plant = rest.split(" ")
                spans.append(LoopSpan(int(index), int(first), int(last), subsystem, plant))
            elif keyword == "contract":
                kind, index, side, origin, loop, label, form, body = rest.split(" ", 7)
                loop_index = None if loop == "-" else int(loop)
                if form == "update":
                    state, _, expr_text = body.partition(" ")
                    update = (state, build_expr(read_sexprs(expr_text)[0]))
                    contracts.append(
                        Contract(kind, int(index), side, origin, None, update, loop_index, _optional(label) or "")
                    )
                else:
                    pred = build_predicate(read_sexprs(body)[0])
                    contracts.append(
                        Contract(kind, int(index), side, origin, pred, None, loop_index, _optional(label) or "")
                    )
            elif keyword == "step":
                loop, index, direction, body = rest.split(" ", 3)
                pre, post = read_sexprs(body)
                steps.append(
                    PropagationStep(int(index), direction, build_predicate(pre), build_predicate(post), int(loop))
                )
            else:
                raise _fail(line_no, f"未知的紀錄類型 {keyword}")
        except ModelParseError as exc:
            if exc.diagnostics and exc.diagnostics[0].line is None:
                raise _fail(line_no, exc.diagnostics[0].message) from exc
            raise
        except (ValueError, TypeError, IndexError) as exc:
            raise _fail(line_no, str(exc)) from exc
    if not seen_header:
        raise _fail(1, "缺少 vc 標頭")
    return AnnotatedProgram(
        name=name,
        statements=tuple(statements),
        contracts=tuple(contracts),
        spans=tuple(spans),
        params=tuple(params),
        facts=tuple(facts),
        steps=tuple(steps),
        meta=tuple(meta),
    )
