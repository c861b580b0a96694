"""表達式的前綴 S 式編碼，供機器可讀的 VC 檔使用。"""

from __future__ import annotations

from typing import List, Tuple, Union

from ..core.errors import ModelParseError
from ..core.types import Diagnostic
from .expr import (
    Add,
    Apply,
    Atom,
    Const,
    Div,
    Expr,
    Mul,
    Neg,
    Predicate,
    Sat,
    Sub,
    Transpose,
    Trig,
    Var,
    VCat,
)

SNode = Union[str, List["SNode"]]

_BINARY = {"add": Add, "sub": Sub, "mul": Mul, "div": Div}
_BINARY_NAMES = {cls: name for name, cls in _BINARY.items()}


def dump_expr(expr: Expr) -> str:
    if isinstance(expr, Var):
        return f"(var {expr.name})"
    if isinstance(expr, Const):
        rows, cols = expr.shape
        values = " ".join(repr(value) for row in expr.value for value in row)
        return f"(const {rows} {cols} {values})"
    if isinstance(expr, Neg):
        return f"(neg {dump_expr(expr.arg)})"
    if isinstance(expr, Transpose):
        return f"(tr {dump_expr(expr.arg)})"
    if isinstance(expr, Trig):
        return f"({expr.fn} {dump_expr(expr.arg)})"
    if isinstance(expr, (Add, Sub, Mul, Div)):
        name = _BINARY_NAMES[type(expr)]
        return f"({name} {dump_expr(expr.left)} {dump_expr(expr.right)})"
    if isinstance(expr, VCat):
        return "(vcat " + " ".join(dump_expr(item) for item in expr.items) + ")"
    if isinstance(expr, Sat):
        return f"(sat {dump_expr(expr.arg)} {dump_expr(expr.lo)} {dump_expr(expr.hi)})"
    if isinstance(expr, Apply):
        args = " ".join(dump_expr(arg) for arg in expr.args)
        return f"(app {expr.name} {args})" if args else f"(app {expr.name})"
    raise TypeError(f"未知的表達式節點: {expr!r}")


def dump_predicate(pred: Predicate) -> str:
    atoms = " ".join(f"(le {dump_expr(a.lhs)} {dump_expr(a.rhs)})" for a in pred.atoms)
    return f"(and {atoms})"


def _tokens(text: str) -> List[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _read(tokens: List[str], index: int) -> Tuple[SNode, int]:
    if index >= len(tokens):
        raise _error("S 式意外結束")
    token = tokens[index]
    if token == "(":
        items: List[SNode] = []
        index += 1
        while index < len(tokens) and tokens[index] != ")":
            node, index = _read(tokens, index)
            items.append(node)
        if index >= len(tokens):
            raise _error("S 式缺少右括號")
        return items, index + 1
    if token == ")":
        raise _error("S 式出現多餘的右括號")
    return token, index + 1


def _error(message: str) -> ModelParseError:
    return ModelParseError("VC 檔格式錯誤", [Diagnostic(location="<vc>", message=message)])


def read_sexprs(text: str) -> List[SNode]:
    """讀取一行中連續的多個 S 式。"""

    tokens = _tokens(text)
    nodes: List[SNode] = []
    index = 0
    while index < len(tokens):
        node, index = _read(tokens, index)
        nodes.append(node)
    return nodes


def _head(node: SNode) -> Tuple[str, List[SNode]]:
    if not isinstance(node, list) or not node or not isinstance(node[0], str):
        raise _error(f"預期以名稱開頭的串列: {node!r}")
    return node[0], node[1:]


def _text(node: SNode) -> str:
    if not isinstance(node, str):
        raise _error(f"預期原子: {node!r}")
    return node


def build_expr(node: SNode) -> Expr:
    head, rest = _head(node)
    if head == "var":
        return Var(_text(rest[0]))
    if head == "const":
        rows, cols = int(_text(rest[0])), int(_text(rest[1]))
        values = [float(_text(item)) for item in rest[2:]]
        if len(values) != rows * cols:
            raise _error("常數矩陣元素個數不符")
        return Const(tuple(tuple(values[r * cols : (r + 1) * cols]) for r in range(rows)))
    if head == "neg":
        return Neg(build_expr(rest[0]))
    if head == "tr":
        return Transpose(build_expr(rest[0]))
    if head in ("sin", "cos"):
        return Trig(head, build_expr(rest[0]))
    if head in _BINARY:
        return _BINARY[head](build_expr(rest[0]), build_expr(rest[1]))
    if head == "vcat":
        return VCat(tuple(build_expr(item) for item in rest))
    if head == "sat":
        return Sat(build_expr(rest[0]), build_expr(rest[1]), build_expr(rest[2]))
    if head == "app":
        return Apply(_text(rest[0]), tuple(build_expr(item) for item in rest[1:]))
    raise _error(f"未知的 S 式標籤 {head}")


def build_predicate(node: SNode) -> Predicate:
    head, rest = _head(node)
    if head != "and":
        raise _error("謂詞必須以 and 開頭")
    atoms = []
    for item in rest:
        tag, operands = _head(item)
        if tag != "le" or len(operands) != 2:
            raise _error("原子必須為 (le lhs rhs)")
        atoms.append(Atom(build_expr(operands[0]), build_expr(operands[1])))
    return Predicate(tuple(atoms))
