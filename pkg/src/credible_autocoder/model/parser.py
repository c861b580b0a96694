"""中綴表達式與謂詞的遞迴下降剖析器。"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Mapping, Optional

from ..core.errors import ModelParseError
from ..core.types import Diagnostic
from .expr import (
    TRIG_FUNCTIONS,
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

_TOKEN = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op><=|>=|&&|[-+*/'(),;\[\]]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    position: int


def _tokenize(text: str, location: str) -> List[_Token]:
    tokens: List[_Token] = []
    position = 0
    stripped_end = len(text.rstrip())
    while position < stripped_end:
        match = _TOKEN.match(text, position)
        if match is None or match.end() == position:
            raise _error(location, f"無法辨識的字元 {text[position:position + 1]!r}", position)
        kind = match.lastgroup or "op"
        tokens.append(_Token(kind, match.group(kind), match.start(kind)))
        position = match.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


def _error(location: str, message: str, position: int) -> ModelParseError:
    detail = Diagnostic(location=location, message=f"{message}（位置 {position}）")
    return ModelParseError("表達式語法錯誤", [detail])


class _Parser:
    def __init__(self, text: str, location: str, externals: Mapping[str, int]) -> None:
        self._tokens = _tokenize(text, location)
        self._index = 0
        self._location = location
        self._externals = externals

    @property
    def _current(self) -> _Token:
        return self._tokens[self._index]

    def _advance(self) -> _Token:
        token = self._current
        self._index += 1
        return token

    def _accept(self, text: str) -> bool:
        if self._current.kind == "op" and self._current.text == text:
            self._index += 1
            return True
        return False

    def _expect(self, text: str) -> None:
        if not self._accept(text):
            raise _error(self._location, f"預期 {text!r}，得到 {self._current.text!r}", self._current.position)

    def finish(self) -> None:
        if self._current.kind != "end":
            raise _error(self._location, f"多餘的符號 {self._current.text!r}", self._current.position)

    def predicate(self) -> Predicate:
        atoms = [self.atom()]
        while self._accept("&&"):
            atoms.append(self.atom())
        return Predicate(tuple(atoms))

    def atom(self) -> Atom:
        left = self.expr()
        if self._accept("<="):
            return Atom(left, self.expr())
        if self._accept(">="):
            return Atom(self.expr(), left)
        raise _error(self._location, "謂詞需要 <= 或 >=", self._current.position)

    def expr(self) -> Expr:
        node = self.term()
        while True:
            if self._accept("+"):
                node = Add(node, self.term())
            elif self._accept("-"):
                node = Sub(node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.unary()
        while True:
            if self._accept("*"):
                node = Mul(node, self.unary())
            elif self._accept("/"):
                node = Div(node, self.unary())
            else:
                return node

    def unary(self) -> Expr:
        if self._accept("-"):
            if self._current.kind == "number":
                value = -float(self._advance().text)
                return self._postfix(Const.scalar(value))
            return Neg(self.unary())
        return self._postfix(self.primary())

    def _postfix(self, node: Expr) -> Expr:
        while self._accept("'"):
            node = Transpose(node)
        return node

    def primary(self) -> Expr:
        token = self._current
        if token.kind == "number":
            self._advance()
            return Const.scalar(float(token.text))
        if token.kind == "name":
            self._advance()
            if self._accept("("):
                return self._call(token)
            return Var(token.text)
        if self._accept("("):
            node = self.expr()
            self._expect(")")
            return node
        if self._accept("["):
            return self._bracket(token)
        raise _error(self._location, f"非預期的符號 {token.text!r}", token.position)

    def _arguments(self) -> List[Expr]:
        args: List[Expr] = []
        if self._accept(")"):
            return args
        args.append(self.expr())
        while self._accept(","):
            args.append(self.expr())
        self._expect(")")
        return args

    def _call(self, token: _Token) -> Expr:
        name = token.text
        args = self._arguments()
        if name == "sat":
            if len(args) == 1:
                return Sat(args[0], Const.scalar(-1.0), Const.scalar(1.0))
            if len(args) == 3:
                return Sat(args[0], args[1], args[2])
            raise _error(self._location, "sat 需要 1 或 3 個參數", token.position)
        if name in TRIG_FUNCTIONS:
            if len(args) != 1:
                raise _error(self._location, f"{name} 需要 1 個參數", token.position)
            return Trig(name, args[0])
        if name not in self._externals:
            raise _error(self._location, f"未宣告的函數 {name}", token.position)
        if len(args) != self._externals[name]:
            raise _error(self._location, f"{name} 參數個數應為 {self._externals[name]}", token.position)
        return Apply(name, tuple(args))

    def _bracket(self, opening: _Token) -> Expr:
        rows: List[List[Expr]] = [[self.expr()]]
        while True:
            if self._accept(","):
                rows[-1].append(self.expr())
            elif self._accept(";"):
                rows.append([self.expr()])
            else:
                break
        self._expect("]")
        entries = [entry for row in rows for entry in row]
        if all(isinstance(entry, Const) and entry.is_scalar() for entry in entries):
            if len({len(row) for row in rows}) != 1:
                raise _error(self._location, "矩陣各列長度不一致", opening.position)
            values = [[_scalar(entry) for entry in row] for row in rows]
            return Const(tuple(tuple(row) for row in values))
        if any(len(row) != 1 for row in rows):
            raise _error(self._location, "符號矩陣僅支援垂直串接 [a; b]", opening.position)
        if len(rows) == 1:
            return rows[0][0]
        return VCat(tuple(row[0] for row in rows))


def parse_expr(
    text: str,
    externals: Optional[Mapping[str, int]] = None,
    location: str = "<expr>",
) -> Expr:
    """剖析單一表達式。"""

    parser = _Parser(text, location, externals or {})
    node = parser.expr()
    parser.finish()
    return node


def parse_predicate(
    text: str,
    externals: Optional[Mapping[str, int]] = None,
    location: str = "<predicate>",
) -> Predicate:
    """剖析以 && 串接的不等式。"""

    parser = _Parser(text, location, externals or {})
    pred = parser.predicate()
    parser.finish()
    return pred


def _scalar(entry: Expr) -> float:
    assert isinstance(entry, Const)
    return entry.scalar_value()
