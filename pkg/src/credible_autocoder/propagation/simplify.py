"""語法層級的代數化簡：符號項消去、常數摺疊與攤平。

和式攤平為 (係數, 因子序列) 的項；因子保持原本順序（矩陣乘法不可交換），
純量常數併入係數。結構相同的因子序列合併係數，係數為零者刪除。
"""

from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np

from ..model.expr import (
    ZERO,
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

Term = Tuple[float, Tuple[Expr, ...]]


def _negate(terms: List[Term]) -> List[Term]:
    return [(-coef, factors) for coef, factors in terms]


def _terms(expr: Expr) -> List[Term]:
    if isinstance(expr, Add):
        return _terms(expr.left) + _terms(expr.right)
    if isinstance(expr, Sub):
        return _terms(expr.left) + _negate(_terms(expr.right))
    if isinstance(expr, Neg):
        return _negate(_terms(expr.arg))
    coef, factors = _product(expr)
    if len(factors) == 1 and isinstance(factors[0], (Add, Sub, Neg)):
        return [(coef * inner, rest) for inner, rest in _terms(factors[0])]
    return [(coef, factors)]


def _flatten_product(expr: Expr) -> List[Expr]:
    if isinstance(expr, Mul):
        return _flatten_product(expr.left) + _flatten_product(expr.right)
    return [expr]


def _fold_constants(factors: List[Expr]) -> Tuple[Expr, ...]:
    folded: List[Expr] = []
    for factor in factors:
        previous = folded[-1] if folded else None
        if (
            isinstance(previous, Const)
            and isinstance(factor, Const)
            and previous.shape[1] == factor.shape[0]
        ):
            folded[-1] = Const.from_array(previous.array() @ factor.array())
        else:
            folded.append(factor)
    return tuple(folded)


def _product(expr: Expr) -> Term:
    coef = 1.0
    factors: List[Expr] = []
    for factor in _flatten_product(expr):
        if isinstance(factor, (Add, Sub, Neg)):
            terms = _combine(_terms(factor))
        else:
            terms = [_single(factor)]
        if not terms:
            return (0.0, ())
        if len(terms) == 1:
            inner, inner_factors = terms[0]
            coef *= inner
            factors.extend(inner_factors)
        else:
            factors.append(_rebuild(terms))
    if coef == 0.0:
        return (0.0, ())
    folded = _fold_constants(factors)
    while any(isinstance(f, Const) and f.is_scalar() for f in folded):
        for factor in folded:
            if isinstance(factor, Const) and factor.is_scalar():
                coef *= factor.scalar_value()
        folded = _fold_constants(
            [f for f in folded if not (isinstance(f, Const) and f.is_scalar())]
        )
    return (coef, folded)


def _single(expr: Expr) -> Term:
    """化簡非和非積的節點，回傳單一項。"""

    if isinstance(expr, Const):
        if expr.is_scalar():
            return (expr.scalar_value(), ())
        return (1.0, (expr,))
    if isinstance(expr, Var):
        return (1.0, (expr,))
    if isinstance(expr, Div):
        numerator = _combine(_terms(expr.left))
        denominator = simplify(expr.right)
        if isinstance(denominator, Const) and denominator.is_scalar() and denominator.scalar_value() != 0:
            scale = 1.0 / denominator.scalar_value()
            if not numerator:
                return (0.0, ())
            if len(numerator) == 1:
                return (numerator[0][0] * scale, numerator[0][1])
            return (scale, (_rebuild(numerator),))
        return (1.0, (Div(_rebuild(numerator), denominator),))
    if isinstance(expr, Transpose):
        inner = _combine(_terms(expr.arg))
        if not inner:
            return (0.0, ())
        if len(inner) > 1:
            return (1.0, (Transpose(_rebuild(inner)),))
        coef, factors = inner[0]
        flipped: List[Expr] = []
        for factor in reversed(factors):
            if isinstance(factor, Transpose):
                flipped.append(factor.arg)
            elif isinstance(factor, Const):
                flipped.append(Const.from_array(factor.array().T))
            else:
                flipped.append(Transpose(factor))
        return (coef, _fold_constants(flipped))
    if isinstance(expr, VCat):
        return (1.0, (VCat(tuple(simplify(item) for item in expr.items)),))
    if isinstance(expr, Sat):
        return (1.0, (Sat(simplify(expr.arg), simplify(expr.lo), simplify(expr.hi)),))
    if isinstance(expr, Trig):
        return (1.0, (Trig(expr.fn, simplify(expr.arg)),))
    if isinstance(expr, Apply):
        return (1.0, (Apply(expr.name, tuple(simplify(arg) for arg in expr.args)),))
    raise TypeError(f"未知的表達式節點: {expr!r}")


def _combine(terms: List[Term]) -> List[Term]:
    totals: Dict[Tuple[Expr, ...], float] = {}
    for coef, factors in terms:
        totals[factors] = totals.get(factors, 0.0) + coef
    return [(coef, factors) for factors, coef in totals.items() if coef != 0.0]


def _monomial(coef: float, factors: Tuple[Expr, ...]) -> Expr:
    if not factors:
        return Const.scalar(coef)
    chain: List[Expr] = list(factors) if coef == 1.0 else [Const.scalar(coef), *factors]
    node = chain[0]
    for factor in chain[1:]:
        node = Mul(node, factor)
    return node


def _rebuild(terms: List[Term]) -> Expr:
    if not terms:
        return ZERO
    coef, factors = terms[0]
    node = Neg(_monomial(-coef, factors)) if coef < 0 else _monomial(coef, factors)
    for coef, factors in terms[1:]:
        if coef < 0:
            node = Sub(node, _monomial(-coef, factors))
        else:
            node = Add(node, _monomial(coef, factors))
    return node


def simplify(expr: Expr) -> Expr:
    """消去相同項並摺疊常數；保持語意且具冪等性。"""

    return _rebuild(_combine(_terms(expr)))


def simplify_predicate(pred: Predicate) -> Predicate:
    return Predicate(tuple(Atom(simplify(a.lhs), simplify(a.rhs)) for a in pred.atoms))


def is_zero(expr: Expr) -> bool:
    simplified = simplify(expr)
    return isinstance(simplified, Const) and not np.any(simplified.array())
