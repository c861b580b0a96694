"""VC 判定：橢球包含的特徵值檢查，與非線性蘊涵的取樣反例搜尋加區間二分認證。"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..codegen.program import DomainFact, shape_param
from ..config.settings import AppSettings
from ..core.errors import VerificationError
from ..core.utils import chunked
from ..model.expr import (
    Const,
    Evaluator,
    Expr,
    ExternalFn,
    Predicate,
    Sat,
    Sub,
    map_children,
    pred_free_vars,
    pred_residual,
    pred_substitute,
)
from ..propagation.simplify import simplify, simplify_predicate
from .intervals import (
    Interval,
    IntervalDomainError,
    IntervalEvaluator,
    IntervalFn,
    IntervalUnsupportedError,
    box_env,
)
from .vcgen import CONTAINMENT, VC, containment_matrices

logger = logging.getLogger(__name__)

Status = Literal["VERIFIED", "FALSIFIED", "UNKNOWN"]
_INTERVAL_ERRORS = (IntervalDomainError, IntervalUnsupportedError, ValueError)


class Verdict(BaseModel):
    """單一 VC 的判定結果與花費統計。"""

    model_config = ConfigDict(frozen=True)

    vc: str
    status: Status
    witness: Optional[Dict[str, List[float]]] = None
    reason: str = ""
    samples: int = 0
    boxes: int = 0
    depth: int = 0
    max_violation: Optional[float] = None

    @property
    def verified(self) -> bool:
        return self.status == "VERIFIED"


@dataclass(frozen=True)
class CheckBudget:
    samples: int = 100_000
    depth: int = 12
    seed: int = 42
    max_boxes: int = 2_000_000
    margin: float = 1e-7
    tolerance: float = 1e-9
    batch: int = 4096

    @classmethod
    def from_settings(cls, settings: AppSettings) -> "CheckBudget":
        return cls(
            samples=settings.samples,
            depth=settings.depth,
            seed=settings.seed,
            max_boxes=settings.max_boxes,
            margin=settings.interval_margin,
            tolerance=settings.containment_tolerance,
        )


def check_ellipsoid_containment(
    q_hyp: object, p_concl: object, tolerance: float = 1e-9, name: str = "containment"
) -> Verdict:
    """{x'Qx <= 1} ⊆ {x'Px <= 1} 若且唯若 P ⪯ Q。"""

    q = np.atleast_2d(np.asarray(q_hyp, dtype=float))
    p = np.atleast_2d(np.asarray(p_concl, dtype=float))
    if q.shape != p.shape or q.shape[0] != q.shape[1]:
        raise VerificationError(f"包含檢查維度不符 {q.shape} / {p.shape}")
    values, vectors = np.linalg.eigh(0.5 * ((q - p) + (q - p).T))
    margin = float(values[0])
    if margin >= -tolerance:
        return Verdict(vc=name, status="VERIFIED", max_violation=-margin)
    direction = vectors[:, 0]
    if direction[np.argmax(np.abs(direction))] < 0:
        direction = -direction
    witness = direction / np.sqrt(direction @ q @ direction)
    hyp_value = float(witness @ q @ witness)
    concl_value = float(witness @ p @ witness)
    if hyp_value > 1.0 + tolerance or concl_value <= 1.0 + tolerance:
        raise VerificationError("包含檢查產生的反例無法重現")
    return Verdict(
        vc=name,
        status="FALSIFIED",
        witness={"x": witness.tolist()},
        reason=f"x'Qx = {hyp_value:.6g}，x'Px = {concl_value:.6g}",
        max_violation=concl_value - 1.0,
    )


def check_image_containment(
    image_shape: object, p_concl: object, tolerance: float = 1e-9, name: str = "containment"
) -> Verdict:
    """像集 {S^½w : |w| <= 1} ⊆ {y'Py <= 1} 若且唯若 λmax(R'SR) <= 1，其中 P = RR'。

    S 可以奇異，不需要反矩陣；反例取像集邊界上使 y'Py 最大的點 y = Sc/√(c'Sc)。
    """

    s = np.atleast_2d(np.asarray(image_shape, dtype=float))
    p = np.atleast_2d(np.asarray(p_concl, dtype=float))
    if s.shape != p.shape or s.shape[0] != s.shape[1]:
        raise VerificationError(f"包含檢查維度不符 {s.shape} / {p.shape}")
    try:
        factor = np.linalg.cholesky(0.5 * (p + p.T))
    except np.linalg.LinAlgError as exc:
        raise VerificationError("結論橢球矩陣不是正定") from exc
    reduced = factor.T @ s @ factor
    values, vectors = np.linalg.eigh(0.5 * (reduced + reduced.T))
    largest = float(values[-1])
    if largest <= 1.0 + tolerance:
        return Verdict(vc=name, status="VERIFIED", max_violation=largest - 1.0)
    direction = factor @ vectors[:, -1]
    witness = s @ direction / np.sqrt(float(direction @ s @ direction))
    if witness[np.argmax(np.abs(witness))] < 0:
        witness = -witness
    concl_value = float(witness @ p @ witness)
    if concl_value <= 1.0 + tolerance:
        raise VerificationError("包含檢查產生的反例無法重現")
    return Verdict(
        vc=name,
        status="FALSIFIED",
        witness={"x": witness.tolist()},
        reason=f"像集邊界點 x'Px = {concl_value:.6g}",
        max_violation=concl_value - 1.0,
    )


def _specialize(expr: Expr, evaluator: IntervalEvaluator) -> Expr:
    """依盒上的區間判斷 sat 的作用區段，線性段以引數取代、飽和段以邊界取代。"""

    if not isinstance(expr, Sat):
        return map_children(expr, lambda child: _specialize(child, evaluator))
    arg = _specialize(expr.arg, evaluator)
    lo = _specialize(expr.lo, evaluator)
    hi = _specialize(expr.hi, evaluator)
    try:
        value, low, high = (evaluator.evaluate(node) for node in (arg, lo, hi))
    except _INTERVAL_ERRORS:
        return Sat(arg, lo, hi)
    if np.all(value.lo >= low.hi) and np.all(value.hi <= high.lo):
        return arg
    if np.all(value.lo >= high.hi):
        return hi
    if np.all(value.hi <= low.lo):
        return lo
    return Sat(arg, lo, hi)


def _upper(expr: Expr, evaluator: IntervalEvaluator) -> Optional[Interval]:
    try:
        return evaluator.evaluate(simplify(expr))
    except _INTERVAL_ERRORS:
        return None


@dataclass
class _Search:
    vc: VC
    hypothesis: Predicate
    conclusion: Predicate
    layout: Dict[str, Tuple[int, Tuple[int, int]]]
    root_lo: np.ndarray
    root_hi: np.ndarray
    budget: CheckBudget
    externals: Optional[Mapping[str, ExternalFn]]
    interval_externals: Optional[Mapping[str, IntervalFn]]

    @property
    def dimension(self) -> int:
        return self.root_lo.size

    def env(self, points: np.ndarray) -> Dict[str, np.ndarray]:
        return {
            name: points[:, start : start + shape[0]].reshape(points.shape[0], *shape)
            for name, (start, shape) in self.layout.items()
        }

    def point(self, row: np.ndarray) -> Dict[str, List[float]]:
        return {
            name: row[start : start + shape[0]].tolist()
            for name, (start, shape) in self.layout.items()
        }

    def sample(self) -> Tuple[int, Optional[float], Optional[np.ndarray]]:
        """第一階段：盒內均勻取樣，回傳 (樣本數, 最大違反量, 反例)。"""

        rng = np.random.default_rng([self.budget.seed, self.vc.ordinal])
        worst: Optional[float] = None
        counted = 0
        for block in chunked(range(self.budget.samples), self.budget.batch):
            size = len(block)
            spread = self.root_hi - self.root_lo
            points = self.root_lo + spread * rng.random((size, self.dimension))
            evaluator = Evaluator(self.env(points), self.externals)
            inside = np.broadcast_to(evaluator.residual(self.hypothesis) <= 0.0, (size,))
            gaps = np.broadcast_to(evaluator.residual(self.conclusion), (size,))
            counted += size
            if not np.any(inside):
                continue
            candidate = float(np.max(gaps[inside]))
            worst = candidate if worst is None else max(worst, candidate)
            if candidate > self.budget.tolerance:
                index = int(np.flatnonzero(inside)[np.argmax(gaps[inside])])
                return counted, worst, points[index]
        return counted, worst, None

    def confirm(self, row: np.ndarray) -> float:
        env = self.env(row[np.newaxis, :])
        hyp = float(pred_residual(self.hypothesis, env, self.externals)[0])
        gap = float(pred_residual(self.conclusion, env, self.externals)[0])
        if hyp > 0.0 or gap <= self.budget.tolerance:
            raise VerificationError(f"VC {self.vc.name} 的反例重新評估後不成立")
        return gap

    def classify(self, lo: np.ndarray, hi: np.ndarray) -> Tuple[bool, float]:
        """回傳 (是否已判定, 結論上界)。假設在盒上不成立或結論被認證皆視為判定。"""

        evaluator = IntervalEvaluator(box_env(self.layout, lo, hi), self.interval_externals)
        hyp_diffs = [
            _specialize(Sub(atom.lhs, atom.rhs), evaluator) for atom in self.hypothesis.atoms
        ]
        scalar_hyps: List[Expr] = []
        for diff in hyp_diffs:
            bound = _upper(diff, evaluator)
            if bound is None:
                continue
            if np.any(bound.lo > 0.0):
                return True, -np.inf
            if bound.shape == (1, 1):
                scalar_hyps.append(diff)
        worst = -np.inf
        resolved = True
        for atom in self.conclusion.atoms:
            diff = _specialize(Sub(atom.lhs, atom.rhs), evaluator)
            bound = _upper(diff, evaluator)
            upper = np.inf if bound is None else float(np.max(bound.hi))
            worst = max(worst, upper)
            if upper <= self.budget.margin:
                continue
            if any(self._certified(Sub(diff, hyp), evaluator) for hyp in scalar_hyps):
                continue
            resolved = False
        return resolved, worst

    def _certified(self, expr: Expr, evaluator: IntervalEvaluator) -> bool:
        bound = _upper(expr, evaluator)
        return bound is not None and float(np.max(bound.hi)) <= self.budget.margin

    def bisect(self) -> Tuple[bool, int, int, Optional[Tuple[np.ndarray, np.ndarray, float]], str]:
        """第二階段：深度優先區間二分。"""

        widths = np.where(self.root_hi > self.root_lo, self.root_hi - self.root_lo, 1.0)
        stack: List[Tuple[np.ndarray, np.ndarray, int]] = [(self.root_lo, self.root_hi, 0)]
        boxes = 0
        deepest = 0
        worst: Optional[Tuple[np.ndarray, np.ndarray, float]] = None
        while stack:
            lo, hi, depth = stack.pop()
            boxes += 1
            deepest = max(deepest, depth)
            if boxes > self.budget.max_boxes:
                return False, boxes, deepest, worst, "超過盒數上限"
            resolved, upper = self.classify(lo, hi)
            if resolved:
                continue
            spread = (hi - lo) / widths
            if depth >= self.budget.depth or not np.any(spread > 0):
                if worst is None or upper > worst[2]:
                    worst = (lo, hi, upper)
                continue
            axis = int(np.argmax(spread))
            middle = 0.5 * (lo[axis] + hi[axis])
            left_hi, right_lo = hi.copy(), lo.copy()
            left_hi[axis] = middle
            right_lo[axis] = middle
            stack.append((right_lo, hi, depth + 1))
            stack.append((lo, left_hi, depth + 1))
        if worst is not None:
            return False, boxes, deepest, worst, "二分深度用盡仍有未判定的盒"
        return True, boxes, deepest, None, ""


def _domain(
    names: List[str], facts: Tuple[DomainFact, ...]
) -> Tuple[Dict[str, Tuple[int, Tuple[int, int]]], np.ndarray, np.ndarray, List[str]]:
    layout: Dict[str, Tuple[int, Tuple[int, int]]] = {}
    lows: List[np.ndarray] = []
    highs: List[np.ndarray] = []
    missing: List[str] = []
    start = 0
    for name in names:
        matching = [fact for fact in facts if fact.name == name]
        if not matching:
            missing.append(name)
            continue
        lo = np.max([np.asarray(fact.lo, dtype=float) for fact in matching], axis=0)
        hi = np.min([np.asarray(fact.hi, dtype=float) for fact in matching], axis=0)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(lo > hi):
            missing.append(name)
            continue
        layout[name] = (start, (lo.size, 1))
        lows.append(lo)
        highs.append(hi)
        start += lo.size
    if not lows:
        return layout, np.zeros(0), np.zeros(0), missing
    return layout, np.concatenate(lows), np.concatenate(highs), missing


def check_nonlinear_implication(
    vc: VC,
    budget: CheckBudget,
    params: Mapping[str, Const],
    externals: Optional[Mapping[str, ExternalFn]] = None,
    interval_externals: Optional[Mapping[str, IntervalFn]] = None,
) -> Verdict:
    """取樣找反例；找不到時在定義域盒上做區間二分，每個葉盒需否定假設或認證結論。"""

    if budget.samples == 0 and budget.depth == 0:
        return Verdict(vc=vc.name, status="UNKNOWN", reason="驗證預算為零")
    hypothesis = simplify_predicate(pred_substitute(vc.hypothesis, params))
    conclusion = simplify_predicate(pred_substitute(vc.conclusion, params))
    names = sorted((pred_free_vars(hypothesis) | pred_free_vars(conclusion)) - set(params))
    layout, lo, hi, missing = _domain(names, vc.facts)
    if missing:
        return Verdict(
            vc=vc.name, status="UNKNOWN", reason=f"變數沒有有界定義域: {', '.join(missing)}"
        )
    search = _Search(
        vc, hypothesis, conclusion, layout, lo, hi, budget, externals, interval_externals
    )
    try:
        counted, worst, witness = search.sample()
    except (KeyError, ArithmeticError) as exc:
        return Verdict(vc=vc.name, status="UNKNOWN", reason=f"取樣評估失敗: {exc}")
    if witness is not None:
        gap = search.confirm(witness)
        verdict = Verdict(
            vc=vc.name,
            status="FALSIFIED",
            witness=search.point(witness),
            reason=f"結論違反 {gap:.6g}",
            samples=counted,
            max_violation=gap,
        )
        _log(verdict)
        return verdict
    resolved, boxes, deepest, leaf, reason = search.bisect()
    if resolved:
        verdict = Verdict(
            vc=vc.name,
            status="VERIFIED",
            samples=counted,
            boxes=boxes,
            depth=deepest,
            max_violation=worst,
        )
    else:
        detail = ""
        if leaf is not None:
            box = {
                name: (leaf[0][s : s + shape[0]].tolist(), leaf[1][s : s + shape[0]].tolist())
                for name, (s, shape) in layout.items()
            }
            detail = f"；最差盒 {box}，結論上界 {leaf[2]:.6g}"
        verdict = Verdict(
            vc=vc.name,
            status="UNKNOWN",
            reason=reason + detail,
            samples=counted,
            boxes=boxes,
            depth=deepest,
            max_violation=worst,
        )
    _log(verdict)
    return verdict


def _log(verdict: Verdict) -> None:
    logger.info(
        "vc_checked",
        extra={
            "vc": verdict.vc,
            "status": verdict.status,
            "samples": verdict.samples,
            "boxes": verdict.boxes,
            "depth": verdict.depth,
        },
    )


def check_vc(
    vc: VC,
    budget: CheckBudget,
    params: Mapping[str, Const],
    externals: Optional[Mapping[str, ExternalFn]] = None,
    interval_externals: Optional[Mapping[str, IntervalFn]] = None,
) -> Verdict:
    """依 VC 種類選擇判定程序；各 VC 的亂數流彼此獨立，可平行執行。"""

    if vc.kind == CONTAINMENT:
        pair = containment_matrices(vc)
        assert pair is not None
        hyp_name, concl_name = pair
        if hyp_name not in params or concl_name not in params:
            return Verdict(vc=vc.name, status="UNKNOWN", reason="橢球矩陣沒有綁定數值")
        concl = params[concl_name].array()
        if shape_param(hyp_name) in params:
            verdict = check_image_containment(
                params[shape_param(hyp_name)].array(), concl, budget.tolerance, vc.name
            )
        else:
            verdict = check_ellipsoid_containment(
                params[hyp_name].array(), concl, budget.tolerance, vc.name
            )
        _log(verdict)
        return verdict
    return check_nonlinear_implication(vc, budget, params, externals, interval_externals)
