"""由不變量與物理假設推得變數界限，並檢查執行期除法的安全性。"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..codegen.program import DomainFact
from ..core.errors import BoundsError
from ..model.expr import Expr, Predicate, Var, VCat, evaluate, match_quadratic
from ..model.parser import parse_expr
from ..numerics.ellipsoid import Ellipsoid
from ..vehicle.equilibrium import Equilibrium
from ..vehicle.params import CarParams
from .intervals import Interval, IntervalDomainError, interval_of

logger = logging.getLogger(__name__)

_PHI_FRONT = parse_expr("(V*cos(beta - delta) + yaw*lf*sin(delta))/((1 + sF)*r)", {}, "phi_F")
_PHI_REAR = parse_expr("(V*cos(beta))/((1 + sR)*r)", {}, "phi_R")


def _constant(expr: Expr, env: Mapping[str, object]) -> Optional[np.ndarray]:
    try:
        return np.asarray(evaluate(expr, env)[0], dtype=float)
    except KeyError:
        return None


def _members(vector: Expr) -> Optional[List[str]]:
    if isinstance(vector, Var):
        return [vector.name]
    if isinstance(vector, VCat) and all(isinstance(item, Var) for item in vector.items):
        return [item.name for item in vector.items]  # type: ignore[union-attr]
    return None


def box_from_predicate(
    pred: Predicate,
    env: Mapping[str, object],
    shapes: Mapping[str, int],
    provenance: str,
) -> List[DomainFact]:
    """lo <= v、v <= hi 與 v'*M*v <= c 形式的原子轉為變數區間，其餘原子略過。"""

    lows: Dict[str, np.ndarray] = {}
    highs: Dict[str, np.ndarray] = {}

    def tighten(name: str, lo: Optional[np.ndarray], hi: Optional[np.ndarray]) -> None:
        size = shapes.get(name, 1)
        current_lo = lows.get(name, np.full(size, -np.inf))
        current_hi = highs.get(name, np.full(size, np.inf))
        if lo is not None:
            current_lo = np.maximum(current_lo, np.broadcast_to(lo.reshape(-1), (size,)))
        if hi is not None:
            current_hi = np.minimum(current_hi, np.broadcast_to(hi.reshape(-1), (size,)))
        lows[name], highs[name] = current_lo, current_hi

    for atom in pred.atoms:
        if isinstance(atom.lhs, Var) and atom.lhs.name in shapes:
            bound = _constant(atom.rhs, env)
            if bound is not None:
                tighten(atom.lhs.name, None, bound)
            continue
        if isinstance(atom.rhs, Var) and atom.rhs.name in shapes:
            bound = _constant(atom.lhs, env)
            if bound is not None:
                tighten(atom.rhs.name, bound, None)
            continue
        form = match_quadratic(atom.lhs)
        level = _constant(atom.rhs, env)
        if form is None or level is None or level.size != 1 or float(level) <= 0:
            continue
        names = _members(form.vector)
        if names is None or any(name not in shapes for name in names):
            continue
        size = sum(shapes[name] for name in names)
        matrix = np.eye(size) if form.matrix is None else _constant(form.matrix, env)
        if matrix is None:
            continue
        half = np.sqrt(float(level)) * Ellipsoid(matrix).half_widths()
        offset = 0
        for name in names:
            width = half[offset : offset + shapes[name]]
            tighten(name, -width, width)
            offset += shapes[name]

    return [
        DomainFact(name, tuple(lows[name].tolist()), tuple(highs[name].tolist()), provenance)
        for name in lows
    ]


def _intersect(facts: Sequence[DomainFact], name: str) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    matching = [fact for fact in facts if fact.name == name]
    if not matching:
        return None
    lo = np.max([np.asarray(fact.lo, dtype=float) for fact in matching], axis=0)
    hi = np.min([np.asarray(fact.hi, dtype=float) for fact in matching], axis=0)
    return lo, hi


def extract_bounds(
    invariant: Ellipsoid,
    equilibrium: Equilibrium,
    gain: object,
    facts: Sequence[DomainFact],
    params: CarParams,
    names: Tuple[str, str, str, str] = ("xtilde", "x", "utilde", "u"),
    aux_radius: float = 1.0,
) -> Dict[str, DomainFact]:
    """x 由橢球外接盒、u 由 LQR 像與滑移假設交集、φ 以區間評估、ω = φ ± |z| 上界。"""

    deviation, state, control_dev, control = names
    slip = _intersect(facts, control)
    if slip is None:
        raise BoundsError(
            f"缺少 {control} 的滑移區間假設（縱向滑移需屬於 (-1, ∞)，須由使用者以觀察器提供）"
        )

    widths = invariant.half_widths()
    k = np.atleast_2d(np.asarray(gain, dtype=float))
    control_widths = np.sqrt(np.diag(k @ np.linalg.inv(invariant.P) @ k.T))
    u_lo = np.maximum(equilibrium.u - control_widths, slip[0])
    u_hi = np.minimum(equilibrium.u + control_widths, slip[1])
    if np.any(u_lo > u_hi):
        raise BoundsError("LQR 控制像與滑移假設沒有交集")
    x_lo, x_hi = invariant.bounding_box(equilibrium.x)

    env = {
        "V": Interval.of(x_lo[0], x_hi[0]),
        "beta": Interval.of(x_lo[1], x_hi[1]),
        "yaw": Interval.of(x_lo[2], x_hi[2]),
        "sF": Interval.of(u_lo[0], u_hi[0]),
        "sR": Interval.of(u_lo[1], u_hi[1]),
        "r": Interval.point(params.r),
        "lf": Interval.point(params.l_f),
        "delta": Interval.point(params.delta),
    }
    try:
        front, rear = interval_of(_PHI_FRONT, env), interval_of(_PHI_REAR, env)
    except IntervalDomainError as exc:
        raise BoundsError(f"φ 的分母區間包含 0：{exc}") from exc
    phi_lo = np.array([front.lo.item(), rear.lo.item()])
    phi_hi = np.array([front.hi.item(), rear.hi.item()])

    def fact(name: str, lo: np.ndarray, hi: np.ndarray, provenance: str) -> DomainFact:
        return DomainFact(name, tuple(lo.tolist()), tuple(hi.tolist()), provenance)

    bounds = {
        deviation: fact(deviation, -widths, widths, "invariant:ellipsoid"),
        state: fact(state, x_lo, x_hi, "invariant:ellipsoid"),
        control_dev: fact(control_dev, -control_widths, control_widths, "invariant:lqr-image"),
        control: fact(control, u_lo, u_hi, "assumption+invariant"),
        "phi": fact("phi", phi_lo, phi_hi, "derived:interval"),
        "omega": fact("omega", phi_lo - aux_radius, phi_hi + aux_radius, "derived:aux-invariant"),
    }
    logger.info("bounds_extracted", extra={"variables": sorted(bounds)})
    return bounds


@dataclass(frozen=True)
class RuntimeGuard:
    name: str
    safe: bool
    detail: str


def runtime_guards(bounds: Mapping[str, DomainFact], params: CarParams) -> List[RuntimeGuard]:
    """確認滑移與 φ 公式中的除法在界限內不會遇到奇異點。"""

    checks = (
        ("omega_floor", "omega", None, params.omega_min, "輪速下界"),
        ("slip_floor", "u", None, params.slip_floor, "滑移下界"),
        ("speed_positive", "x", 0, 0.0, "車速下界"),
    )
    guards: List[RuntimeGuard] = []
    for name, variable, component, floor, label in checks:
        fact = bounds.get(variable)
        if fact is None:
            guards.append(RuntimeGuard(name, False, f"缺少 {variable} 的界限"))
            continue
        values = np.asarray(fact.lo if component is None else fact.lo[component : component + 1])
        lowest = float(values.min())
        guards.append(
            RuntimeGuard(name, lowest > floor, f"{label} {lowest:.6g}，門檻 {floor:.6g}")
        )
    return guards
