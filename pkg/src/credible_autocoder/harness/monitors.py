"""不變量監看器：沿模擬軌跡評估迴路不變量的水位。"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Mapping, Optional, Sequence

import numpy as np

from ..model.expr import Const, Predicate, pred_residual, pred_substitute
from ..model.ir import EllipsoidObserver, GeneralObserver
from ..model.validate import Loop

if TYPE_CHECKING:
    from .simulator import Trace

DEFAULT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Monitor:
    """水位 = 1 + 最大違反量；對 q <= 1 形式的不變量即為 q 本身。"""

    name: str
    predicate: Predicate

    def level(self, signals: Mapping[str, object]) -> float:
        return float(pred_residual(self.predicate, signals)[0]) + 1.0


@dataclass(frozen=True)
class MonitorSummary:
    name: str
    max_value: float
    first_violation: Optional[int]

    @property
    def violated(self) -> bool:
        return self.first_violation is not None


def build_monitors(loops: Sequence[Loop], params: Mapping[str, Const]) -> List[Monitor]:
    """每個具不變量的迴路一個監看器，參數先代入為常數。"""

    monitors: List[Monitor] = []
    for loop in loops:
        observer = loop.invariant
        if isinstance(observer, (EllipsoidObserver, GeneralObserver)):
            monitors.append(Monitor(observer.id, pred_substitute(observer.predicate, params)))
    return monitors


def monitor_report(
    trace: "Trace", monitors: Sequence[Monitor], tolerance: float = DEFAULT_TOLERANCE
) -> List[MonitorSummary]:
    summaries: List[MonitorSummary] = []
    for monitor in monitors:
        values = np.array([monitor.level(record.signals()) for record in trace.records])
        over = np.flatnonzero(values > 1.0 + tolerance)
        summaries.append(
            MonitorSummary(
                name=monitor.name,
                max_value=float(values.max()) if values.size else float("-inf"),
                first_violation=int(over[0]) if over.size else None,
            )
        )
    return summaries


def render_monitor_report(summaries: Sequence[MonitorSummary]) -> str:
    lines = []
    for item in summaries:
        where = "-" if item.first_violation is None else str(item.first_violation)
        status = "VIOLATED" if item.violated else "OK"
        lines.append(f"monitor {item.name} {status} max={item.max_value:.12g} first_violation={where}")
    return "\n".join(lines) + ("\n" if lines else "")
