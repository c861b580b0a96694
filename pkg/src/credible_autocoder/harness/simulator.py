"""車輛兩個迴路的閉迴路模擬（顯式 Euler，步長與註解中的 dt 相同）。"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import IntegrationError, SimulationError, VehicleSingularityError
from ..core.utils import format_number
from ..numerics.ellipsoid import Ellipsoid
from ..vehicle.control import closed_loop_phi_jacobian, linear_control, torque_control
from ..vehicle.dynamics import CarState, friction_force, manifold_z, phi, plant_f, wheel_dynamics
from ..vehicle.equilibrium import Equilibrium
from ..vehicle.params import CarParams
from .monitors import Monitor

logger = logging.getLogger(__name__)

SIGNALS = ("x", "xtilde", "utilde", "u", "omega", "z", "torque")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    steps: int = 10_000
    initial: Optional[CarState] = None
    monitors: Tuple[Monitor, ...] = ()
    seed: int = 42

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise SimulationError(f"dt 必須為正，得到 {self.dt}")
        if self.steps < 1:
            raise SimulationError(f"steps 至少為 1，得到 {self.steps}")


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """LQR 外迴路加滑動模態內迴路所需的全部數值。"""

    params: CarParams
    gain: np.ndarray
    equilibrium: Equilibrium
    step_scale: float = 1e-5

    def signals(self, state: CarState) -> Dict[str, np.ndarray]:
        x = state.x_vector
        x_tilde = x - self.equilibrium.x
        u_tilde = linear_control(x_tilde, self.gain)
        u = u_tilde + self.equilibrium.u
        dphi = closed_loop_phi_jacobian(x, u, self.gain, self.params, self.step_scale)
        z = manifold_z(state.omega_vector, x, u, self.params)
        torque = torque_control(z, x, u, self.params, dphi)
        return {
            "x": x,
            "xtilde": x_tilde,
            "utilde": u_tilde,
            "u": u,
            "omega": state.omega_vector,
            "z": z,
            "torque": torque,
        }

    def equilibrium_state(self) -> CarState:
        x, u = self.equilibrium.x, self.equilibrium.u
        return CarState.of(x, phi(x, u, self.params))

    def state_from(self, x_tilde: object, z: object) -> CarState:
        """由偏差 x̃ 與流形座標 z 還原 (x, ω)。"""

        x = self.equilibrium.x + np.asarray(x_tilde, dtype=float).reshape(-1)
        u = self.equilibrium.u + linear_control(x - self.equilibrium.x, self.gain)
        return CarState.of(x, phi(x, u, self.params) + np.asarray(z, dtype=float).reshape(-1))


@dataclass(frozen=True)
class StepRecord:
    step: int
    values: Tuple[Tuple[str, Tuple[float, ...]], ...]
    monitors: Tuple[Tuple[str, float], ...] = ()

    def signals(self) -> Dict[str, np.ndarray]:
        return {name: np.array(value) for name, value in self.values}


@dataclass(frozen=True)
class Trace:
    records: Tuple[StepRecord, ...]
    final: CarState
    monitor_names: Tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([dict(record.values)[name] for record in self.records])


def step_closed_loop(state: CarState, cfg: SimConfig, loop: ClosedLoop) -> CarState:
    """單步 Euler：輪胎力取指令滑移，ω 依輪子動態、x 依車身動態更新。

    車身力只看指令滑移 u，積分出的 ω 不回饋到 x。因此這裡檢查的是理想內迴路
    （滑移已實現）下的外迴路，以及在該 u 下的輪子動態，不是兩迴路完全耦合的模擬。
    """

    signals = loop.signals(state)
    fx = friction_force(signals["u"], loop.params)
    omega_next = signals["omega"] + cfg.dt * wheel_dynamics(signals["torque"], fx, loop.params)
    x_next = signals["x"] + cfg.dt * plant_f(signals["x"], signals["u"], loop.params)
    return CarState.of(x_next, omega_next)


def _record(step: int, signals: Dict[str, np.ndarray], monitors: Sequence[Monitor]) -> StepRecord:
    values = tuple((name, tuple(np.asarray(signals[name]).reshape(-1).tolist())) for name in SIGNALS)
    levels = tuple((monitor.name, monitor.level(signals)) for monitor in monitors)
    return StepRecord(step, values, levels)


def run(cfg: SimConfig, loop: ClosedLoop) -> Trace:
    state = cfg.initial or loop.equilibrium_state()
    records: List[StepRecord] = []
    for step in range(cfg.steps + 1):
        if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.omega))):
            raise IntegrationError("狀態出現非有限值", step)
        try:
            signals = loop.signals(state)
        except VehicleSingularityError as exc:
            raise IntegrationError(f"車輛模型奇異: {exc}", step) from exc
        records.append(_record(step, signals, cfg.monitors))
        if step == cfg.steps:
            break
        try:
            state = step_closed_loop(state, cfg, loop)
        except VehicleSingularityError as exc:
            raise IntegrationError(f"車輛模型奇異: {exc}", step) from exc

    trace = Trace(tuple(records), state, tuple(monitor.name for monitor in cfg.monitors))
    if logger.isEnabledFor(logging.INFO):
        peaks = {
            name: max(dict(record.monitors)[name] for record in records) for name in trace.monitor_names
        }
        logger.info("simulation_finished", extra={"steps": cfg.steps, "dt": cfg.dt, "peaks": peaks})
    return trace


def random_starts(
    loop: ClosedLoop, invariant: Ellipsoid, count: int, seed: int, level: float = 0.9
) -> List[CarState]:
    """在 x̃'Px̃ <= level 與 z'z <= level 內均勻取樣起點。"""

    rng = np.random.default_rng(seed)
    scale = np.sqrt(level)
    deviations = invariant.interior_samples(count, rng) * scale
    manifold = Ellipsoid(np.eye(2)).interior_samples(count, rng) * scale
    return [loop.state_from(dx, dz) for dx, dz in zip(deviations, manifold)]


def run_sweep(
    cfg: SimConfig, loop: ClosedLoop, starts: Sequence[CarState], workers: int = 4
) -> List[Trace]:
    """各起點互不相依，以執行緒池平行模擬，結果依起點順序回傳。"""

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda start: run(replace(cfg, initial=start), loop), starts))


def export_trace_csv(trace: Trace, path: Path) -> Path:
    header = ["step"]
    first = trace.records[0] if trace.records else None
    if first is not None:
        for name, value in first.values:
            header.extend(f"{name}_{index + 1}" for index in range(len(value)))
    header.extend(trace.monitor_names)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for record in trace.records:
            row = [str(record.step)]
            for _, value in record.values:
                row.extend(format_number(item) for item in value)
            levels = dict(record.monitors)
            row.extend(format_number(levels[name]) for name in trace.monitor_names)
            writer.writerow(row)
    return path
