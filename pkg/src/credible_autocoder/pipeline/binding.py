"""模型參數綁定：車輛參數、平衡點、線性化、LQR 增益與合成的橢球不變量。"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..codegen.program import AnnotatedProgram
from ..config.settings import AppSettings
from ..core.errors import ModelValidationError
from ..core.types import Diagnostic
from ..core.utils import format_number
from ..model.expr import Const, Expr, ExternalFn, Shape, evaluate
from ..model.ir import EllipsoidObserver, LinearPlant, Model
from ..model.parser import parse_expr
from ..model.schema import MatrixLike
from ..numerics.ellipsoid import Ellipsoid
from ..numerics.linalg import jacobian_fd, lqr_gain
from ..vehicle.dynamics import plant_f
from ..vehicle.equilibrium import Equilibrium, verify_equilibrium
from ..vehicle.externals import bind_externals, bind_interval_externals
from ..vehicle.params import CarParams, load_params
from ..verifier.intervals import IntervalFn
from ..verifier.synthesis import synthesize_linear_invariant

logger = logging.getLogger(__name__)

SLIP_LO = "slip_lo"
SLIP_HI = "slip_hi"


def _fail(location: str, message: str) -> ModelValidationError:
    return ModelValidationError("參數綁定失敗", [Diagnostic(location=location, message=message)])


def _array(value: MatrixLike, arrays: Mapping[str, np.ndarray], location: str) -> np.ndarray:
    if isinstance(value, str):
        try:
            return np.asarray(evaluate(parse_expr(value, {}, location), arrays)[0], dtype=float)
        except KeyError as exc:
            raise _fail(location, f"表達式引用未定義的參數: {exc}") from exc
    data = np.asarray(value, dtype=float)
    if data.ndim == 0:
        return data.reshape(1, 1)
    if data.ndim == 1:
        return data.reshape(-1, 1)
    return data


def _expr_array(expr: Expr, arrays: Mapping[str, np.ndarray], location: str) -> np.ndarray:
    try:
        return np.asarray(evaluate(expr, arrays)[0], dtype=float)
    except KeyError as exc:
        raise _fail(location, f"缺少參數: {exc}") from exc


@dataclass(frozen=True, eq=False)
class Binding:
    """模型綁定後的數值環境。"""

    params: Dict[str, Const]
    car: Optional[CarParams] = None
    equilibrium: Optional[Equilibrium] = None
    gain: Optional[np.ndarray] = None
    riccati: Optional[np.ndarray] = None
    system: Optional[Tuple[np.ndarray, np.ndarray]] = None
    invariants: Dict[str, Ellipsoid] = field(default_factory=dict)
    externals: Dict[str, ExternalFn] = field(default_factory=dict)
    interval_externals: Dict[str, IntervalFn] = field(default_factory=dict)
    meta: Tuple[Tuple[str, str], ...] = ()

    def shapes(self) -> Dict[str, Shape]:
        return {name: const.shape for name, const in self.params.items()}

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: const.array() for name, const in self.params.items()}

    @property
    def invariant(self) -> Optional[Ellipsoid]:
        return next(iter(self.invariants.values()), None)


def _linear_plant(model: Model) -> Optional[LinearPlant]:
    return next((p for p in model.plants if isinstance(p, LinearPlant)), None)


def bind_model(model: Model, settings: AppSettings) -> Binding:
    """依 bindings 區段計算所有具名參數；順序為 dt、車輛、使用者參數、平衡點、LQR、不變量。"""

    spec = model.bindings
    arrays: Dict[str, np.ndarray] = {"dt": np.array([[spec.dt]])}
    meta: List[Tuple[str, str]] = [("model", model.name), ("dt", format_number(spec.dt))]

    car: Optional[CarParams] = None
    if spec.vehicle is not None or spec.equilibrium is not None:
        car = load_params(spec.vehicle)
        arrays.update({name: np.array([[value]]) for name, value in car.as_params().items()})
        meta.append(("vehicle", json.dumps(car.model_dump(), sort_keys=True)))

    for name, value in spec.params.items():
        arrays[name] = _array(value, arrays, f"bindings.params.{name}")

    equilibrium: Optional[Equilibrium] = None
    if spec.equilibrium is not None:
        assert car is not None
        equilibrium = verify_equilibrium(spec.equilibrium.x_ss, spec.equilibrium.u_ss, car)
        arrays["xss"] = equilibrium.x.reshape(-1, 1)
        arrays["uss"] = equilibrium.u.reshape(-1, 1)
        jac_x, jac_u = jacobian_fd(
            lambda xs, us: plant_f(xs, us, car), equilibrium.x, equilibrium.u,
            step_scale=settings.fd_step_scale,
        )
        arrays.setdefault("A", np.eye(jac_x.shape[0]) + spec.dt * jac_x)
        arrays.setdefault("B", spec.dt * jac_u)

    plant = _linear_plant(model)
    system: Optional[Tuple[np.ndarray, np.ndarray]] = None
    gain: Optional[np.ndarray] = None
    riccati: Optional[np.ndarray] = None
    if spec.lqr is not None:
        if plant is None:
            raise _fail("bindings.lqr", "LQR 設定需要一個線性受控體")
        system = (
            _expr_array(plant.A, arrays, f"{plant.id}.A"),
            _expr_array(plant.B, arrays, f"{plant.id}.B"),
        )
        qc = _array(spec.lqr.Qc, arrays, "bindings.lqr.Qc")
        rc = _array(spec.lqr.Rc, arrays, "bindings.lqr.Rc")
        gain, riccati = lqr_gain(system[0], system[1], qc, rc, iteration_cap=settings.iteration_cap)
        arrays[spec.lqr.gain] = gain
        meta.append(("gain", spec.lqr.gain))

    if spec.slip_bounds is not None:
        arrays[SLIP_LO] = np.array([[spec.slip_bounds[0]]])
        arrays[SLIP_HI] = np.array([[spec.slip_bounds[1]]])
    elif car is not None:
        arrays[SLIP_LO] = np.array([[car.slip_floor]])
        arrays[SLIP_HI] = np.array([[settings.slip_max]])

    invariants: Dict[str, Ellipsoid] = {}
    for observer in model.observers:
        if not isinstance(observer, EllipsoidObserver):
            continue
        location = f"{observer.id}.matrix"
        if observer.matrix is not None:
            shape = _expr_array(observer.matrix, arrays, location)
        else:
            if system is None or gain is None or spec.invariant is None:
                raise _fail(location, "合成橢球不變量需要 bindings.lqr 與 bindings.invariant")
            shape = synthesize_linear_invariant(
                system[0],
                system[1],
                gain,
                spec.invariant.initial_box,
                lyapunov_q=spec.invariant.lyapunov_q or settings.lyapunov_q,
                iteration_cap=settings.iteration_cap,
            ).P
        invariants[observer.param] = Ellipsoid(shape)
        arrays[observer.param] = shape

    externals: Dict[str, ExternalFn] = {}
    interval_externals: Dict[str, IntervalFn] = {}
    if car is not None and gain is not None:
        externals = bind_externals(car, gain, settings.fd_step_scale)
        interval_externals = bind_interval_externals(car)

    binding = Binding(
        params={name: Const.from_array(value) for name, value in arrays.items()},
        car=car,
        equilibrium=equilibrium,
        gain=gain,
        riccati=riccati,
        system=system,
        invariants=invariants,
        externals=externals,
        interval_externals=interval_externals,
        meta=tuple(meta),
    )
    logger.info(
        "model_bound",
        extra={"model": model.name, "params": sorted(binding.params), "vehicle": car is not None},
    )
    return binding


def externals_for_program(
    prog: AnnotatedProgram, settings: AppSettings
) -> Tuple[Dict[str, ExternalFn], Dict[str, IntervalFn]]:
    """由 VC 檔的 meta 與參數重建外部函數與其區間延伸，供只讀 VC 檔的檢查使用。"""

    meta = prog.meta_map()
    params = prog.param_map()
    if "vehicle" not in meta or meta.get("gain") not in params:
        return {}, {}
    car = CarParams(**json.loads(meta["vehicle"]))
    externals = bind_externals(car, params[meta["gain"]].array(), settings.fd_step_scale)
    return externals, bind_interval_externals(car)
