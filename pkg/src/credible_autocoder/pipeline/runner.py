from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .. import __version__
from ..codegen.emit import MACHINE, MATLAB, emit_text, parse_vc
from ..codegen.generator import generate_program
from ..codegen.placement import check_def_before_use, place_annotations
from ..codegen.program import AnnotatedProgram, Contract, DomainFact
from ..config.settings import AppSettings
from ..core.errors import ModelValidationError, NumericsError, PlacementError
from ..core.types import Diagnostic, RunManifest
from ..harness.monitors import (
    MonitorSummary,
    build_monitors,
    monitor_report,
    render_monitor_report,
)
from ..harness.simulator import ClosedLoop, SimConfig, Trace, export_trace_csv, run
from ..model.expr import Const, ExternalFn, Predicate
from ..model.ir import EllipsoidObserver, LinearPlant, Model, read_model
from ..model.validate import Loop, assumption_observers, validate_model
from ..numerics.linalg import solve_discrete_lyapunov, spectral_radius
from ..propagation.affine import propagate_linear_forward
from ..propagation.steps import PropagationStep
from ..propagation.wp import propagate_backward
from ..verifier.bounds import RuntimeGuard, box_from_predicate, extract_bounds, runtime_guards
from ..verifier.checks import CheckBudget, Verdict, check_vc
from ..verifier.intervals import IntervalFn
from ..verifier.report import save_reports
from ..verifier.vcgen import gen_vcs
from .binding import Binding, bind_model, externals_for_program

VC_SUFFIX = ".vc"


@dataclass
class AutocodeResult:
    """封裝單次自動編碼的產物。"""

    model: Model
    loops: List[Loop]
    binding: Binding
    program: AnnotatedProgram
    output_paths: List[Path] = field(default_factory=list)


@dataclass
class CheckResult:
    program: AnnotatedProgram
    verdicts: List[Verdict]
    bounds: Dict[str, DomainFact] = field(default_factory=dict)
    guards: List[RuntimeGuard] = field(default_factory=list)
    output_paths: List[Path] = field(default_factory=list)

    @property
    def all_verified(self) -> bool:
        return all(verdict.verified for verdict in self.verdicts)


@dataclass
class SimulationResult:
    trace: Trace
    summaries: List[MonitorSummary]
    output_paths: List[Path] = field(default_factory=list)

    @property
    def violated(self) -> bool:
        return any(item.violated for item in self.summaries)


@dataclass(frozen=True, eq=False)
class LqrSummary:
    gain: np.ndarray
    riccati: np.ndarray
    lyapunov: np.ndarray
    eigenvalues: np.ndarray
    spectral_radius: float


class AutocodingPipeline:
    """模型 → 綁定 → 驗證 → 產生程式 → 放置合約 → 傳遞 → VC 判定。"""

    def __init__(self, settings: AppSettings) -> None:
        self._settings = settings
        self._logger = logging.getLogger(__name__)

    # ------------------------------------------------------------------
    # 自動編碼

    def build(self, model: Model) -> AutocodeResult:
        binding = bind_model(model, self._settings)
        loops = validate_model(model, binding.shapes())
        program = generate_program(model, loops)
        program = replace(program, params=tuple(binding.params.items()), meta=binding.meta)

        invariants: Dict[int, Predicate] = {}
        labels: Dict[int, str] = {}
        for loop in loops:
            if loop.invariant is not None:
                invariants[loop.index] = loop.invariant.predicate
                labels[loop.index] = loop.invariant.id
        program = place_annotations(
            program,
            loops,
            invariants,
            assumption_observers(model),
            [signal.name for signal in model.signals],
            labels,
        )
        program = self._propagate(program, loops, binding)
        program = replace(program, facts=self._facts(model, loops, binding))
        return AutocodeResult(model=model, loops=loops, binding=binding, program=program)

    def _propagate(
        self, program: AnnotatedProgram, loops: Sequence[Loop], binding: Binding
    ) -> AnnotatedProgram:
        contracts: List[Contract] = list(program.contracts)
        params: Dict[str, Const] = dict(program.params)
        steps: List[PropagationStep] = list(program.steps)
        for loop in loops:
            observer = loop.invariant
            if observer is None:
                continue
            if isinstance(loop.plant, LinearPlant) and isinstance(observer, EllipsoidObserver):
                forward = propagate_linear_forward(
                    program, loop, binding.invariants[observer.param].P
                )
                contracts.extend(forward.contracts)
                params.update(dict(forward.params))
                steps.extend(forward.steps)
            else:
                backward = propagate_backward(program, loop, observer.predicate)
                contracts.extend(backward.contracts)
                steps.extend(backward.steps)
        propagated = replace(
            program.with_contracts(contracts), params=tuple(params.items()), steps=tuple(steps)
        )
        problems = check_def_before_use(propagated)
        if problems:
            raise PlacementError("傳遞後的合約引用了尚未定義的變數: " + "; ".join(problems))
        return propagated

    def _facts(
        self, model: Model, loops: Sequence[Loop], binding: Binding
    ) -> Tuple[DomainFact, ...]:
        shapes = {signal.name: signal.rows for signal in model.signals}
        env = binding.arrays()
        facts: List[DomainFact] = []
        for observer in assumption_observers(model):
            pred = getattr(observer, "predicate", None)
            if pred is not None:
                facts.extend(box_from_predicate(pred, env, shapes, f"assumption:{observer.id}"))
        for loop in loops:
            if loop.invariant is not None:
                facts.extend(
                    box_from_predicate(
                        loop.invariant.predicate, env, shapes, f"invariant:{loop.invariant.id}"
                    )
                )
        return tuple(facts)

    def autocode(self, path: Path, out_dir: Optional[Path] = None) -> AutocodeResult:
        """輸出 Matlab 風格註解程式與 VC 檔。"""

        result = self.build(read_model(path))
        target = out_dir or self._settings.output_dir
        target.mkdir(parents=True, exist_ok=True)
        annotated = target / f"{result.model.name}.annotated.m"
        machine = target / f"{result.model.name}{VC_SUFFIX}"
        annotated.write_text(emit_text(result.program, MATLAB), encoding="utf-8")
        machine.write_text(emit_text(result.program, MACHINE), encoding="utf-8")
        result.output_paths = [annotated, machine]
        self._logger.info(
            "autocode_written",
            extra={
                "model": result.model.name,
                "loops": len(result.loops),
                "contracts": len(result.program.contracts),
            },
        )
        return result

    # ------------------------------------------------------------------
    # 驗證

    def check_program(
        self,
        program: AnnotatedProgram,
        externals: Optional[Mapping[str, ExternalFn]] = None,
        interval_externals: Optional[Mapping[str, IntervalFn]] = None,
    ) -> List[Verdict]:
        """各 VC 彼此獨立，以執行緒池平行判定；輸出依 VC 編號排序。"""

        vcs = gen_vcs(program)
        budget = CheckBudget.from_settings(self._settings)
        params = program.param_map()
        with ThreadPoolExecutor(max_workers=self._settings.workers) as pool:
            verdicts = list(
                pool.map(
                    lambda vc: check_vc(vc, budget, params, externals, interval_externals), vcs
                )
            )
        self._logger.info(
            "vcs_checked",
            extra={
                "program": program.name,
                "verified": sum(1 for verdict in verdicts if verdict.verified),
                "total": len(verdicts),
            },
        )
        return verdicts

    def bounds(self, result: AutocodeResult) -> Tuple[Dict[str, DomainFact], List[RuntimeGuard]]:
        binding = result.binding
        if (
            binding.car is None
            or binding.equilibrium is None
            or binding.gain is None
            or binding.invariant is None
        ):
            return {}, []
        bounds = extract_bounds(
            binding.invariant, binding.equilibrium, binding.gain, result.program.facts, binding.car
        )
        return bounds, runtime_guards(bounds, binding.car)

    def check(self, path: Path, out_dir: Optional[Path] = None) -> CheckResult:
        """接受模型檔或先前輸出的 VC 檔，判定後寫出報告。"""

        bounds: Dict[str, DomainFact] = {}
        guards: List[RuntimeGuard] = []
        if path.suffix == VC_SUFFIX:
            program = parse_vc(path.read_text(encoding="utf-8"))
            externals, interval_externals = externals_for_program(program, self._settings)
        else:
            result = self.build(read_model(path))
            program = result.program
            externals = result.binding.externals
            interval_externals = result.binding.interval_externals
            bounds, guards = self.bounds(result)
        verdicts = self.check_program(program, externals, interval_externals)
        target = out_dir or self._settings.output_dir
        paths = save_reports(
            target, program.name, verdicts, self.manifest(path, "check"), bounds, guards
        )
        return CheckResult(program, verdicts, bounds, guards, list(paths))

    # ------------------------------------------------------------------
    # 模擬與 LQR

    def simulate(
        self,
        path: Path,
        out_dir: Optional[Path] = None,
        dt: Optional[float] = None,
        steps: Optional[int] = None,
        x0: Optional[Sequence[float]] = None,
        z0: Optional[Sequence[float]] = None,
    ) -> SimulationResult:
        """x0、z0 為相對平衡點的偏差 x̃ 與流形座標 z。"""

        model = read_model(path)
        binding = bind_model(model, self._settings)
        loops = validate_model(model, binding.shapes())
        if binding.car is None or binding.equilibrium is None or binding.gain is None:
            raise ModelValidationError(
                "模擬需要車輛參數、平衡點與 LQR 增益",
                [Diagnostic(location="bindings", message="缺少 vehicle、equilibrium 或 lqr")],
            )
        closed = ClosedLoop(
            binding.car, binding.gain, binding.equilibrium, self._settings.fd_step_scale
        )
        monitors = tuple(build_monitors(loops, binding.params))
        initial = closed.state_from(
            np.zeros(3) if x0 is None else np.asarray(x0, dtype=float),
            np.zeros(2) if z0 is None else np.asarray(z0, dtype=float),
        )
        config = SimConfig(
            dt=dt if dt is not None else model.bindings.dt,
            steps=steps if steps is not None else self._settings.sim_steps,
            initial=initial,
            monitors=monitors,
            seed=self._settings.seed,
        )
        trace = run(config, closed)
        summaries = monitor_report(trace, monitors, self._settings.containment_tolerance)

        target = out_dir or self._settings.output_dir
        trace_path = export_trace_csv(trace, target / f"{model.name}.trace.csv")
        report_path = target / f"{model.name}.monitor.txt"
        options = {
            "dt": config.dt,
            "steps": config.steps,
            "x0": list(x0 or []),
            "z0": list(z0 or []),
        }
        manifest = self.manifest(path, "simulate", options).with_outputs([trace_path, report_path])
        report_path.write_text(
            f"manifest {manifest.to_json()}\n" + render_monitor_report(summaries), encoding="utf-8"
        )
        return SimulationResult(trace, summaries, [trace_path, report_path])

    def lqr(self, path: Path) -> LqrSummary:
        model = read_model(path)
        binding = bind_model(model, self._settings)
        if binding.system is None or binding.gain is None or binding.riccati is None:
            raise NumericsError("模型沒有線性受控體迴路或 LQR 設定")
        a_matrix, b_matrix = binding.system
        closed = a_matrix - b_matrix @ binding.gain
        lyapunov = (
            binding.invariant.P
            if binding.invariant is not None
            else solve_discrete_lyapunov(
                closed,
                self._settings.lyapunov_q * np.eye(closed.shape[0]),
                iteration_cap=self._settings.iteration_cap,
            )
        )
        return LqrSummary(
            gain=binding.gain,
            riccati=binding.riccati,
            lyapunov=lyapunov,
            eigenvalues=np.linalg.eigvals(closed),
            spectral_radius=spectral_radius(closed),
        )

    def manifest(
        self, path: Path, subcommand: str, extra: Optional[Dict[str, object]] = None
    ) -> RunManifest:
        options = self._settings.model_dump(mode="json", exclude={"log_level", "output_dir"})
        options.update(extra or {})
        return RunManifest(
            input_path=str(path),
            subcommand=subcommand,
            options=options,
            version=__version__,
        )
