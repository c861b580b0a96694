import json
from pathlib import Path

import numpy as np
import pytest

from credible_autocoder.config.settings import AppSettings
from credible_autocoder.core.errors import ModelValidationError
from credible_autocoder.harness.simulator import ClosedLoop, SimConfig, random_starts, run_sweep
from credible_autocoder.model.expr import Const, pred_free_vars, pred_substitute
from credible_autocoder.model.ir import read_model
from credible_autocoder.pipeline.runner import AutocodingPipeline
from credible_autocoder.propagation.simplify import simplify_predicate
from credible_autocoder.verifier.checks import CheckBudget, check_vc
from credible_autocoder.verifier.vcgen import CONTAINMENT, IMPLICATION, gen_vcs

GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


def _statuses(result) -> dict:
    return {verdict.vc: verdict.status for verdict in result.verdicts}


def test_autocode_writes_annotated_program_and_vc_file(
    car_model_path: Path, fast_settings: AppSettings
) -> None:
    result = AutocodingPipeline(fast_settings).autocode(car_model_path)
    names = sorted(path.name for path in result.output_paths)
    assert names == ["car.annotated.m", "car.vc"]
    annotated = (fast_settings.output_dir / "car.annotated.m").read_text(encoding="utf-8")
    assert "utilde = -K*xtilde;" in annotated
    assert "requires z'*z <= 1;" in annotated
    assert len(result.loops) == 2


def test_car_vcs_have_expected_kinds(car_model_path: Path, fast_settings: AppSettings) -> None:
    result = AutocodingPipeline(fast_settings).build(read_model(car_model_path))
    vcs = {vc.name: vc for vc in gen_vcs(result.program)}
    assert sorted(vcs) == ["loop1.exit", "loop2.entry"]
    assert vcs["loop1.exit"].kind == CONTAINMENT
    assert vcs["loop2.entry"].kind == IMPLICATION
    wp = simplify_predicate(pred_substitute(vcs["loop2.entry"].conclusion, result.program.param_map()))
    assert pred_free_vars(wp) == {"z"}


def test_car_check_verifies_both_loops(car_model_path: Path, fast_settings: AppSettings) -> None:
    result = AutocodingPipeline(fast_settings).check(car_model_path)
    assert _statuses(result) == {"loop1.exit": "VERIFIED", "loop2.entry": "VERIFIED"}
    assert result.all_verified
    assert {"x", "u", "omega"} <= set(result.bounds)
    assert {guard.name for guard in result.guards} == {
        "omega_floor",
        "slip_floor",
        "speed_positive",
    }
    report = (fast_settings.output_dir / "car.report.txt").read_text(encoding="utf-8")
    assert report.splitlines()[-1] == "summary verified=2 falsified=0 unknown=0"
    summary = json.loads((fast_settings.output_dir / "car.summary.json").read_text(encoding="utf-8"))
    assert summary["all_verified"] is True


def test_reports_are_reproducible(car_model_path: Path, fast_settings: AppSettings) -> None:
    pipeline = AutocodingPipeline(fast_settings)
    pipeline.check(car_model_path)
    first = (fast_settings.output_dir / "car.report.txt").read_bytes()
    pipeline.check(car_model_path)
    assert (fast_settings.output_dir / "car.report.txt").read_bytes() == first


def test_vc_file_can_be_checked_on_its_own(
    car_model_path: Path, fast_settings: AppSettings
) -> None:
    pipeline = AutocodingPipeline(fast_settings)
    pipeline.autocode(car_model_path)
    rechecked = pipeline.check(fast_settings.output_dir / "car.vc")
    assert _statuses(rechecked) == {"loop1.exit": "VERIFIED", "loop2.entry": "VERIFIED"}


def _large_step_model(car_model_path: Path, tmp_path: Path, dt: float) -> Path:
    data = json.loads(car_model_path.read_text(encoding="utf-8"))
    data["bindings"]["dt"] = dt
    path = tmp_path / "car_large_step.model.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


@pytest.mark.parametrize("dt", [4.5, 5.0])
def test_large_step_breaks_the_manifold_invariant(
    car_model_path: Path, fast_settings: AppSettings, tmp_path: Path, dt: float
) -> None:
    path = _large_step_model(car_model_path, tmp_path, dt)
    result = AutocodingPipeline(fast_settings).check(path)
    statuses = _statuses(result)
    assert statuses["loop1.exit"] == "VERIFIED"
    assert statuses["loop2.entry"] == "FALSIFIED"
    assert not result.all_verified
    [falsified] = [v for v in result.verdicts if v.status == "FALSIFIED"]
    z = np.array(falsified.witness["z"])
    assert z @ z <= 1.0
    k = 1.0 - dt / 1.8
    assert k * k * (z @ z) > 1.0


def test_zero_budget_leaves_nonlinear_loop_unknown(
    car_model_path: Path, fast_settings: AppSettings
) -> None:
    settings = fast_settings.model_copy(update={"samples": 0, "depth": 0})
    result = AutocodingPipeline(settings).check(car_model_path)
    statuses = _statuses(result)
    assert statuses["loop2.entry"] == "UNKNOWN"
    assert statuses["loop1.exit"] == "VERIFIED"


def test_simulation_monitors_and_outputs(
    car_model_path: Path, fast_settings: AppSettings
) -> None:
    pipeline = AutocodingPipeline(fast_settings)
    quiet = pipeline.simulate(car_model_path, steps=30, x0=[0.05, 0.0, 0.0])
    assert not quiet.violated
    assert [path.name for path in quiet.output_paths] == ["car.trace.csv", "car.monitor.txt"]
    kicked = pipeline.simulate(car_model_path, steps=30, z0=[1.5, 0.0])
    assert kicked.violated
    text = (fast_settings.output_dir / "car.monitor.txt").read_text(encoding="utf-8")
    assert text.startswith("manifest {")
    assert "monitor manifold_invariant VIOLATED" in text


def test_toy_model_lqr_and_vacuous_check(
    toy_model_path: Path, fast_settings: AppSettings
) -> None:
    pipeline = AutocodingPipeline(fast_settings)
    summary = pipeline.lqr(toy_model_path)
    assert np.allclose(summary.gain, [[0.0]])
    assert np.allclose(summary.riccati, [[1.0]])
    assert np.allclose(summary.lyapunov, [[0.01]])
    assert summary.spectral_radius == pytest.approx(0.0)
    checked = pipeline.check(toy_model_path)
    assert checked.verdicts == []
    assert checked.all_verified
    with pytest.raises(ModelValidationError):
        pipeline.simulate(toy_model_path, steps=5)


def test_inflated_invariant_falsifies_the_linear_loop(
    car_model_path: Path, fast_settings: AppSettings
) -> None:
    result = AutocodingPipeline(fast_settings).build(read_model(car_model_path))
    params = result.program.param_map()
    [vc] = [vc for vc in gen_vcs(result.program) if vc.name == "loop1.exit"]
    budget = CheckBudget.from_settings(fast_settings)
    assert check_vc(vc, budget, params).verified
    inflated = 4.0 * params["P"].array()
    verdict = check_vc(vc, budget, {**params, "P": Const.from_array(inflated)})
    assert verdict.status == "FALSIFIED"
    witness = np.array(verdict.witness["x"])
    assert witness @ inflated @ witness > 1.0
    assert witness @ params["Q2"].array() @ witness <= 1.0 + 1e-6


def test_simulated_traces_stay_within_extracted_bounds(
    car_model_path: Path, fast_settings: AppSettings
) -> None:
    pipeline = AutocodingPipeline(fast_settings)
    result = pipeline.build(read_model(car_model_path))
    bounds, _ = pipeline.bounds(result)
    binding = result.binding
    closed = ClosedLoop(binding.car, binding.gain, binding.equilibrium)
    starts = random_starts(closed, binding.invariant, count=4, seed=13, level=0.5)
    traces = run_sweep(SimConfig(dt=0.01, steps=100), closed, starts, workers=2)
    for trace in traces:
        for name in ("x", "u", "omega"):
            values = trace.column(name)
            fact = bounds[name]
            assert np.all(values >= np.array(fact.lo) - 1e-9)
            assert np.all(values <= np.array(fact.hi) + 1e-9)


def test_simulation_trace_is_byte_for_byte_deterministic(
    car_model_path: Path, fast_settings: AppSettings, tmp_path: Path
) -> None:
    pipeline = AutocodingPipeline(fast_settings)
    first = pipeline.simulate(car_model_path, out_dir=tmp_path / "a", steps=40, z0=[0.4, -0.2])
    second = pipeline.simulate(car_model_path, out_dir=tmp_path / "b", steps=40, z0=[0.4, -0.2])
    assert first.output_paths[0].read_bytes() == second.output_paths[0].read_bytes()


def test_independent_block_order_does_not_change_the_program(
    car_model_path: Path, fast_settings: AppSettings, tmp_path: Path
) -> None:
    data = json.loads(car_model_path.read_text(encoding="utf-8"))
    externals = [block for block in data["blocks"] if block["kind"] == "external"]
    others = [block for block in data["blocks"] if block["kind"] != "external"]
    data["blocks"] = others[:5] + externals[::-1] + others[5:]
    permuted_path = tmp_path / "car_permuted.model.json"
    permuted_path.write_text(json.dumps(data), encoding="utf-8")

    pipeline = AutocodingPipeline(fast_settings)
    original = pipeline.build(read_model(car_model_path)).program
    permuted = pipeline.build(read_model(permuted_path)).program
    assert [item.target for item in permuted.statements][5:8] == ["friction", "dphi", "f"]
    assert sorted(item.render() for item in original.statements) == sorted(
        item.render() for item in permuted.statements
    )
    assert original.spans == permuted.spans
    before = {vc.name: (vc.hypothesis, vc.conclusion) for vc in gen_vcs(original)}
    after = {vc.name: (vc.hypothesis, vc.conclusion) for vc in gen_vcs(permuted)}
    assert before == after


def _skeleton(annotated: str, vc_text: str) -> list:
    code = [
        " ".join(line.split())
        for line in annotated.splitlines()
        if line.strip() and not line.lstrip().startswith(("/*@", "@"))
    ]
    heads = [
        " ".join(line.split()[:7]) for line in vc_text.splitlines() if line.startswith("contract ")
    ]
    return code + heads


def test_annotated_car_program_matches_golden_skeleton(
    car_model_path: Path, fast_settings: AppSettings
) -> None:
    AutocodingPipeline(fast_settings).autocode(car_model_path)
    annotated = (fast_settings.output_dir / "car.annotated.m").read_text(encoding="utf-8")
    vc_text = (fast_settings.output_dir / "car.vc").read_text(encoding="utf-8")
    golden = (GOLDEN_DIR / "car.skeleton.txt").read_text(encoding="utf-8")
    expected = [" ".join(line.split()) for line in golden.splitlines() if line.strip()]
    assert _skeleton(annotated, vc_text) == expected
