from pathlib import Path

import pytest

from credible_autocoder.codegen.emit import MACHINE, MATLAB, emit_text, parse_vc
from credible_autocoder.codegen.generator import generate_program
from credible_autocoder.codegen.placement import check_def_before_use, place_annotations
from credible_autocoder.codegen.program import Contract
from credible_autocoder.config.settings import AppSettings
from credible_autocoder.core.errors import ModelParseError, PlacementError
from credible_autocoder.model.ir import GeneralObserver, read_model
from credible_autocoder.model.parser import parse_predicate
from credible_autocoder.model.validate import validate_model
from credible_autocoder.pipeline.binding import bind_model


def _make_program(path: Path):
    model = read_model(path)
    loops = validate_model(model, bind_model(model, AppSettings()).shapes())
    return model, loops, generate_program(model, loops)


def test_car_statement_order_and_spans(car_model_path: Path) -> None:
    _, _, program = _make_program(car_model_path)
    layout = [(item.kind, item.target) for item in program.statements]
    assert layout == [
        ("input", "xtilde"),
        ("assign", "utilde"),
        ("assign", "x"),
        ("assign", "u"),
        ("input", "z"),
        ("assign", "f"),
        ("assign", "dphi"),
        ("assign", "friction"),
        ("assign", "torque"),
        ("output", None),
    ]
    assert [(span.first, span.last) for span in program.spans] == [(1, 1), (5, 9)]


def test_constants_and_temps_are_inlined(car_model_path: Path) -> None:
    _, _, program = _make_program(car_model_path)
    rendered = [item.render() for item in program.statements]
    assert rendered[1] == "utilde = -K*xtilde;"
    assert rendered[2] == "x = xtilde + xss;"
    assert rendered[8] == "torque = r*friction + Iw*dphi'*f - sat(z, -csat, csat);"
    assert rendered[9] == "Output(torque);"


def test_invariant_brackets_the_loop(toy_model_path: Path) -> None:
    model, loops, program = _make_program(toy_model_path)
    invariant = parse_predicate("xtilde'*xtilde <= 4")
    placed = place_annotations(program, loops, {1: invariant}, (), ["xtilde", "utilde"])
    span = placed.span(1)
    requires = [c for c in placed.contracts if c.kind == "require"]
    ensures = [c for c in placed.contracts if c.kind == "ensure"]
    assumes = [c for c in placed.contracts if c.kind == "assume"]
    assert [(c.index, c.side, c.pred) for c in requires] == [(span.first, "before", invariant)]
    assert [(c.index, c.side, c.pred) for c in ensures] == [(span.last, "after", invariant)]
    assert assumes[0].update is not None and assumes[0].update[0] == "xtilde"
    assert check_def_before_use(placed) == []


def test_placement_rejects_unassigned_signal(toy_model_path: Path) -> None:
    _, loops, program = _make_program(toy_model_path)
    with pytest.raises(PlacementError):
        place_annotations(
            program, loops, {1: parse_predicate("w'*w <= 1")}, (), ["xtilde", "utilde", "w"]
        )


def test_assumption_watching_only_temps_is_a_placement_error(toy_model_path: Path) -> None:
    _, loops, program = _make_program(toy_model_path)
    observer = GeneralObserver(
        id="gain_limit",
        watched=("gain_tmp",),
        role="assumption",
        predicate=parse_predicate("gain_tmp <= 1"),
    )
    with pytest.raises(PlacementError, match="沒有對應的敘述"):
        place_annotations(program, loops, {}, [observer], ["xtilde", "utilde"])


def test_def_before_use_flags_early_contract(car_model_path: Path) -> None:
    _, _, program = _make_program(car_model_path)
    early = Contract("require", 0, "before", "inserted", parse_predicate("z'*z <= 1"))
    problems = check_def_before_use(program.with_contracts([early]))
    assert problems and "z" in problems[0]


def test_with_contracts_is_idempotent(toy_model_path: Path) -> None:
    _, loops, program = _make_program(toy_model_path)
    placed = place_annotations(
        program, loops, {1: parse_predicate("xtilde'*xtilde <= 1")}, (), ["xtilde", "utilde"]
    )
    assert placed.with_contracts(list(placed.contracts)) == placed


def test_emitted_text_is_stable_and_machine_form_reads_back(toy_model_path: Path) -> None:
    _, loops, program = _make_program(toy_model_path)
    placed = place_annotations(
        program, loops, {1: parse_predicate("xtilde'*xtilde <= 1")}, (), ["xtilde", "utilde"]
    )
    text = emit_text(placed, MATLAB)
    assert text == emit_text(placed, MATLAB)
    assert "/*@ requires xtilde'*xtilde <= 1;" in text
    assert "ensures xtilde'*xtilde <= 1;" in text
    assert parse_vc(emit_text(placed, MACHINE)) == placed


def test_vc_reader_reports_line_numbers() -> None:
    with pytest.raises(ModelParseError) as excinfo:
        parse_vc("vc 1\nprogram p\nbogus line\n")
    assert excinfo.value.diagnostics[0].line == 3
    with pytest.raises(ModelParseError):
        parse_vc("program p\n")
