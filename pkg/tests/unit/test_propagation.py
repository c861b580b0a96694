import json

import numpy as np
import pytest

from credible_autocoder.codegen.generator import generate_program
from credible_autocoder.codegen.placement import place_annotations
from credible_autocoder.core.errors import DegenerateImageError
from credible_autocoder.model.expr import (
    Var,
    evaluate,
    pred_free_vars,
    pred_substitute,
    substitute,
)
from credible_autocoder.model.ir import parse_model
from credible_autocoder.model.parser import parse_expr, parse_predicate
from credible_autocoder.model.validate import validate_model
from credible_autocoder.numerics.ellipsoid import Ellipsoid
from credible_autocoder.propagation.affine import (
    ellipsoid_affine_image,
    ellipsoid_image_shape,
    image_matrix,
    propagate_linear_forward,
)
from credible_autocoder.propagation.simplify import is_zero, simplify
from credible_autocoder.propagation.wp import propagate_backward, wp_assign
from credible_autocoder.verifier.checks import check_image_containment


def _make_scalar_program(gain: float = -0.5):
    data = {
        "name": "scalar",
        "signals": [{"name": "xtilde", "dim": 1}, {"name": "utilde", "dim": 1}],
        "blocks": [
            {
                "id": "feedback",
                "kind": "gain",
                "inputs": ["xtilde"],
                "output": "utilde",
                "subsystem": "s",
                "matrix": gain,
            }
        ],
        "plants": [
            {
                "id": "plant",
                "kind": "linear",
                "subsystem": "s",
                "inputs": ["utilde"],
                "outputs": ["xtilde"],
                "A": 1.0,
                "B": 1.0,
            }
        ],
        "observers": [{"id": "inv", "kind": "ellipsoid", "watched": ["xtilde"], "matrix": 1.0}],
    }
    model = parse_model(json.dumps(data))
    loops = validate_model(model)
    program = generate_program(model, loops)
    placed = place_annotations(
        program, loops, {1: loops[0].invariant.predicate}, (), ["xtilde", "utilde"]
    )
    return loops, placed


def test_wide_and_square_images() -> None:
    image = ellipsoid_affine_image(np.eye(2), 2.0 * np.eye(2))
    assert np.allclose(image, 0.25 * np.eye(2))
    with pytest.raises(DegenerateImageError):
        ellipsoid_affine_image(np.eye(2), [[1.0, 0.0], [2.0, 0.0]])


def test_tall_image_matches_the_source_on_its_range() -> None:
    image = ellipsoid_affine_image([[1.0]], [[1.0], [2.0]])
    y = np.array([1.0, 2.0])
    assert y @ image @ y == pytest.approx(1.0)


def test_forward_propagation_through_scalar_loop() -> None:
    loops, program = _make_scalar_program()
    result = propagate_linear_forward(program, loops[0], np.array([[1.0]]))
    assert result.q2_name == "Q2"
    assert result.q2[0, 0] == pytest.approx(4.0)
    stacked = np.array([1.0, -0.5])
    assert stacked @ result.q1 @ stacked == pytest.approx(1.0)
    labels = {(c.kind, c.label) for c in result.contracts}
    assert ("ensure", "Q2") in labels
    assert ("require", "Q1") in labels
    assert [step.direction for step in result.steps] == ["forward", "forward"]


def test_zero_closed_loop_gives_a_flat_image() -> None:
    loops, program = _make_scalar_program(gain=-1.0)
    result = propagate_linear_forward(program, loops[0], np.array([[1.0]]))
    assert np.allclose(result.q2_shape, [[0.0]])
    assert np.allclose(result.q2, [[0.0]])
    assert "Q2_shape" in dict(result.params)
    verdict = check_image_containment(result.q2_shape, [[1.0]])
    assert verdict.status == "VERIFIED"
    with pytest.raises(DegenerateImageError):
        ellipsoid_affine_image([[1.0]], [[0.0]])


def test_singular_map_image_shape_needs_no_inverse() -> None:
    mapping = np.array([[1.0, 0.0], [0.0, 0.0]])
    shape = ellipsoid_image_shape(np.diag([4.0, 1.0]), mapping)
    assert np.allclose(shape, [[0.25, 0.0], [0.0, 0.0]])
    assert np.allclose(image_matrix(shape), [[4.0, 0.0], [0.0, 0.0]])


def test_wp_assignment_substitutes_target() -> None:
    pre = wp_assign(parse_predicate("y <= 1"), "y", parse_expr("x + 1"))
    assert pre == parse_predicate("x + 1 <= 1")


def test_backward_propagation_substitutes_plant_then_statements() -> None:
    loops, program = _make_scalar_program()
    result = propagate_backward(program, loops[0], parse_predicate("xtilde'*xtilde <= 1"))
    assert pred_free_vars(result.pre) == {"xtilde"}
    assert "utilde" in pred_free_vars(result.after_plant)
    value = evaluate(result.pre.atoms[0].lhs, {"xtilde": [[2.0]]})
    assert value[0, 0, 0] == pytest.approx(1.0)
    assert {c.label for c in result.contracts} == {"wp"}


def test_simplify_cancels_and_folds() -> None:
    assert is_zero(parse_expr("x - x"))
    assert is_zero(parse_expr("2*x + 3*x - 5*x"))
    assert not is_zero(parse_expr("a*b - b*a"))
    assert simplify(parse_expr("(2*z)'*(2*z)")) == parse_expr("4*z'*z")
    assert simplify(parse_expr("z + dt*(1/Iw*(T - T))")) == Var("z")


def test_simplify_is_idempotent_and_preserves_values() -> None:
    expr = parse_expr("z + dt*(1/Iw*(r*g + Iw*d'*f - sat(z) - r*g - Iw*d'*f))")
    once = simplify(expr)
    assert simplify(once) == once
    env = {
        "z": [0.3, -0.4],
        "dt": 0.01,
        "Iw": 1.8,
        "r": 0.3,
        "g": [1.0, 2.0],
        "d": [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]],
        "f": [0.1, 0.2, 0.3],
    }
    assert np.allclose(evaluate(once, env), evaluate(expr, env))


@pytest.mark.parametrize("rows", [3, 2])
def test_image_is_sound_and_tight_on_sampled_boundaries(rows: int) -> None:
    rng = np.random.default_rng(rows)
    for _ in range(50):
        factor = rng.normal(scale=0.5, size=(3, 3))
        p = factor @ factor.T + np.eye(3)
        mapping = 2.0 * np.eye(rows, 3) + rng.normal(scale=0.5, size=(rows, 3))
        image = image_matrix(ellipsoid_image_shape(p, mapping))
        source = Ellipsoid(p).boundary_samples(10_000, rng)
        mapped = source @ mapping.T
        values = np.einsum("ij,jk,ik->i", mapped, image, mapped)
        assert values.max() <= 1.0 + 1e-9
        assert values.max() >= 1.0 - 1e-3


def test_chained_wp_equals_composed_substitution() -> None:
    post = parse_predicate("y'*y + sat(x, -1, 1) <= 1")
    first, second = parse_expr("a + 1"), parse_expr("2*x")
    chained = wp_assign(wp_assign(post, "y", second), "x", first)
    composed = pred_substitute(post, {"y": substitute(second, {"x": first}), "x": first})
    assert chained == composed
    rng = np.random.default_rng(2)
    for a in rng.uniform(-3.0, 3.0, size=20):
        env = {"a": [[a]]}
        assert np.allclose(
            evaluate(chained.atoms[0].lhs, env), (2.0 * (a + 1)) ** 2 + np.clip(a + 1, -1.0, 1.0)
        )


@pytest.mark.parametrize("gain", [-0.5, 0.3, -1.7])
def test_backward_precondition_matches_execution(gain: float) -> None:
    loops, program = _make_scalar_program(gain)
    post = parse_predicate("xtilde'*xtilde <= 1")
    result = propagate_backward(program, loops[0], post)
    span = program.span(loops[0].index)
    rng = np.random.default_rng(4)
    for start in rng.uniform(-2.0, 2.0, size=25):
        env = {"xtilde": np.array([[start]])}
        for statement in program.statements[span.first : span.last + 1]:
            if statement.kind == "assign":
                env[statement.target] = evaluate(statement.expr, env).reshape(1, 1)
        for state, update in loops[0].plant.updates:
            env[state] = evaluate(update, env).reshape(1, 1)
        executed = evaluate(post.atoms[0].lhs, env)
        predicted = evaluate(result.pre.atoms[0].lhs, {"xtilde": np.array([[start]])})
        assert np.allclose(predicted, executed)
        assert np.allclose(executed, ((1.0 + gain) * start) ** 2)
