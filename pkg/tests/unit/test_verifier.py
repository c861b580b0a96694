import math

import numpy as np
import pytest

from credible_autocoder.codegen.program import DomainFact
from credible_autocoder.core.types import RunManifest
from credible_autocoder.model.expr import Const
from credible_autocoder.model.parser import parse_expr, parse_predicate
from credible_autocoder.numerics.ellipsoid import Ellipsoid
from credible_autocoder.vehicle.externals import bind_externals, bind_interval_externals
from credible_autocoder.vehicle.params import CarParams
from credible_autocoder.verifier.bounds import RuntimeGuard, box_from_predicate, runtime_guards
from credible_autocoder.verifier.checks import (
    CheckBudget,
    Verdict,
    check_ellipsoid_containment,
    check_image_containment,
    check_nonlinear_implication,
    check_vc,
)
from credible_autocoder.verifier.intervals import (
    Interval,
    IntervalDomainError,
    divide,
    interval_of,
    multiply,
    saturate,
    sine,
    square_sum,
)
from credible_autocoder.verifier.report import summary_payload, write_report
from credible_autocoder.verifier.synthesis import synthesize_linear_invariant
from credible_autocoder.verifier.vcgen import CONTAINMENT, IMPLICATION, VC

SMALL_BUDGET = CheckBudget(samples=2000, depth=6, seed=7)
UNIT_BOX = (DomainFact("z", (-1.0, -1.0), (1.0, 1.0), "invariant:manifold"),)


def _implication(conclusion: str, facts=UNIT_BOX) -> VC:
    return VC(
        ordinal=1,
        name="loop2.entry",
        loop=2,
        kind=IMPLICATION,
        hypothesis=parse_predicate("z'*z <= 1"),
        conclusion=parse_predicate(conclusion),
        origin=("require@5:before:manifold", "require@5:before:wp"),
        facts=facts,
    )


def test_interval_products_and_division() -> None:
    product = multiply(Interval.of(-1.0, 2.0), Interval.of(3.0, 4.0))
    assert product.lo.item() == pytest.approx(-4.0)
    assert product.hi.item() == pytest.approx(8.0)
    with pytest.raises(IntervalDomainError):
        divide(Interval.of(1.0, 2.0), Interval.of(-1.0, 1.0))
    matrix = multiply(Interval.point([[1.0, 0.0], [0.0, 2.0]]), Interval.of([0.0, -1.0], [1.0, 1.0]))
    assert np.allclose(matrix.lo.reshape(-1), [0.0, -2.0])
    assert np.allclose(matrix.hi.reshape(-1), [1.0, 2.0])


def test_square_sum_is_tight_for_straddling_components() -> None:
    value = square_sum(Interval.of([-1.0, 1.0], [2.0, 3.0]))
    assert value.lo.item() == pytest.approx(1.0)
    assert value.hi.item() == pytest.approx(13.0)
    env = {"x": Interval.of([-1.0, -1.0], [1.0, 1.0])}
    quad = interval_of(parse_expr("x'*x"), env)
    assert quad.lo.item() == pytest.approx(0.0)
    assert quad.hi.item() == pytest.approx(2.0)


def test_sine_encloses_interior_peak() -> None:
    value = sine(Interval.of(0.0, math.pi))
    assert value.hi.item() == pytest.approx(1.0)
    assert value.lo.item() == pytest.approx(0.0, abs=1e-12)


def test_containment_verified_and_falsified() -> None:
    verified = check_ellipsoid_containment([[4.0]], [[1.0]])
    assert verified.verified
    falsified = check_ellipsoid_containment(np.eye(2), np.diag([4.0, 1.0]))
    assert falsified.status == "FALSIFIED"
    witness = np.array(falsified.witness["x"])
    assert witness @ witness == pytest.approx(1.0)
    assert witness @ np.diag([4.0, 1.0]) @ witness > 1.0


def test_check_vc_dispatches_containment_on_bound_matrices() -> None:
    vc = VC(
        ordinal=1,
        name="loop1.exit",
        loop=1,
        kind=CONTAINMENT,
        hypothesis=parse_predicate("x'*Q2*x <= 1"),
        conclusion=parse_predicate("x'*P*x <= 1"),
        origin=(),
    )
    params = {"Q2": Const.scalar(4.0), "P": Const.scalar(1.0)}
    assert check_vc(vc, SMALL_BUDGET, params).verified
    missing = check_vc(vc, SMALL_BUDGET, {"P": Const.scalar(1.0)})
    assert missing.status == "UNKNOWN"


def test_contracting_implication_is_certified() -> None:
    verdict = check_nonlinear_implication(_implication("(0.5*z)'*(0.5*z) <= 1"), SMALL_BUDGET, {})
    assert verdict.status == "VERIFIED"
    assert verdict.samples == SMALL_BUDGET.samples
    assert verdict.boxes >= 1


def test_expanding_implication_is_falsified_with_witness() -> None:
    verdict = check_nonlinear_implication(_implication("(2*z)'*(2*z) <= 1"), SMALL_BUDGET, {})
    assert verdict.status == "FALSIFIED"
    point = np.array(verdict.witness["z"])
    assert point @ point <= 1.0
    assert 4.0 * (point @ point) > 1.0


def test_zero_budget_and_unbounded_domain_are_unknown() -> None:
    zero = CheckBudget(samples=0, depth=0)
    verdict = check_nonlinear_implication(_implication("z'*z <= 1"), zero, {})
    assert verdict.status == "UNKNOWN"
    unbounded = check_nonlinear_implication(_implication("z'*z <= 1", facts=()), SMALL_BUDGET, {})
    assert unbounded.status == "UNKNOWN"
    assert "z" in unbounded.reason


def test_box_from_predicate_reads_ranges_and_ellipsoids() -> None:
    env = {"slip_lo": [[-0.1]], "slip_hi": [[0.2]], "P": np.diag([4.0, 0.25])}
    slip = box_from_predicate(
        parse_predicate("slip_lo <= u && u <= slip_hi"), env, {"u": 2}, "assumption:slip"
    )
    assert slip == [DomainFact("u", (-0.1, -0.1), (0.2, 0.2), "assumption:slip")]
    ellipse = box_from_predicate(parse_predicate("x'*P*x <= 1"), env, {"x": 2}, "invariant:p")
    assert np.allclose(ellipse[0].hi, [0.5, 2.0])
    assert np.allclose(ellipse[0].lo, [-0.5, -2.0])


def test_runtime_guards_flag_low_wheel_speed() -> None:
    params = CarParams()
    bounds = {
        "omega": DomainFact("omega", (0.0, 30.0), (40.0, 40.0), "derived"),
        "u": DomainFact("u", (-0.1, -0.1), (0.1, 0.1), "assumption"),
        "x": DomainFact("x", (9.0, -0.1, -0.1), (11.0, 0.1, 0.1), "invariant"),
    }
    guards = {guard.name: guard for guard in runtime_guards(bounds, params)}
    assert not guards["omega_floor"].safe
    assert guards["slip_floor"].safe
    assert guards["speed_positive"].safe


@pytest.mark.parametrize(
    ("omega_lo", "safe"),
    [((30.0, 0.0), False), ((30.0, 1e-4), False), ((30.0, 25.0), True)],
)
def test_omega_guard_covers_both_wheels(omega_lo, safe) -> None:
    bounds = {
        "omega": DomainFact("omega", omega_lo, (40.0, 40.0), "derived"),
        "u": DomainFact("u", (-0.1, -0.1), (0.1, 0.1), "assumption"),
        "x": DomainFact("x", (9.0, -0.1, -0.1), (11.0, 0.1, 0.1), "invariant"),
    }
    guards = {guard.name: guard for guard in runtime_guards(bounds, CarParams())}
    assert guards["omega_floor"].safe is safe


def test_synthesized_invariant_contains_initial_box() -> None:
    ellipsoid = synthesize_linear_invariant([[0.5]], [[1.0]], [[0.0]], [0.2])
    assert ellipsoid.contains(np.array([[0.2]]))[0]
    assert ellipsoid.P[0, 0] == pytest.approx(25.0)


def test_report_lists_verdicts_and_counts() -> None:
    verdicts = [
        Verdict(vc="loop1.exit", status="VERIFIED", max_violation=-0.5),
        Verdict(
            vc="loop2.entry",
            status="FALSIFIED",
            witness={"z": [0.5, 0.25]},
            reason="結論違反 0.1",
            samples=10,
        ),
    ]
    manifest = RunManifest(input_path="car.model.json", subcommand="check", version="test")
    guards = [RuntimeGuard("omega_floor", True, "ok")]
    text = write_report(verdicts, manifest, None, guards)
    lines = text.splitlines()
    assert lines[0] == "# credible-autocoder verification report"
    assert lines[1].startswith("manifest {")
    assert any(line.startswith("vc loop1.exit VERIFIED") for line in lines)
    assert "  witness z = [0.5, 0.25]" in lines
    assert "guard omega_floor SAFE ok" in lines
    assert lines[-1] == "summary verified=1 falsified=1 unknown=0"
    assert '"all_verified": false' in summary_payload(verdicts, manifest)
    assert '"all_verified": true' in summary_payload([], manifest)


def test_friction_interval_extension_lets_bisection_certify() -> None:
    p = CarParams()
    facts = (
        DomainFact("x", (9.0, -0.1, -0.1), (11.0, 0.1, 0.1), "invariant"),
        DomainFact("u", (-0.01, -0.01), (0.01, 0.01), "assumption"),
    )
    vc = VC(
        ordinal=1,
        name="friction.bound",
        loop=None,
        kind=IMPLICATION,
        hypothesis=parse_predicate("u'*u <= 1"),
        conclusion=parse_predicate(
            "friction_func(x, u)'*friction_func(x, u) <= 800000", {"friction_func": 2}
        ),
        origin=("assume@0:after:slip", "ensure@0:after:friction"),
        facts=facts,
    )
    externals = bind_externals(p, np.zeros((2, 3)))
    without = check_nonlinear_implication(vc, SMALL_BUDGET, {}, externals)
    assert without.status == "UNKNOWN"
    verified = check_nonlinear_implication(
        vc, SMALL_BUDGET, {}, externals, bind_interval_externals(p)
    )
    assert verified.status == "VERIFIED"
    assert verified.boxes == 1


def _random_spd(rng: np.random.Generator, scale: float) -> np.ndarray:
    factor = rng.normal(size=(2, 2))
    return scale * (factor @ factor.T + 0.2 * np.eye(2))


def test_containment_agrees_with_boundary_sampling() -> None:
    rng = np.random.default_rng(5)
    seen = set()
    for _ in range(200):
        q = _random_spd(rng, 1.0)
        p = _random_spd(rng, rng.uniform(0.05, 1.0))
        verdict = check_ellipsoid_containment(q, p)
        samples = Ellipsoid(q).boundary_samples(4000, rng)
        worst = float(np.max(np.einsum("ij,jk,ik->i", samples, p, samples)))
        seen.add(verdict.status)
        if verdict.verified:
            assert worst <= 1.0 + 1e-7
        else:
            witness = np.array(verdict.witness["x"])
            assert witness @ q @ witness <= 1.0 + 1e-9
            assert witness @ p @ witness > 1.0
        if worst > 1.0 + 1e-6:
            assert verdict.status == "FALSIFIED"
    assert seen == {"VERIFIED", "FALSIFIED"}


def test_image_containment_agrees_with_ellipsoid_containment() -> None:
    rng = np.random.default_rng(9)
    for _ in range(100):
        q = _random_spd(rng, 1.0)
        p = _random_spd(rng, rng.uniform(0.05, 1.0))
        shape = np.linalg.inv(q)
        assert check_image_containment(shape, p).status == check_ellipsoid_containment(q, p).status
    flat = check_image_containment(np.diag([1.0, 0.0]), np.diag([4.0, 1.0]))
    assert flat.status == "FALSIFIED"
    assert np.allclose(flat.witness["x"], [1.0, 0.0])


def _random_box(rng: np.random.Generator, shape: tuple, width: float = 4.0) -> Interval:
    center = rng.uniform(-3.0, 3.0, size=shape)
    half = rng.uniform(0.0, width / 2.0, size=shape)
    return Interval.of(center - half, center + half)


def _points(rng: np.random.Generator, box: Interval, count: int) -> np.ndarray:
    return rng.uniform(box.lo, box.hi, size=(count,) + box.shape)


def test_interval_primitives_enclose_sampled_values() -> None:
    rng = np.random.default_rng(17)
    car = CarParams()
    friction = bind_interval_externals(car)["friction_func"]
    point_friction = bind_externals(car, np.zeros((2, 3)))["friction_func"]
    for _ in range(100):
        a, b = _random_box(rng, (1, 1)), _random_box(rng, (1, 1))
        m, v = _random_box(rng, (2, 3)), _random_box(rng, (3, 1))
        lo, hi = Interval.of(-1.0, -0.5), Interval.of(0.5, 1.0)
        positive = Interval.of(rng.uniform(0.1, 1.0), rng.uniform(1.0, 3.0))
        slips = _random_box(rng, (2, 1), width=0.1)
        cases = [
            (lambda x, y: x + y, a + b, (a, b)),
            (lambda x, y: x - y, a - b, (a, b)),
            (lambda x, y: -x, -a, (a, b)),
            (lambda x, y: x * y, multiply(a, b), (a, b)),
            (lambda x, y: x @ y, multiply(m, v), (m, v)),
            (lambda x, y: x / y, divide(a, positive), (a, positive)),
            (lambda x, y: x.T @ x, square_sum(v), (v, a)),
            (lambda x, y: np.clip(x, -0.75, 0.75), saturate(a, lo, hi), (a, b)),
            (lambda x, y: np.sin(x), sine(a), (a, b)),
            (lambda x, y: np.cos(x), interval_of(parse_expr("cos(s)"), {"s": a}), (a, b)),
            (lambda x, y: point_friction(None, x).reshape(-1, 1), friction(v, slips), (slips, a)),
        ]
        for function, enclosure, (left, right) in cases:
            for x, y in zip(_points(rng, left, 50), _points(rng, right, 50)):
                assert enclosure.contains(function(x, y), tolerance=1e-9)
