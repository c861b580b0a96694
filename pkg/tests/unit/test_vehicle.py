import numpy as np
import pytest

from credible_autocoder.core.errors import (
    ModelValidationError,
    NumericsError,
    VehicleSingularityError,
)
from credible_autocoder.numerics.linalg import jacobian_fd
from credible_autocoder.vehicle.control import (
    aux_dynamics,
    closed_loop_phi_jacobian,
    linear_control,
    torque_control,
)
from credible_autocoder.vehicle.dynamics import (
    CarState,
    friction_force,
    longitudinal_slips,
    manifold_z,
    phi,
    plant_f,
    slip_angles,
    wheel_dynamics,
)
from credible_autocoder.vehicle.equilibrium import verify_equilibrium
from credible_autocoder.vehicle.externals import EXTERNAL_SHAPES, bind_externals
from credible_autocoder.vehicle.params import CarParams, load_params

CAR_X_SS = [10.0, 0.002512, 0.17783]
CAR_U_SS = [0.0, -0.001086]


def _straight() -> CarParams:
    return CarParams(delta=0.0)


def test_phi_realizes_requested_slip_on_straight_line() -> None:
    p = _straight()
    wheels = phi([10.0, 0.0, 0.0], [0.0, 0.0], p)
    assert np.allclose(wheels, [10.0 / p.r, 10.0 / p.r])
    assert np.allclose(manifold_z(wheels, [10.0, 0.0, 0.0], [0.0, 0.0], p), 0.0)


def test_slips_invert_wheel_speed_map() -> None:
    p = CarParams()
    x = [10.0, 0.01, 0.15]
    slips = np.array([0.03, -0.02])
    wheels = phi(x, slips, p)
    recovered = longitudinal_slips(x[0], x[1], x[2], wheels[0], wheels[1], p)
    assert np.allclose(recovered, slips, atol=1e-12)
    with pytest.raises(VehicleSingularityError):
        longitudinal_slips(10.0, 0.0, 0.0, 0.0, 30.0, p)


def test_friction_is_linear_in_slip() -> None:
    p = CarParams()
    assert np.allclose(friction_force([0.1, -0.2], p), [-0.1 * p.C_x, 0.2 * p.C_x])


def test_straight_cruise_is_an_equilibrium() -> None:
    p = _straight()
    assert np.allclose(plant_f([10.0, 0.0, 0.0], [0.0, 0.0], p), 0.0)
    eq = verify_equilibrium([10.0, 0.0, 0.0], [0.0, 0.0], p)
    assert eq.residual == pytest.approx(0.0)
    assert eq.x_ss == (10.0, 0.0, 0.0)


def test_default_cornering_candidate_is_refined() -> None:
    p = CarParams()
    eq = verify_equilibrium(CAR_X_SS, CAR_U_SS, p)
    assert eq.residual <= 1e-8
    assert abs(eq.x[0] - 10.0) < 0.5
    assert np.max(np.abs(plant_f(eq.x, eq.u, p))) <= 1e-8


def test_slip_floor_and_zero_speed_are_singular() -> None:
    p = CarParams()
    with pytest.raises(VehicleSingularityError):
        phi([10.0, 0.0, 0.0], [-0.96, 0.0], p)
    with pytest.raises(VehicleSingularityError):
        slip_angles([0.0, 0.0, 0.0], p)


def test_sliding_mode_torque_gives_saturated_manifold_dynamics() -> None:
    p = CarParams()
    x = np.array(CAR_X_SS)
    u = np.array(CAR_U_SS)
    gain = np.zeros((2, 3))
    dphi = closed_loop_phi_jacobian(x, u, gain, p)
    z = np.array([0.5, -2.0])
    torque = torque_control(z, x, u, p, dphi)
    rate = aux_dynamics(z, torque, x, u, p, dphi)
    assert np.allclose(rate, [-0.5 / p.I_w, 1.0 / p.I_w])


def test_linear_control_checks_dimensions() -> None:
    assert np.allclose(linear_control([1.0, 2.0], [[1.0, 0.0], [0.0, 2.0]]), [-1.0, -4.0])
    with pytest.raises(NumericsError):
        linear_control([1.0, 2.0, 3.0], [[1.0, 0.0]])


def test_externals_have_declared_shapes() -> None:
    p = CarParams()
    externals = bind_externals(p, np.zeros((2, 3)))
    x = np.array(CAR_X_SS)
    u = np.array(CAR_U_SS)
    for name, (rows, cols) in EXTERNAL_SHAPES.items():
        value = np.atleast_1d(externals[name](x, u))
        assert value.shape[0] == rows
        assert (value.shape[1] if value.ndim == 2 else 1) == cols


def test_car_state_round_trip_to_vectors() -> None:
    state = CarState.of(np.array([10.0, 0.0, 0.1]), [30.0, 31.0])
    assert state.x == (10.0, 0.0, 0.1)
    assert np.allclose(state.omega_vector, [30.0, 31.0])


def test_vehicle_overrides_are_validated() -> None:
    assert load_params(None) == CarParams()
    assert load_params({"I_w": 2.0}).as_params()["Iw"] == 2.0
    with pytest.raises(ModelValidationError):
        load_params({"m": -1.0})
    with pytest.raises(ModelValidationError):
        load_params({"unknown": 1.0})


def _random_operating_point(rng: np.random.Generator) -> tuple:
    x = np.array([rng.uniform(5.0, 20.0), rng.uniform(-0.1, 0.1), rng.uniform(-0.5, 0.5)])
    u = rng.uniform(-0.05, 0.05, size=2)
    return x, u


def test_aux_of_torque_is_minus_saturated_z_over_inertia() -> None:
    p = CarParams()
    rng = np.random.default_rng(7)
    for _ in range(1000):
        x, u = _random_operating_point(rng)
        gain = rng.normal(scale=0.05, size=(2, 3))
        dphi = closed_loop_phi_jacobian(x, u, gain, p)
        z = rng.uniform(-3.0, 3.0, size=2)
        torque = torque_control(z, x, u, p, dphi)
        rate = aux_dynamics(z, torque, x, u, p, dphi)
        expected = -np.clip(z, -p.c_sat, p.c_sat) / p.I_w
        assert np.allclose(rate, expected, rtol=0.0, atol=1e-8)


def test_plant_is_symmetric_on_a_straight_line() -> None:
    p = CarParams(delta=0.0, l_f=1.3, l_r=1.3)
    for speed in (5.0, 10.0, 25.0):
        for slip in (-0.02, 0.0, 0.03):
            rate = plant_f([speed, 0.0, 0.0], [slip, slip], p)
            assert rate[1] == pytest.approx(0.0, abs=1e-12)
            assert rate[2] == pytest.approx(0.0, abs=1e-12)
            assert rate[0] == pytest.approx(-2.0 * p.C_x * slip / p.m)


def _plant_in_wheel_angle_form(x: np.ndarray, u: np.ndarray, p: CarParams) -> np.ndarray:
    speed, beta, yaw_rate = x
    alpha_f = p.delta - np.arctan((speed * np.sin(beta) + p.l_f * yaw_rate) / (speed * np.cos(beta)))
    alpha_r = -np.arctan((speed * np.sin(beta) - p.l_r * yaw_rate) / (speed * np.cos(beta)))
    fy_f, fy_r = p.C_alpha * alpha_f, p.C_alpha * alpha_r
    fx_f, fx_r = -p.C_x * u[0], -p.C_x * u[1]
    rel = p.delta - beta
    along = fx_f * np.cos(rel) - fy_f * np.sin(rel) + fx_r * np.cos(beta) + fy_r * np.sin(beta)
    across = fx_f * np.sin(rel) + fy_f * np.cos(rel) - fx_r * np.sin(beta) + fy_r * np.cos(beta)
    moment = p.l_f * (fx_f * np.sin(p.delta) + fy_f * np.cos(p.delta)) - p.l_r * fy_r
    return np.array([along / p.m, across / (p.m * speed) - yaw_rate, moment / p.I_z])


def test_plant_agrees_with_wheel_angle_form() -> None:
    p = CarParams()
    rng = np.random.default_rng(11)
    for _ in range(200):
        x, u = _random_operating_point(rng)
        assert np.allclose(plant_f(x, u, p), _plant_in_wheel_angle_form(x, u, p), rtol=1e-10, atol=1e-9)


def test_plant_is_lipschitz_on_the_operating_box() -> None:
    p = CarParams()
    rng = np.random.default_rng(3)
    low = np.array([8.0, -0.05, -0.2, -0.02, -0.02])
    high = np.array([12.0, 0.05, 0.2, 0.02, 0.02])

    def rate(point: np.ndarray) -> np.ndarray:
        return plant_f(point[:3], point[3:], p)

    bound = 0.0
    for _ in range(200):
        point = rng.uniform(low, high)
        d_x, d_u = jacobian_fd(lambda xs, us: plant_f(xs, us, p), point[:3], point[3:])
        bound = max(bound, float(np.linalg.norm(np.hstack([d_x, d_u]), 2)))
    for _ in range(500):
        a, b = rng.uniform(low, high), rng.uniform(low, high)
        assert np.linalg.norm(rate(a) - rate(b)) <= 2.0 * bound * np.linalg.norm(a - b)


def test_wheel_dynamics_balances_friction_torque() -> None:
    p = CarParams()
    fx = np.array([1200.0, -300.0])
    assert np.allclose(wheel_dynamics(fx * p.r, fx, p), [0.0, 0.0])
    assert np.allclose(wheel_dynamics([p.I_w, 0.0], [0.0, 0.0], p), [1.0, 0.0])
    with pytest.raises(ValueError):
        wheel_dynamics([1.0, 2.0, 3.0], [0.0, 0.0], p)
