import numpy as np
import pytest

from credible_autocoder.core.errors import (
    AsymmetricMatrixError,
    InstabilityError,
    NumericsError,
)
from credible_autocoder.numerics.ellipsoid import Ellipsoid
from credible_autocoder.numerics.linalg import (
    is_positive_definite,
    jacobian_fd,
    lqr_gain,
    solve_discrete_lyapunov,
    spectral_radius,
)


def test_scalar_lyapunov_matches_closed_form() -> None:
    p = solve_discrete_lyapunov([[0.5]], [[1.0]])
    assert p[0, 0] == pytest.approx(4.0 / 3.0)


def test_lyapunov_residual_on_matrix_instance() -> None:
    a = np.array([[0.9, 0.1], [0.0, 0.7]])
    q = np.eye(2)
    p = solve_discrete_lyapunov(a, q)
    assert np.allclose(p, a.T @ p @ a + q, atol=1e-9)
    assert np.allclose(p, p.T)


def test_lyapunov_rejects_unstable_system() -> None:
    with pytest.raises(InstabilityError):
        solve_discrete_lyapunov([[1.5]], [[1.0]])


def test_scalar_lqr_golden_ratio() -> None:
    gain, p = lqr_gain([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    assert p[0, 0] == pytest.approx(golden, rel=1e-9)
    assert gain[0, 0] == pytest.approx(golden / (1.0 + golden), rel=1e-9)


def test_lqr_zero_plant_gives_zero_gain() -> None:
    gain, p = lqr_gain([[0.0]], [[1.0]], [[1.0]], [[1.0]])
    assert gain[0, 0] == pytest.approx(0.0)
    assert p[0, 0] == pytest.approx(1.0)


def test_lqr_double_integrator_is_stabilized() -> None:
    dt = 0.1
    a = np.array([[1.0, dt], [0.0, 1.0]])
    b = np.array([[0.0], [dt]])
    gain, _ = lqr_gain(a, b, np.eye(2), np.eye(1))
    assert spectral_radius(a - b @ gain) < 1.0


def test_lqr_rejects_indefinite_weight() -> None:
    with pytest.raises(NumericsError):
        lqr_gain([[1.0]], [[1.0]], [[-1.0]], [[1.0]])


def test_unstabilizable_pair_raises() -> None:
    a = np.array([[2.0, 0.0], [0.0, 0.5]])
    b = np.array([[0.0], [1.0]])
    with pytest.raises(NumericsError):
        lqr_gain(a, b, np.eye(2), np.eye(1))


def test_positive_definite_checks() -> None:
    assert is_positive_definite(np.diag([1.0, 2.0]))
    assert not is_positive_definite(np.diag([1.0, -2.0]))
    with pytest.raises(AsymmetricMatrixError):
        is_positive_definite([[1.0, 0.5], [0.0, 1.0]])


def test_central_difference_jacobian() -> None:
    def fn(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.array([x[0] * x[1] + u[0], np.sin(x[0])])

    jac_x, jac_u = jacobian_fd(fn, [2.0, 3.0], [1.0])
    assert np.allclose(jac_x, [[3.0, 2.0], [np.cos(2.0), 0.0]], atol=1e-6)
    assert np.allclose(jac_u, [[1.0], [0.0]], atol=1e-6)


def test_ellipsoid_membership_and_half_widths() -> None:
    ellipsoid = Ellipsoid(np.diag([4.0, 1.0]))
    assert np.allclose(ellipsoid.half_widths(), [0.5, 1.0])
    assert bool(ellipsoid.contains([0.5, 0.0]))
    assert not bool(ellipsoid.contains([0.6, 0.0]))
    lo, hi = ellipsoid.bounding_box([1.0, 2.0])
    assert np.allclose(lo, [0.5, 1.0])
    assert np.allclose(hi, [1.5, 3.0])


def test_ellipsoid_scaled_to_contain_box_corners() -> None:
    ellipsoid = Ellipsoid(np.eye(2)).scaled_to_contain([1.0, 1.0])
    assert np.allclose(ellipsoid.P, 0.5 * np.eye(2))
    assert bool(ellipsoid.contains([1.0, -1.0]))


def test_ellipsoid_samples_respect_the_level_set() -> None:
    ellipsoid = Ellipsoid([[2.0, 0.3], [0.3, 1.0]])
    rng = np.random.default_rng(3)
    assert np.allclose(ellipsoid.value(ellipsoid.boundary_samples(50, rng)), 1.0)
    assert np.all(ellipsoid.value(ellipsoid.interior_samples(50, rng)) <= 1.0 + 1e-12)


def test_ellipsoid_rejects_indefinite_shape() -> None:
    with pytest.raises(NumericsError):
        Ellipsoid(np.diag([1.0, -1.0]))


def test_central_difference_has_second_order_accuracy() -> None:
    def fn(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.array([np.sin(x[0])])

    errors = []
    for step in (1e-2, 5e-3, 2.5e-3):
        jac_x, _ = jacobian_fd(fn, [0.7], [0.0], step=step)
        errors.append(abs(jac_x[0, 0] - np.cos(0.7)))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.9)
    assert jacobian_fd(fn, [0.0], [0.0])[0][0, 0] == pytest.approx(1.0, abs=1e-9)


def test_car_jacobian_matches_richardson_extrapolation() -> None:
    from credible_autocoder.vehicle.dynamics import plant_f
    from credible_autocoder.vehicle.params import CarParams

    p = CarParams()
    x0, u0 = [10.0, 0.002512, 0.17783], [0.0, -0.001086]

    def fn(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return plant_f(x, u, p)

    coarse = jacobian_fd(fn, x0, u0, step=1e-3)
    fine = jacobian_fd(fn, x0, u0, step=5e-4)
    default = jacobian_fd(fn, x0, u0)
    for c, f, d in zip(coarse, fine, default):
        extrapolated = (4.0 * f - c) / 3.0
        assert np.allclose(d, extrapolated, rtol=1e-6, atol=1e-6)
