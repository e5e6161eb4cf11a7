import numpy as np
import pytest

from fastslow.errors import DomainMismatch, StabilityViolation
from fastslow.fields import Box, Constant, GaussianBump
from fastslow.system import FastSlowSystem, check_regularity, make_brownian_system, verify_stability


def _toy(A, eps=0.1):
    n = len(A)
    return FastSlowSystem.constant(A, np.zeros(n), np.eye(n), np.eye(1, n), np.zeros(1), np.zeros((1, n)), eps)


def test_stability_identity():
    assert verify_stability(_toy(np.eye(2)), Box((-1.0,), (1.0,))) == pytest.approx(1.0)


def test_stability_diagonal():
    assert verify_stability(_toy(np.diag([2.0, 5.0])), Box((-1.0,), (1.0,))) == pytest.approx(2.0)


def test_stability_nonnormal_uses_symmetric_part():
    # eigenvalues of A are 1, but (A + A^T)/2 is indefinite
    A = np.array([[1.0, 4.0], [0.0, 1.0]])
    with pytest.raises(StabilityViolation):
        verify_stability(_toy(A), Box((-1.0,), (1.0,)))


def test_stability_brownian_bump_floor():
    eta = GaussianBump(1.0, -0.7, (0.0, 0.0, 0.0), 0.5)
    sys = make_brownian_system(eta, Constant(1.0), 0.01)
    # the grid contains the centre, so the sampled minimum is the floor
    assert verify_stability(sys, Box.cube(1.0), grid_density=9) == pytest.approx(0.3)


def test_stability_violation_reports_point():
    eta = GaussianBump(1.0, -1.5, (0.0, 0.0, 0.0), 0.5)
    sys = make_brownian_system(eta, Constant(1.0), 0.01)
    with pytest.raises(StabilityViolation, match="x="):
        verify_stability(sys, Box.cube(1.0), grid_density=9)


def test_brownian_coefficients():
    eta = GaussianBump(1.0, -0.5, (0.0, 0.0, 0.0), 0.5)
    sys = make_brownian_system(eta, Constant(2.0), 0.01)
    co = sys.coefficients(np.zeros(3))
    np.testing.assert_allclose(co.A[0], 0.5 * np.eye(3))
    np.testing.assert_allclose(co.B[0], 2.0 * np.eye(3))
    np.testing.assert_allclose(co.C[0], np.eye(3))
    assert np.all(co.F == 0) and np.all(co.Q == 0) and np.all(co.P == 0)
    assert (sys.n, sys.n_slow, sys.m_noise) == (3, 3, 3)


def test_brownian_dimension_mismatch():
    with pytest.raises(DomainMismatch):
        make_brownian_system(GaussianBump(1.0, -0.5, (0.0, 0.0), 0.5), Constant(1.0), 0.01, dim=3)


def test_box_dimension_mismatch():
    sys = make_brownian_system(Constant(1.0), Constant(1.0), 0.01)
    with pytest.raises(DomainMismatch):
        verify_stability(sys, Box.cube(1.0, 2))


def test_coefficient_subset():
    sys = make_brownian_system(Constant(1.0), Constant(1.0), 0.01)
    co = sys.coefficients(np.zeros((4, 3)), names=("A",))
    assert co.A.shape == (4, 3, 3) and co.B is None


def test_nonpositive_eps_rejected():
    with pytest.raises(ValueError):
        make_brownian_system(Constant(1.0), Constant(1.0), 0.0)


def test_regularity_report():
    sys = make_brownian_system(GaussianBump(1.0, -0.5, (0.0, 0.0, 0.0), 0.5), Constant(1.0), 0.01)
    rep = check_regularity(sys, Box.cube(1.0), grid_density=5)
    assert set(rep) == {"Q", "F", "B"}
    assert rep["B"]["sup"] == pytest.approx(1.0)
