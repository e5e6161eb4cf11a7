import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fastslow.errors import ConfigInvalid, FieldError
from fastslow.fields import Box, Constant, GaussianBump, Power, field_from_spec

from conftest import FAMILIES


def _fd_gradient(f, y, h=1e-6):
    g = np.empty_like(y)
    for j in range(y.size):
        e = np.zeros_like(y)
        e[j] = h
        g[j] = (f.value(y + e) - f.value(y - e)) / (2 * h)
    return g


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_gradient_matches_differences(name, rng):
    f = FAMILIES[name]()
    for y in rng.uniform(-1.5, 1.5, size=(5, 3)):
        np.testing.assert_allclose(f.gradient(y), _fd_gradient(f, y), atol=1e-8)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_hessian_is_gradient_jacobian(name, rng):
    f = FAMILIES[name]()
    h = 1e-6
    for y in rng.uniform(-1.5, 1.5, size=(3, 3)):
        H = f.hessian(y)
        np.testing.assert_allclose(H, H.T, atol=1e-14)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            col = (f.gradient(y + e) - f.gradient(y - e)) / (2 * h)
            np.testing.assert_allclose(H[:, j], col, atol=1e-7)


def test_power_gradient():
    base = GaussianBump(1.0, -0.4, (0.0, 0.0), 0.7)
    f = Power(base, -2.0, 3.0)
    y = np.array([0.3, -0.2])
    np.testing.assert_allclose(f.value(y), 3.0 * base.value(y) ** -2)
    np.testing.assert_allclose(f.gradient(y), _fd_gradient(f, y), rtol=1e-7)


def test_spec_round_trip():
    for name, make in FAMILIES.items():
        f = make()
        g = field_from_spec(f.to_dict())
        y = np.array([[0.1, 0.2, -0.3], [1.0, -1.0, 0.5]])
        np.testing.assert_allclose(f.value(y), g.value(y), rtol=1e-15)
    assert field_from_spec(2.5).value(np.zeros(3)) == 2.5


def test_spec_errors():
    with pytest.raises(ConfigInvalid):
        field_from_spec({"kind": "wiggle"})
    with pytest.raises(ConfigInvalid):
        field_from_spec({"kind": "constant", "value": 1.0, "colour": "red"})
    with pytest.raises(ConfigInvalid):
        field_from_spec({"kind": "gaussian-bump", "base": 1.0})
    with pytest.raises(FieldError):
        GaussianBump(1.0, 0.1, (0.0,), 0.0)


def test_box_grid_and_errors():
    b = Box((0.0, -1.0), (1.0, 1.0))
    g = b.grid(3)
    assert g.shape == (9, 2)
    assert np.all(b.contains(g))
    with pytest.raises(ConfigInvalid):
        Box((0.0,), (0.0,))


@settings(max_examples=40, deadline=None)
@given(depth=st.floats(0.0, 0.9), x=st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_dip_stays_between_floor_and_base(depth, x):
    f = GaussianBump(1.0, -depth, (0.0, 0.0, 0.0), 0.6)
    v = float(f.value(np.array(x)))
    assert 1.0 - depth - 1e-15 <= v <= 1.0 + 1e-15


def test_constant_has_zero_derivatives():
    c = Constant(4.0)
    y = np.ones((2, 3))
    assert np.all(c.gradient(y) == 0) and np.all(c.hessian(y) == 0)
    assert c.is_constant
