import math

import numpy as np
import pytest
import sympy as sp

from fastslow.brownian import DimensionlessParams, water_preset
from fastslow.errors import BoundaryUnsupported, DomainMismatch, FieldMismatch, NonConvergedLinearSolve
from fastslow.fields import CallableField, Constant, GaussianBump, Product, SmoothRamp
from fastslow.fokker_planck import (
    DensityGrid,
    DiffusivityField,
    equivalence_orders,
    fick_matrices,
    fick_rhs,
    histogram_l1,
    kolmogorov_rhs,
    operator_equivalence_check,
    solve_fick,
)
from fastslow.limit import LimitSde

X = sp.symbols("x")


def _sym_field(expr):
    """1-D CallableField (and its derivative) from a sympy expression."""
    f = sp.lambdify(X, expr, "numpy")
    df = sp.lambdify(X, sp.diff(expr, X), "numpy")
    d2f = sp.lambdify(X, sp.diff(expr, X, 2), "numpy")
    full = lambda fn: (lambda y: np.broadcast_to(np.asarray(fn(y[..., 0]), dtype=float), y.shape[:-1]))
    return CallableField(
        full(f),
        grad=lambda y: full(df)(y)[..., None],
        hess=lambda y: full(d2f)(y)[..., None, None],
        field_dim=1,
    )


def _sde_from_D(expr):
    """Limit SDE with drift D' and diffusion sqrt(2 D), whose forward operator is (D rho')'."""
    D = sp.lambdify(X, expr, "numpy")
    dD = sp.lambdify(X, sp.diff(expr, X), "numpy")
    return LimitSde(
        1, 1,
        lambda x, t: np.broadcast_to(np.asarray(dD(x[:, 0]), dtype=float), (x.shape[0],))[:, None],
        lambda x, t: np.sqrt(2 * np.broadcast_to(np.asarray(D(x[:, 0]), dtype=float), (x.shape[0],)))[:, None, None],
    )


def _line(n, lo=-5.0, hi=5.0, boundary="reflecting"):
    return DensityGrid(lo, hi, n, boundary)


def _gauss(g, c=0.3, w=0.8):
    return np.exp(-0.5 * ((g.axis - c) / w) ** 2)


def _order(errs):
    return [math.log2(errs[k] / errs[k + 1]) for k in range(len(errs) - 1)]


def test_heat_kernel_kolmogorov():
    Dbar = 0.7
    sde = LimitSde(1, 1, lambda x, t: np.zeros_like(x),
                   lambda x, t: np.full((x.shape[0], 1, 1), math.sqrt(2 * Dbar)))
    errs = []
    for n in (100, 200, 400):
        g = _line(n)
        rho = _gauss(g)
        exact = Dbar * rho * (((g.axis - 0.3) / 0.8) ** 2 - 1) / 0.8**2
        errs.append(np.max(np.abs(kolmogorov_rhs(sde, g, rho) - exact)[g.interior]))
    assert min(_order(errs)) > 1.9


def test_fick_constant_D_gaussian():
    errs = []
    for n in (100, 200, 400):
        g = _line(n)
        rho = _gauss(g)
        exact = 1.3 * rho * (((g.axis - 0.3) / 0.8) ** 2 - 1) / 0.8**2
        errs.append(np.max(np.abs(fick_rhs(DiffusivityField.constant(1.3), g, rho) - exact)[g.interior]))
    assert min(_order(errs)) > 1.9


def test_fick_linear_density_interior_zero():
    g = _line(40)
    out = fick_rhs(DiffusivityField.constant(2.0), g, 3.0 + 0.5 * g.axis)
    np.testing.assert_allclose(out[g.interior], 0.0, atol=1e-12)


def test_fick_against_nonconservative_form():
    expr = 1 + 0.4 * sp.sin(X) ** 2 + 0.2 * sp.tanh(X / 2)
    D = DiffusivityField(_sym_field(expr))
    Dn, dDn = sp.lambdify(X, expr), sp.lambdify(X, sp.diff(expr, X))
    errs = []
    for n in (80, 160, 320):
        g = _line(n)
        x = g.axis
        rho = _gauss(g)
        d1 = -(x - 0.3) / 0.8**2 * rho
        d2 = rho * (((x - 0.3) / 0.8) ** 2 - 1) / 0.8**2
        ref = Dn(x) * d2 + dDn(x) * d1
        errs.append(np.max(np.abs(fick_rhs(D, g, rho) - ref)[g.interior]))
    assert min(_order(errs)) > 1.9


@pytest.mark.parametrize("operator", ["fick", "kolmogorov"])
def test_manufactured_solution_periodic(operator):
    t = sp.symbols("t")
    D_expr = 1 + 0.3 * sp.sin(X)
    rho_expr = sp.exp(-t) * sp.cos(X)
    source = sp.diff(rho_expr, t) - sp.diff(D_expr * sp.diff(rho_expr, X), X)
    rho_f = sp.lambdify((X, t), rho_expr, "numpy")
    drho_f = sp.lambdify((X, t), sp.diff(rho_expr, t), "numpy")
    src_f = sp.lambdify((X, t), source, "numpy")
    D = DiffusivityField(_sym_field(D_expr))
    sde = _sde_from_D(D_expr)
    tt = 0.4
    errs = []
    for n in (32, 64, 128, 256):
        g = DensityGrid(0.0, 2 * math.pi, n, "periodic")
        rho = rho_f(g.axis, tt)
        rhs = fick_rhs(D, g, rho) if operator == "fick" else kolmogorov_rhs(sde, g, rho)
        errs.append(np.max(np.abs(drho_f(g.axis, tt) - rhs - src_f(g.axis, tt))))
    assert min(_order(errs)) > 1.9


def test_constant_density_mass_derivative_zero():
    eta = GaussianBump(1.0, -0.5, (0.4,), 0.8)
    dp = DimensionlessParams(1e-12, 1e-3, 2.0, eta)
    g = _line(64)
    rho = np.ones(g.n_nodes)
    from fastslow.fokker_planck import limit_sde_for
    for rhs in (kolmogorov_rhs(limit_sde_for(dp), g, rho), fick_rhs(DiffusivityField.from_dimensionless(dp), g, rho)):
        assert abs(math.fsum((g.volumes * rhs).tolist())) < 1e-12


EQ_FIELDS = {
    "gaussian-bump": GaussianBump(1.0, -0.5, (0.3,), 0.8),
    "smooth-ramp": SmoothRamp(0.7, 0.25, (1.0,), 0.2, 1.5),
    "product": Product((GaussianBump(1.0, -0.3, (0.0,), 1.0), SmoothRamp(0.8, 0.15, (1.0,), 0.0, 1.2))),
}


@pytest.mark.parametrize("name", sorted(EQ_FIELDS))
def test_equivalence_second_order_line(name):
    dp = DimensionlessParams(1e-12, 1e-3, 2.0, EQ_FIELDS[name])
    res = equivalence_orders(dp, _line(64, -4.0, 4.0), levels=3)
    assert min(res["orders"]) >= 1.9, res


def test_equivalence_radial():
    eta = GaussianBump(1.0, -0.4, (0.0, 0.0, 0.0), 0.8)
    dp = DimensionlessParams(1e-12, 1e-3, 2.0, eta)
    res = equivalence_orders(dp, DensityGrid(0.0, 4.0, 64, "reflecting", "radial"), levels=3)
    assert res["orders"][-1] >= 1.9, res


def test_equivalence_constant_eta_is_exact():
    dp = DimensionlessParams(1e-12, 1e-3, 2.0, Constant(0.8))
    # same stencil on both sides; only the arithmetic route to D differs
    assert operator_equivalence_check(dp, _line(50)) < 1e-13


def test_equivalence_physical_units():
    p = water_preset(GaussianBump(1.0, -0.5, (0.3,), 0.8))
    g = _line(64, -4.0, 4.0)
    d1 = operator_equivalence_check(p, g)
    d2 = operator_equivalence_check(p, g.refined())
    assert math.log2(d1 / d2) > 1.8


def test_equivalence_field_mismatch():
    dp = DimensionlessParams(1e-12, 1e-3, 2.0, GaussianBump(1.0, -0.5, (0.3,), 0.8))
    other = DimensionlessParams(1e-12, 1e-3, 2.0, GaussianBump(1.0, -0.4, (0.3,), 0.8))
    with pytest.raises(FieldMismatch):
        operator_equivalence_check(dp, _line(40), D_field=DiffusivityField.from_dimensionless(other))


def test_grid_validation():
    with pytest.raises(BoundaryUnsupported):
        DensityGrid(0.0, 1.0, 10, "absorbing")
    with pytest.raises(BoundaryUnsupported):
        DensityGrid(0.0, 1.0, 10, "reflecting", "cylinder")
    with pytest.raises(BoundaryUnsupported):
        DensityGrid(-1.0, 1.0, 10, "reflecting", "radial")
    with pytest.raises(DomainMismatch):
        fick_rhs(DiffusivityField(GaussianBump(1.0, -0.5, (0.0, 0.0, 0.0), 0.5)), _line(10), np.ones(11))


def test_water_preset_diffusivity():
    D = DiffusivityField.from_physical(water_preset())
    assert D.meta["D_bar"] == pytest.approx(1.38e-23 * 300 / (6 * math.pi * 1.4e-3 * 1e-6), rel=2e-3)
    assert float(D.value(np.zeros((1, 3)))[0]) == pytest.approx(D.meta["D_bar"], rel=1e-14)


def test_operator_is_self_adjoint(rng):
    expr = 1 + 0.4 * sp.sin(X) ** 2
    D = DiffusivityField(_sym_field(expr))
    for g in (_line(60), DensityGrid(0.0, 2 * math.pi, 60, "periodic"),
              DensityGrid(0.0, 3.0, 60, "reflecting", "radial")):
        if g.geometry == "radial":
            D = DiffusivityField.constant(0.9)
        V, K = fick_matrices(D, g)
        assert abs(K - K.T).max() == 0.0
        u, v = rng.normal(size=g.n_nodes), rng.normal(size=g.n_nodes)
        a = np.dot(u, V * fick_rhs(D, g, v))
        b = np.dot(v, V * fick_rhs(D, g, u))
        assert abs(a - b) <= 1e-12 * max(abs(a), 1.0)


@pytest.mark.parametrize("boundary", ["reflecting", "periodic"])
def test_solve_conserves_mass(boundary):
    D = DiffusivityField(GaussianBump(1.0, -0.5, (0.3,), 0.8).power(-1.0, 0.8), GaussianBump(1.0, -0.5, (0.3,), 0.8))
    g = _line(200, boundary=boundary)
    rho0 = g.with_rho(_gauss(g, 1.0, 0.5)).normalized()
    sol = solve_fick(D, rho0, 1.0, 0.01, save_every=10)
    assert sol.mass_drift <= 1e-10
    assert len(sol.times) == 11


def test_solve_radial_conserves_mass():
    g = DensityGrid(0.0, 5.0, 200, "reflecting", "radial")
    rho0 = g.with_rho(np.exp(-g.axis**2)).normalized()
    eta = GaussianBump(1.0, -0.4, (0.0, 0.0, 0.0), 0.8)
    sol = solve_fick(DiffusivityField.from_dimensionless(DimensionlessParams(1e-12, 1e-3, 1.0, eta)), rho0, 0.5, 0.01)
    assert sol.mass_drift <= 1e-10


def test_maximum_principle():
    g = _line(200)
    rho0 = g.with_rho(_gauss(g, 0.0, 0.6))
    sol = solve_fick(DiffusivityField.constant(0.5), rho0, 2.0, 0.01, save_every=5)
    tol = 1e-10
    assert sol.rho.max() <= rho0.rho.max() + tol
    assert sol.min_unclipped >= rho0.rho.min() - tol


def test_variance_grows_linearly():
    D0 = 0.25
    g = _line(2000, -10.0, 10.0)
    rho0 = g.with_rho(_gauss(g, 0.0, 0.05)).normalized()
    sol = solve_fick(DiffusivityField.constant(D0), rho0, 2.0, 0.005, save_every=40)
    var = [g.mass(r * g.axis**2) / g.mass(r) - (g.mass(r * g.axis) / g.mass(r)) ** 2 for r in sol.rho]
    late = slice(len(var) // 2, None)
    slope = np.polyfit(sol.times[late], np.array(var)[late], 1)[0]
    assert slope == pytest.approx(2 * D0, rel=0.01)


def test_solve_input_checks():
    g = _line(20)
    with pytest.raises(ValueError):
        solve_fick(DiffusivityField.constant(1.0), g.with_rho(np.full(21, -1.0)), 1.0, 0.1)
    with pytest.raises(ValueError):
        solve_fick(DiffusivityField.constant(1.0), g.with_rho(np.ones(21)), 1.0, 0.3)
    with pytest.raises(NonConvergedLinearSolve):
        solve_fick(DiffusivityField.constant(1.0), g.with_rho(_gauss(g)), 0.1, 0.1, residual_tol=0.0)


def test_histogram_l1_of_exact_samples():
    g = _line(400, -6.0, 6.0)
    rho = g.with_rho(np.exp(-0.5 * g.axis**2))
    samples = np.random.default_rng(0).normal(size=100_000)
    rep = histogram_l1(samples, rho, bins=40)
    assert rep["L1"] < 0.03
    assert rep["n_outside"] == 0
