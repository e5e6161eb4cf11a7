"""Brownian particle in a medium of spatially varying viscosity.

Physical model (SI units)::

    m dv = -6 pi mu(x) r v dt + b(x) dw(t),   dx = v dt,
    b(x)^2 = 12 pi kB T0 mu(x) r            (fluctuation-dissipation)

Viscosity is ``mu(x) = mu_bar * eta(x / ell)`` with ``mu_bar = nu * rho_medium``
and a dimensionless shape ``0 < eta <= 1``.

Dimensionless variables ``s = m0 t / tau``, ``y = x / ell``,
``u = v tau / (m0 ell)`` with ``m0 = m / (6 pi mu_bar ell tau)`` turn the model
into::

    eps du = -eta(y) u ds + sigma(y) dw(s),   dy = u ds,
    eps = m0^2 ell / r,   sigma^2 = 2 kB T0 tau^2 eta / (m ell r).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainMismatch, FieldError, GradientUnavailable
from .fields import Box, Constant, Power, Rescaled, ScalarField
from .limit import LimitSde
from .system import FastSlowSystem, _ConstantCoefficient, _ScaledIdentity, _ScalarOf, make_brownian_system

__all__ = [
    "BOLTZMANN",
    "PhysicalParams",
    "DimensionlessParams",
    "water_preset",
    "calibrate_noise",
    "nondimensionalize",
    "dimensionless_system",
    "physical_system",
    "brownian_limit_sde",
    "shift_vector",
    "shift_vector_crosscheck",
    "PRESETS",
]

BOLTZMANN = 1.380649e-23  # J/K


@dataclass(frozen=True, eq=False)
class PhysicalParams:
    r: float
    rho_particle: float
    rho_medium: float
    nu: float
    T0: float
    kB: float = BOLTZMANN
    ell: float = 1.0
    tau: float = 1.0
    eta_field: ScalarField = field(default_factory=lambda: Constant(1.0))

    def __post_init__(self):
        for name in ("r", "rho_particle", "rho_medium", "nu", "T0", "kB", "ell", "tau"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    @property
    def mass(self) -> float:
        return 4.0 / 3.0 * math.pi * self.r**3 * self.rho_particle

    @property
    def mu_bar(self) -> float:
        return self.nu * self.rho_medium

    @property
    def mu_field(self) -> ScalarField:
        """mu(x) in Pa s on physical coordinates (metres)."""
        return Rescaled(self.eta_field, self.mu_bar, 1.0 / self.ell)

    @property
    def D_bar(self) -> float:
        """kB T0 / (6 pi mu_bar r): diffusivity at the viscosity maximum."""
        return self.kB * self.T0 / (6.0 * math.pi * self.mu_bar * self.r)

    def check_eta(self, box: Box, density: int = 33) -> None:
        """Enforce ``0 < eta <= 1`` on a box in dimensionless coordinates."""
        lo, hi = self.eta_field.extrema(box, density)
        if not lo > 0:
            raise FieldError(f"eta must be strictly positive (grid min {lo:g})")
        if hi > 1.0 + 1e-12:
            raise FieldError(f"eta must not exceed 1 (grid max {hi:g}); mu_bar is the viscosity supremum")

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "rho_particle": self.rho_particle,
            "rho_medium": self.rho_medium,
            "nu": self.nu,
            "T0": self.T0,
            "kB": self.kB,
            "ell": self.ell,
            "tau": self.tau,
            "eta_field": self.eta_field.to_dict(),
            "mass": self.mass,
            "mu_bar": self.mu_bar,
            "D_bar": self.D_bar,
        }


def water_preset(eta_field: ScalarField | None = None) -> PhysicalParams:
    """Micron-sized particle in water at 300 K, observed on metre / second scales."""
    return PhysicalParams(
        r=1e-6,
        rho_particle=1e3,
        rho_medium=1e3,
        nu=1.4e-6,
        T0=300.0,
        ell=1.0,
        tau=1.0,
        eta_field=Constant(1.0) if eta_field is None else eta_field,
    )


PRESETS = {"water": water_preset}


def calibrate_noise(mu, T0: float, r: float, kB: float = BOLTZMANN):
    """Noise amplitude ``b = sqrt(12 pi kB T0 mu r)``; ``mu`` may be a number or a field."""
    if not (T0 > 0 and r > 0 and kB > 0):
        raise ValueError("temperature, radius and kB must be positive")
    c = 12.0 * math.pi * kB * T0 * r
    if isinstance(mu, ScalarField):
        return Power(mu, 0.5, math.sqrt(c))
    if not mu > 0:
        raise ValueError("viscosity must be positive")
    return math.sqrt(c * mu)


@dataclass(frozen=True, eq=False)
class DimensionlessParams:
    """Parameters of the dimensionless system; ``sigma^2 = sigma_bar_sq * eta`` by construction."""

    m0: float
    eps: float
    sigma_bar_sq: float
    eta_field: ScalarField
    ell: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if not (self.eps > 0 and self.m0 > 0 and self.sigma_bar_sq > 0):
            raise ValueError("m0, eps and sigma_bar_sq must be positive")

    @property
    def sigma_field(self) -> ScalarField:
        return Power(self.eta_field, 0.5, math.sqrt(self.sigma_bar_sq))

    def sigma_sq(self, y) -> np.ndarray:
        return self.sigma_bar_sq * self.eta_field.value(y)

    @property
    def dim(self) -> int:
        return self.eta_field.dim or 3

    def s_to_t(self, s):
        return np.asarray(s) * self.tau / self.m0

    def t_to_s(self, t):
        return np.asarray(t) * self.m0 / self.tau

    def u_to_v(self, u):
        return np.asarray(u) * self.m0 * self.ell / self.tau

    def v_to_u(self, v):
        return np.asarray(v) * self.tau / (self.m0 * self.ell)

    def to_physical(self, rho_particle: float, rho_medium: float, kB: float = BOLTZMANN) -> PhysicalParams:
        """Invert :func:`nondimensionalize` given the densities and kB."""
        r = self.m0**2 * self.ell / self.eps
        mass = 4.0 / 3.0 * math.pi * r**3 * rho_particle
        mu_bar = mass / (6.0 * math.pi * self.m0 * self.ell * self.tau)
        T0 = self.sigma_bar_sq * mass * self.ell * r / (2.0 * kB * self.tau**2)
        return PhysicalParams(r, rho_particle, rho_medium, mu_bar / rho_medium, T0, kB, self.ell, self.tau, self.eta_field)

    def to_dict(self) -> dict:
        return {
            "m0": self.m0,
            "eps": self.eps,
            "sigma_bar_sq": self.sigma_bar_sq,
            "eta_field": self.eta_field.to_dict(),
            "ell": self.ell,
            "tau": self.tau,
        }


def nondimensionalize(p: PhysicalParams) -> DimensionlessParams:
    m0 = p.mass / (6.0 * math.pi * p.mu_bar * p.ell * p.tau)
    eps = m0**2 * p.ell / p.r
    sigma_bar_sq = 2.0 * p.kB * p.T0 * p.tau**2 / (p.mass * p.ell * p.r)
    return DimensionlessParams(m0, eps, sigma_bar_sq, p.eta_field, p.ell, p.tau)


def dimensionless_system(dp: DimensionlessParams, eps: float | None = None) -> FastSlowSystem:
    return make_brownian_system(dp.eta_field, dp.sigma_field, dp.eps if eps is None else eps, dim=dp.dim)


def physical_system(p: PhysicalParams, dim: int | None = None) -> FastSlowSystem:
    """The SI model as a fast-slow system with ``eps = m`` (velocity fast, position slow)."""
    dim = dim or p.eta_field.dim or 3
    friction = p.mu_field * (6.0 * math.pi * p.r)
    noise = calibrate_noise(p.mu_field, p.T0, p.r, p.kB)
    zero = _ConstantCoefficient(np.zeros(dim))
    return FastSlowSystem(
        n=dim, n_slow=dim, m_noise=dim, eps=p.mass,
        A=_ScaledIdentity(friction, dim),
        F=zero,
        B=_ScaledIdentity(noise, dim),
        C=_ConstantCoefficient(np.eye(dim)),
        Q=zero,
        P=_ConstantCoefficient(np.zeros((dim, dim))),
        isotropic=(_ScalarOf(friction), _ScalarOf(noise)),
        label="brownian-physical",
    )


class _SmoluchowskiDrift:
    """``-(1/2) (sigma / eta)^2 grad ln eta``."""

    def __init__(self, dp: DimensionlessParams):
        self.dp = dp

    def __call__(self, y, t):
        eta = self.dp.eta_field.value(y)
        grad_ln = self.dp.eta_field.gradient(y) / eta[:, None]
        return (-0.5 * self.dp.sigma_sq(y) / eta**2)[:, None] * grad_ln


class _SmoluchowskiDiffusion:
    def __init__(self, dp: DimensionlessParams, dim: int):
        self.dp = dp
        self.dim = dim

    def __call__(self, y, t):
        ratio = np.sqrt(self.dp.sigma_sq(y)) / self.dp.eta_field.value(y)
        return ratio[:, None, None] * np.eye(self.dim)


def brownian_limit_sde(dp: DimensionlessParams, dim: int | None = None) -> LimitSde:
    """Closed-form limit ``dy = -(1/2)(sigma/eta)^2 grad ln eta ds + (sigma/eta) dw``.

    ``dim`` overrides the default dimension for fields that do not fix one.
    """
    if not dp.eta_field.has_derivatives:
        raise GradientUnavailable("eta needs an analytic gradient for the closed-form limit")
    if dim is not None and dp.eta_field.dim not in (None, dim):
        raise DomainMismatch(f"eta is {dp.eta_field.dim}-D, requested {dim}-D")
    d = dim or dp.dim
    return LimitSde(d, d, _SmoluchowskiDrift(dp), _SmoluchowskiDiffusion(dp, d), label="brownian-limit")


def shift_vector(p: PhysicalParams, x) -> np.ndarray:
    """``g(x) = (1/4) r^-1 b(x)^2 grad(mu(x)^-2)`` in SI units, for one point or a batch."""
    if not p.eta_field.has_derivatives:
        raise GradientUnavailable("mu needs an analytic gradient")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    mu = p.mu_field.value(xb)
    grad_mu = p.mu_field.gradient(xb)
    b_sq = 12.0 * math.pi * p.kB * p.T0 * mu * p.r
    grad_mu_m2 = (-2.0 * mu**-3)[:, None] * grad_mu
    g = (0.25 / p.r) * b_sq[:, None] * grad_mu_m2
    return g[0] if single else g


def shift_vector_crosscheck(p: PhysicalParams, x) -> dict:
    """Compare ``g(x)`` with the physical image of the limit drift at ``x``.

    The limit drift mapped back to SI units is ``ell m0 / tau`` times the
    dimensionless drift at ``y = x / ell``; it equals ``grad D(x)``.  The
    report gives both vectors and their componentwise ratio (NaN where the
    drift vanishes).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dp = nondimensionalize(p)
    drift_dimless = brownian_limit_sde(dp).drift(x / p.ell)
    drift_si = drift_dimless * p.ell * dp.m0 / p.tau
    g = np.atleast_2d(shift_vector(p, x))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(drift_si) > 0, g / drift_si, np.nan)
    finite = ratio[np.isfinite(ratio)]
    return {
        "g": g,
        "drift_si": drift_si,
        "ratio": ratio,
        "ratio_median": float(np.median(finite)) if finite.size else float("nan"),
        "ratio_expected": 36.0 * math.pi**2 * p.r,
    }
