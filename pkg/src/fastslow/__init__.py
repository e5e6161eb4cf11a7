"""Diffusion approximation of fast-slow stochastic systems, with a Brownian
particle in an inhomogeneous viscous medium as the worked model."""
from .brownian import (
    DimensionlessParams,
    PhysicalParams,
    brownian_limit_sde,
    dimensionless_system,
    nondimensionalize,
    water_preset,
)
from .fields import Box, Constant, GaussianBump, Product, SmoothRamp, field_from_spec
from .limit import limit_diffusion, limit_drift, reduce_system, solve_stationary_lyapunov
from .system import FastSlowSystem, make_brownian_system

__version__ = "0.1.0"

__all__ = [
    "Box",
    "Constant",
    "DimensionlessParams",
    "FastSlowSystem",
    "GaussianBump",
    "PhysicalParams",
    "Product",
    "SmoothRamp",
    "brownian_limit_sde",
    "dimensionless_system",
    "field_from_spec",
    "limit_diffusion",
    "limit_drift",
    "make_brownian_system",
    "nondimensionalize",
    "reduce_system",
    "solve_stationary_lyapunov",
    "water_preset",
    "__version__",
]
