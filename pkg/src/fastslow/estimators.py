"""Moment bounds, Gronwall constants, the approximation-error bound and the
window of times on which the diffusion (Fick) description is both observable
and accurate.

All sup/inf values are taken on a tensor grid over a user-supplied box in
dimensionless coordinates; nothing here is a certified bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .brownian import DimensionlessParams, PhysicalParams, nondimensionalize
from .errors import ConfigInvalid, GradientUnavailable, InsufficientPaths, OutOfRange
from .fields import Box, pair_directions
from .integrators import mean_and_se
from .paths import Trajectory

__all__ = [
    "MomentReport",
    "GronwallConstants",
    "ValidityWindow",
    "moment_constant",
    "stationary_moment_bound",
    "gaussian_stationary_moment",
    "mc_moments",
    "gronwall_constants",
    "error_bound",
    "dimensional_error_bound",
    "validity_window",
]

# eps^n E|u|^{2n} for an isotropic 3-D Gaussian with eps E|u|^2 = K: K^n times these.
_GAUSS_3D = {1: 1.0, 2: 5.0 / 3.0, 3: 35.0 / 9.0}


def _grid(dp: DimensionlessParams, box: Box | None, density: int) -> np.ndarray:
    if box is None:
        if dp.eta_field.is_constant:
            return np.zeros((1, dp.dim))
        raise ConfigInvalid("a domain box is required for sup/inf over a non-constant field")
    return box.grid(density)


def moment_constant(dp: DimensionlessParams, domain_box: Box | None = None, grid_density: int = 33) -> float:
    """``K1 = sup 3 sigma^2 / (2 eta)``."""
    y = _grid(dp, domain_box, grid_density)
    return float(np.max(1.5 * dp.sigma_sq(y) / dp.eta_field.value(y)))


def stationary_moment_bound(dp: DimensionlessParams, n: int, domain_box: Box | None = None,
                            grid_density: int = 33) -> float:
    """``K1 ** n``, the stated bound on ``eps^n E|u|^{2n}`` at equilibrium."""
    if n not in (1, 2, 3):
        raise ValueError("moment order must be 1, 2 or 3")
    return moment_constant(dp, domain_box, grid_density) ** n


def gaussian_stationary_moment(dp: DimensionlessParams, n: int, domain_box: Box | None = None,
                               grid_density: int = 33) -> float:
    """Exact stationary ``sup eps^n E|u|^{2n}`` of the frozen OU velocity (3-D isotropic Gaussian).

    Equals ``K1**n`` for n = 1 and ``(5/3) K1**2``, ``(35/9) K1**3`` for n = 2, 3.
    """
    if n not in _GAUSS_3D:
        raise ValueError("moment order must be 1, 2 or 3")
    return _GAUSS_3D[n] * moment_constant(dp, domain_box, grid_density) ** n


@dataclass(frozen=True)
class MomentReport:
    n: int
    s: float
    mc_value: float
    std_error: float
    bound: float | None
    n_paths: int

    @property
    def flagged(self) -> bool:
        return self.bound is not None and self.mc_value > self.bound + 4.0 * self.std_error


def mc_moments(trajectories: Trajectory, eps: float, n: int, s: float, bound: float | None = None,
               min_paths: int = 100) -> MomentReport:
    """Monte Carlo ``eps^n E|u(s)|^{2n}`` from the fast components of a full simulation."""
    u = trajectories.fast_at(s)[~trajectories.aborted]
    if u.shape[0] < min_paths:
        raise InsufficientPaths(f"{u.shape[0]} paths; at least {min_paths} needed")
    vals = (eps * np.sum(u * u, axis=-1)) ** n
    mean, se = mean_and_se(vals)
    return MomentReport(n, float(s), mean, se, bound, int(u.shape[0]))


@dataclass(frozen=True)
class GronwallConstants:
    K1: float
    K2_bar: float
    K3_bar: float
    K4: float
    eps: float
    domain_box: Box | None
    grid_density: int
    s_max: float = 1.0
    parts: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "K1": self.K1,
            "K2_bar": self.K2_bar,
            "K3_bar": self.K3_bar,
            "K4": self.K4,
            "eps": self.eps,
            "domain_box": None if self.domain_box is None else self.domain_box.to_dict(),
            "grid_density": self.grid_density,
            "s_max": self.s_max,
        }


def _drift_pieces(dp: DimensionlessParams, y: np.ndarray):
    """``G = sigma^2 grad(eta^-2)`` and ``h = sigma / eta`` with their derivatives."""
    eta_f = dp.eta_field
    eta = eta_f.value(y)
    g_eta = eta_f.gradient(y)
    H_eta = eta_f.hessian(y)
    sig2 = dp.sigma_sq(y)
    g_sig2 = dp.sigma_bar_sq * g_eta
    grad_em2 = (-2.0 * eta**-3)[:, None] * g_eta
    hess_em2 = (6.0 * eta**-4)[:, None, None] * g_eta[:, :, None] * g_eta[:, None, :] \
        - (2.0 * eta**-3)[:, None, None] * H_eta
    G = sig2[:, None] * grad_em2
    J_G = grad_em2[:, :, None] * g_sig2[:, None, :] + sig2[:, None, None] * hess_em2
    sigma = np.sqrt(sig2)
    hval = sigma / eta
    # grad sigma = grad(sigma^2) / (2 sigma)
    grad_h = (g_sig2 / (2.0 * sigma[:, None])) / eta[:, None] - (sigma / eta**2)[:, None] * g_eta
    return eta, sig2, grad_em2, G, J_G, hval, grad_h


def gronwall_constants(dp: DimensionlessParams, domain_box: Box, grid_density: int = 9, s_max: float = 1.0,
                       n_deltas: int = 9) -> GronwallConstants:
    """Grid estimates of ``K2(s_max)``, ``K3(s_max)`` and ``K4``.

    K2(s) = 2 K1 [2 sup eta^-2 + eps K1 g2 + eps^2 K1 g2 + eps^2 K1 g2 + s sup sigma^2 |grad eta^-2|^2]
    with g2 = sup |grad eta^-2|^2 (the eps^2 term appears twice in the source
    bound and is kept that way);
    K3(s) = 3 max(s sup |dG|^2/|D|^2, sup |dh|^2/|D|^2) over pairs (y, y + D),
    G = sigma^2 grad eta^-2 and h = sigma / eta, including the D -> 0 limit
    (squared spectral norm of the Jacobian of G, squared gradient of h);
    K4 = 3 inf sigma^2 / eta^2.
    """
    if not dp.eta_field.has_derivatives:
        raise GradientUnavailable("Gronwall constants need analytic derivatives of eta")
    if grid_density < 8:
        raise ValueError("grid_density must be at least 8 per axis")
    if domain_box.dim != dp.dim:
        raise ConfigInvalid(f"box is {domain_box.dim}-D but the fields are {dp.dim}-D")
    y = domain_box.grid(grid_density)
    eps = dp.eps
    eta, sig2, grad_em2, G, J_G, hval, grad_h = _drift_pieces(dp, y)
    K1 = float(np.max(1.5 * sig2 / eta))
    sup_eta_m2 = float(np.max(eta**-2))
    g2 = float(np.max(np.sum(grad_em2**2, axis=-1)))
    sig_g2 = float(np.max(sig2 * np.sum(grad_em2**2, axis=-1)))
    K2 = 2.0 * K1 * (2.0 * sup_eta_m2 + eps * K1 * g2 + 2.0 * eps**2 * K1 * g2 + s_max * sig_g2)

    # D -> 0 limits
    jac_norm2 = float(np.max(np.linalg.norm(J_G, ord=2, axis=(-2, -1)) ** 2)) if J_G.size else 0.0
    lip_G = jac_norm2
    lip_h = float(np.max(np.sum(grad_h**2, axis=-1)))
    # finite pairs on a log grid of separations
    width = float(np.min(domain_box.widths))
    for mag in width * np.logspace(-4, 0, n_deltas):
        for direction in pair_directions(dp.dim):
            y2 = y + mag * direction
            inside = domain_box.contains(y2, atol=1e-12 * width)
            if not np.any(inside):
                continue
            _, _, _, G2, _, h2, _ = _drift_pieces(dp, y2[inside])
            dG = np.sum((G[inside] - G2) ** 2, axis=-1) / mag**2
            dh = (hval[inside] - h2) ** 2 / mag**2
            lip_G = max(lip_G, float(np.max(dG)))
            lip_h = max(lip_h, float(np.max(dh)))
    K3 = 3.0 * max(s_max * lip_G, lip_h)
    K4 = 3.0 * float(np.min(sig2 / eta**2))
    parts = {
        "sup_eta_m2": sup_eta_m2,
        "sup_grad_eta_m2_sq": g2,
        "sup_sigma2_grad_eta_m2_sq": sig_g2,
        "lipschitz_G_sq": lip_G,
        "lipschitz_h_sq": lip_h,
        "jacobian_G_sq": jac_norm2,
    }
    return GronwallConstants(K1, K2, K3, K4, eps, domain_box, grid_density, s_max, parts)


def error_bound(eps: float, constants: GronwallConstants, s: float) -> float:
    """``eps K2_bar exp(K3_bar s)`` on ``s in [0, 1)``."""
    if not 0.0 <= s < 1.0:
        raise OutOfRange(f"s={s} outside [0, 1)")
    return eps * constants.K2_bar * math.exp(constants.K3_bar * s)


def dimensional_error_bound(eps: float, m0: float, ell: float, tau: float, K2_bar: float, K3_bar: float, t):
    """``ell^2 K2_bar eps exp(K3_bar t m0 / tau)`` in physical units (m^2)."""
    return ell**2 * K2_bar * eps * np.exp(K3_bar * np.asarray(t, dtype=float) * m0 / tau)


@dataclass(frozen=True)
class ValidityWindow:
    t_min: float
    t_max: float
    delta_sq: float
    eps: float
    m0: float
    ell: float
    tau: float
    K2_bar: float
    K3_bar: float
    K4: float

    @property
    def empty(self) -> bool:
        return not self.t_min < self.t_max

    @property
    def length(self) -> float:
        return max(0.0, self.t_max - self.t_min)

    @property
    def bound_horizon(self) -> float:
        """Physical time at s = 1, the end of the range where the Gronwall bound was derived."""
        return self.tau / self.m0

    @property
    def t_max_s1_form(self) -> float:
        """``tau / (m0 K3_bar)``: the window's upper edge written as ``tau 10^12 / K3_bar`` for m0 = 10^-12."""
        return math.inf if self.K3_bar == 0 else self.tau / (self.m0 * self.K3_bar)

    def error_bound_at(self, t):
        return dimensional_error_bound(self.eps, self.m0, self.ell, self.tau, self.K2_bar, self.K3_bar, t)

    def scatter_at(self, t):
        """Lower bound ``ell^2 t m0 K4 / tau`` on the spread around the drift."""
        return self.ell**2 * np.asarray(t, dtype=float) * self.m0 * self.K4 / self.tau

    def to_dict(self) -> dict:
        return {
            "t_min": self.t_min,
            "t_max": self.t_max,
            "empty": self.empty,
            "length": self.length,
            "delta_sq": self.delta_sq,
            "eps": self.eps,
            "m0": self.m0,
            "ell": self.ell,
            "tau": self.tau,
            "K2_bar": self.K2_bar,
            "K3_bar": self.K3_bar,
            "K4": self.K4,
            "bound_horizon": self.bound_horizon,
            "t_max_s1_form": self.t_max_s1_form,
        }


def validity_window(params: PhysicalParams | DimensionlessParams, constants: GronwallConstants | dict,
                    delta_sq: float | None = None, eps: float | None = None, m0: float | None = None) -> ValidityWindow:
    """Interval ``[t_min, t_max)`` where the spread exceeds ``delta_sq`` but the error bound does not.

    ``t_min`` solves ``ell^2 t m0 K4 / tau = delta_sq``; ``t_max`` solves
    ``ell^2 K2_bar eps exp(K3_bar t m0 / tau) = delta_sq``.  ``delta_sq``
    defaults to ``r^2`` (needs :class:`PhysicalParams`).  ``eps`` and ``m0``
    override the values derived from ``params``.
    """
    if isinstance(params, PhysicalParams):
        dp = nondimensionalize(params)
        if delta_sq is None:
            delta_sq = params.r**2
    else:
        dp = params
        if delta_sq is None:
            raise ValueError("delta_sq is required when only dimensionless parameters are given")
    if not delta_sq > 0:
        raise ValueError("delta_sq must be positive")
    if isinstance(constants, GronwallConstants):
        K2, K3, K4 = constants.K2_bar, constants.K3_bar, constants.K4
    else:
        K2, K3, K4 = (float(constants[k]) for k in ("K2_bar", "K3_bar", "K4"))
    eps = dp.eps if eps is None else float(eps)
    m0 = dp.m0 if m0 is None else float(m0)
    ell, tau = dp.ell, dp.tau

    t_min = math.inf if K4 <= 0 else delta_sq * tau / (ell**2 * m0 * K4)
    floor = ell**2 * K2 * eps
    if floor >= delta_sq:
        t_max = 0.0
    elif K3 == 0:
        t_max = math.inf
    else:
        t_max = tau / (K3 * m0) * math.log(delta_sq / floor)
    return ValidityWindow(t_min, t_max, float(delta_sq), eps, m0, ell, tau, K2, K3, K4)
