"""Density-level checks on a 1-D line or a radially symmetric 3-D ball.

Node-based finite volumes: nodes ``x_0 .. x_N`` with spacing ``h``; each node
owns the control volume between the neighbouring face midpoints (half cells
at reflecting ends, ``r^2``-weighted in the radial geometry).  Both operators
are written in flux form, so the discrete mass ``sum V_i rho_i`` (trapezoid
rule on the line) telescopes.

Sign convention for the forward equation of ``dx = q dt + C dw``::

    d rho / dt = -div(q rho) + d_i d_j (a_ij rho),   a = C C^T / 2

With ``a = D I`` this is ``div(-q rho + grad(D rho))`` and, when ``q = grad D``
(the Brownian limit), equals the Fick form ``div(D grad rho)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .brownian import DimensionlessParams, PhysicalParams, brownian_limit_sde, physical_system
from .errors import BoundaryUnsupported, DomainMismatch, FieldMismatch, NonConvergedLinearSolve
from .fields import Constant, Power, ScalarField
from .limit import LimitSde, reduce_system

__all__ = [
    "BOUNDARIES",
    "GEOMETRIES",
    "DensityGrid",
    "DiffusivityField",
    "FickSolution",
    "kolmogorov_rhs",
    "fick_rhs",
    "fick_matrices",
    "operator_equivalence_check",
    "equivalence_orders",
    "solve_fick",
    "histogram_l1",
    "limit_sde_for",
    "gaussian_suite",
]

BOUNDARIES = ("reflecting", "periodic")
GEOMETRIES = ("line", "radial")


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Uniform nodes on ``[lower, upper]`` plus density values.

    Periodic grids omit the right endpoint (it is identified with the left).
    Radial grids start at ``r = 0`` and reflect at the outer radius.
    """

    lower: float
    upper: float
    n_cells: int
    boundary: str = "reflecting"
    geometry: str = "line"
    rho: np.ndarray | None = None

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise BoundaryUnsupported(f"boundary {self.boundary!r} not in {BOUNDARIES}")
        if self.geometry not in GEOMETRIES:
            raise BoundaryUnsupported(f"geometry {self.geometry!r} not in {GEOMETRIES}")
        if self.geometry == "radial" and (self.boundary != "reflecting" or self.lower != 0.0):
            raise BoundaryUnsupported("radial grids start at r = 0 and reflect at the outer radius")
        if self.n_cells < 2 or not self.upper > self.lower:
            raise ValueError("need upper > lower and at least two cells")
        rho = np.zeros(self.n_nodes) if self.rho is None else np.array(self.rho, dtype=float)
        if rho.shape != (self.n_nodes,):
            raise ValueError(f"rho has shape {rho.shape}, expected ({self.n_nodes},)")
        object.__setattr__(self, "rho", rho)

    @property
    def h(self) -> float:
        return (self.upper - self.lower) / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells if self.boundary == "periodic" else self.n_cells + 1

    @property
    def axis(self) -> np.ndarray:
        return self.lower + self.h * np.arange(self.n_nodes)

    @property
    def faces(self) -> np.ndarray:
        """Interior faces: between node i and i+1 (and the wrap face for periodic grids)."""
        nf = self.n_nodes if self.boundary == "periodic" else self.n_nodes - 1
        return self.lower + self.h * (np.arange(nf) + 0.5)

    @property
    def face_areas(self) -> np.ndarray:
        f = self.faces
        return f**2 if self.geometry == "radial" else np.ones_like(f)

    @property
    def volumes(self) -> np.ndarray:
        h = self.h
        if self.boundary == "periodic":
            return np.full(self.n_nodes, h)
        edges = np.concatenate([[self.lower], self.faces, [self.upper]])
        if self.geometry == "radial":
            return (edges[1:] ** 3 - edges[:-1] ** 3) / 3.0
        return np.diff(edges)

    @property
    def interior(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        if self.boundary != "periodic":
            mask[0] = mask[-1] = False
        return mask

    def mass(self, rho=None) -> float:
        """Discrete mass; the radial version omits the constant factor 4 pi."""
        rho = self.rho if rho is None else rho
        return math.fsum((self.volumes * rho).tolist())

    def with_rho(self, rho) -> DensityGrid:
        return DensityGrid(self.lower, self.upper, self.n_cells, self.boundary, self.geometry, rho)

    def refined(self, factor: int = 2) -> DensityGrid:
        return DensityGrid(self.lower, self.upper, self.n_cells * factor, self.boundary, self.geometry)

    def normalized(self) -> DensityGrid:
        return self.with_rho(self.rho / self.mass())

    def points(self, x, dim: int) -> np.ndarray:
        """Embed 1-D coordinates as points ``(x, 0, ..., 0)`` in ``dim`` dimensions."""
        x = np.asarray(x, dtype=float)
        pts = np.zeros((x.size, dim))
        pts[:, 0] = x
        return pts


def _field_dim(f: ScalarField | None, fallback: int = 1) -> int:
    d = getattr(f, "dim", None)
    return fallback if d is None else d


def _geometry_dim(grid: DensityGrid) -> int:
    return 3 if grid.geometry == "radial" else 1


def _check_geometry(grid: DensityGrid, dim: int | None) -> None:
    if dim is None:
        return  # constant fields fit either geometry
    if grid.geometry == "line" and dim != 1:
        raise DomainMismatch(f"a line grid needs 1-D fields, got {dim}-D")
    if grid.geometry == "radial" and dim != 3:
        raise DomainMismatch(f"a radial grid needs 3-D radially symmetric fields, got {dim}-D")


@dataclass(frozen=True, eq=False)
class DiffusivityField:
    """Scalar diffusivity ``D`` with the viscosity-like field it was built from."""

    field: ScalarField
    source: ScalarField | None = None
    label: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int | None:
        return getattr(self.field, "dim", None)

    def value(self, x) -> np.ndarray:
        return self.field.value(x)

    def gradient(self, x) -> np.ndarray:
        return self.field.gradient(x)

    @classmethod
    def constant(cls, D: float) -> DiffusivityField:
        if not D > 0:
            raise ValueError("diffusivity must be positive")
        return cls(Constant(float(D)), None, "constant", {"D": float(D)})

    @classmethod
    def from_physical(cls, p: PhysicalParams) -> DiffusivityField:
        """``D(x) = kB T0 / (6 pi mu(x) r)`` in m^2/s on physical coordinates."""
        c = p.kB * p.T0 / (6.0 * math.pi * p.r)
        return cls(Power(p.mu_field, -1.0, c), p.eta_field, "physical", {"D_bar": p.D_bar})

    @classmethod
    def from_dimensionless(cls, dp: DimensionlessParams) -> DiffusivityField:
        """``D(y) = sigma^2 / (2 eta^2) = sigma_bar_sq / (2 eta)`` in dimensionless units."""
        return cls(Power(dp.eta_field, -1.0, 0.5 * dp.sigma_bar_sq), dp.eta_field, "dimensionless",
                   {"D_bar": 0.5 * dp.sigma_bar_sq})


def _wrap(grid: DensityGrid, v: np.ndarray) -> np.ndarray:
    """Right neighbour of every face-owning node."""
    return np.roll(v, -1) if grid.boundary == "periodic" else v[1:]


def _left(grid: DensityGrid, v: np.ndarray) -> np.ndarray:
    return v if grid.boundary == "periodic" else v[:-1]


def _divergence(grid: DensityGrid, flux: np.ndarray) -> np.ndarray:
    """``(A_{i+1/2} F_{i+1/2} - A_{i-1/2} F_{i-1/2}) / V_i`` with zero flux through reflecting ends."""
    af = grid.face_areas * flux
    if grid.boundary == "periodic":
        net = af - np.roll(af, 1)
    else:
        net = np.concatenate([af, [0.0]]) - np.concatenate([[0.0], af])
    return net / grid.volumes


def kolmogorov_rhs(limit_sde: LimitSde, grid: DensityGrid, rho=None, t: float = 0.0) -> np.ndarray:
    """Forward operator ``div(-q rho + grad(a rho))`` of a 1-D or radial limit SDE.

    ``q`` is evaluated at faces, ``a = (C0 C0^T)_{00} / 2`` at nodes; the face
    density is the arithmetic mean of its two nodes.  In the radial geometry
    the SDE must be isotropic and radially symmetric; its radial drift is the
    first component along the positive first axis.
    """
    _check_geometry(grid, limit_sde.dim)
    rho = grid.rho if rho is None else np.asarray(rho, dtype=float)
    q = limit_sde.drift(grid.points(grid.faces, limit_sde.dim), t)[:, 0]
    a = limit_sde.generator_diffusion(grid.points(grid.axis, limit_sde.dim), t)[:, 0, 0]
    ar = a * rho
    flux = -q * 0.5 * (_left(grid, rho) + _wrap(grid, rho)) + (_wrap(grid, ar) - _left(grid, ar)) / grid.h
    return _divergence(grid, flux)


def _face_diffusivity(D: DiffusivityField, grid: DensityGrid, face_mean: str) -> np.ndarray:
    _check_geometry(grid, D.dim)
    Dn = D.value(grid.points(grid.axis, D.dim or _geometry_dim(grid)))
    if np.any(~(Dn > 0)):
        raise ValueError("diffusivity must be positive at every node")
    l, r = _left(grid, Dn), _wrap(grid, Dn)
    if face_mean == "arithmetic":
        return 0.5 * (l + r)
    if face_mean == "harmonic":
        return 2.0 * l * r / (l + r)
    raise ValueError(f"unknown face_mean {face_mean!r}")


def fick_rhs(D: DiffusivityField, grid: DensityGrid, rho=None, face_mean: str = "arithmetic") -> np.ndarray:
    """Conservative ``div(D grad rho)`` with face diffusivities from the nodal values."""
    rho = grid.rho if rho is None else np.asarray(rho, dtype=float)
    Df = _face_diffusivity(D, grid, face_mean)
    flux = Df * (_wrap(grid, rho) - _left(grid, rho)) / grid.h
    return _divergence(grid, flux)


def fick_matrices(D: DiffusivityField, grid: DensityGrid, face_mean: str = "arithmetic"):
    """Lumped mass ``V`` (vector) and symmetric stiffness ``K`` with ``V * fick_rhs = K rho``."""
    w = grid.face_areas * _face_diffusivity(D, grid, face_mean) / grid.h
    n = grid.n_nodes
    i = np.arange(w.size)
    j = (i + 1) % n
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([w, w, -w, -w])
    K = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    return grid.volumes, K


def limit_sde_for(params: PhysicalParams | DimensionlessParams, dim: int | None = None) -> LimitSde:
    """Reduced SDE matching :meth:`DiffusivityField.from_physical` / ``from_dimensionless``.

    ``dim`` is used only when the viscosity field does not fix a dimension.
    """
    dim = params.eta_field.dim or dim
    if isinstance(params, PhysicalParams):
        return reduce_system(physical_system(params, _field_dim(params.eta_field, dim or 1)), gradient_mode="fd")
    if dim is not None and params.eta_field.dim is None:
        return brownian_limit_sde(params, dim=dim)
    return brownian_limit_sde(params)


def gaussian_suite(grid: DensityGrid, count: int = 3) -> list[np.ndarray]:
    """Smooth Gaussian test densities spread over the grid."""
    L = grid.upper - grid.lower
    out = []
    for k in range(count):
        if grid.geometry == "radial":
            c, w = 0.0, L * (0.12 + 0.05 * k)
        else:
            c, w = grid.lower + L * (0.35 + 0.15 * k), L * (0.08 + 0.03 * k)
        out.append(np.exp(-0.5 * ((grid.axis - c) / w) ** 2))
    return out


def _same_field(a: ScalarField | None, b: ScalarField | None) -> bool:
    if a is b:
        return True
    try:
        return a.to_dict() == b.to_dict()
    except Exception:
        return False


def operator_equivalence_check(params: PhysicalParams | DimensionlessParams, grid: DensityGrid,
                               rho_samples=None, D_field: DiffusivityField | None = None,
                               face_mean: str = "arithmetic") -> float:
    """Max over interior nodes and test densities of ``|kolmogorov_rhs - fick_rhs|``.

    Both sides are built from the viscosity shape in ``params``; passing a
    ``D_field`` built from a different shape raises :class:`FieldMismatch`.
    """
    if D_field is None:
        D_field = (DiffusivityField.from_physical(params) if isinstance(params, PhysicalParams)
                   else DiffusivityField.from_dimensionless(params))
    elif not _same_field(D_field.source, params.eta_field):
        raise FieldMismatch("diffusivity and limit SDE were built from different viscosity fields")
    sde = limit_sde_for(params, _geometry_dim(grid))
    samples = gaussian_suite(grid) if rho_samples is None else [np.asarray(r, dtype=float) for r in rho_samples]
    inner = grid.interior
    worst = 0.0
    for rho in samples:
        diff = kolmogorov_rhs(sde, grid, rho) - fick_rhs(D_field, grid, rho, face_mean)
        worst = max(worst, float(np.max(np.abs(diff[inner]))))
    return worst


def equivalence_orders(params: PhysicalParams | DimensionlessParams, grid: DensityGrid, levels: int = 3,
                       sample_fn=None) -> dict:
    """Equivalence differences under repeated mesh halving and the observed orders.

    ``sample_fn(grid)`` returns the test densities on a grid (default
    :func:`gaussian_suite`), so every level sees the same continuous functions.
    """
    sample_fn = gaussian_suite if sample_fn is None else sample_fn
    diffs, hs = [], []
    g = grid
    for _ in range(levels):
        diffs.append(operator_equivalence_check(params, g, sample_fn(g)))
        hs.append(g.h)
        g = g.refined()
    orders = [
        math.log(diffs[k] / diffs[k + 1]) / math.log(hs[k] / hs[k + 1]) if diffs[k + 1] > 0 else math.inf
        for k in range(levels - 1)
    ]
    return {"h": hs, "max_diff": diffs, "orders": orders}


@dataclass(frozen=True)
class FickSolution:
    grid: DensityGrid
    times: np.ndarray
    rho: np.ndarray          # (n_times, n_nodes), clipped at zero
    mass_drift: float        # max relative deviation of the unclipped mass
    min_unclipped: float
    clipped_mass: float
    steps: int

    def final(self) -> DensityGrid:
        return self.grid.with_rho(self.rho[-1])


def solve_fick(D: DiffusivityField, rho0: DensityGrid, t_end: float, dt: float, boundary: str | None = None,
               face_mean: str = "arithmetic", save_every: int | None = None, startup_steps: int = 2,
               residual_tol: float = 1e-11) -> FickSolution:
    """Trapezoidal-in-time solve of ``d rho/dt = div(D grad rho)``.

    The first trapezoidal step is replaced by ``startup_steps`` backward-Euler
    substeps to damp the undamped high modes of rough initial data.  Negative
    values are clipped in the reported snapshots only; the state is evolved
    unclipped so the discrete mass is conserved.
    """
    if boundary is not None and boundary != rho0.boundary:
        rho0 = DensityGrid(rho0.lower, rho0.upper, rho0.n_cells, boundary, rho0.geometry, rho0.rho)
    grid = rho0
    if not (t_end > 0 and dt > 0):
        raise ValueError("t_end and dt must be positive")
    if np.any(grid.rho < -1e-12 * max(1.0, float(np.max(np.abs(grid.rho))))):
        raise ValueError("initial density has negative values")
    n_steps = int(round(t_end / dt))
    if n_steps < 1 or abs(n_steps * dt - t_end) > 1e-9 * t_end:
        raise ValueError("t_end must be a whole number of steps dt")
    save_every = n_steps if save_every is None else int(save_every)
    V, K = fick_matrices(D, grid, face_mean)
    Vm = sp.diags(V, format="csc")

    def factor(M):
        try:
            return spla.splu(M)
        except RuntimeError as exc:
            raise NonConvergedLinearSolve(f"sparse LU failed: {exc}") from None

    def solve(lu, M, b):
        x = lu.solve(b)
        res = np.linalg.norm(M @ x - b) / max(np.linalg.norm(b), 1e-300)
        if not np.all(np.isfinite(x)) or res > residual_tol:
            raise NonConvergedLinearSolve(f"relative residual {res:.3g} above {residual_tol:g}")
        return x

    cn_lhs = (Vm - 0.5 * dt * K).tocsc()
    cn_rhs = (Vm + 0.5 * dt * K).tocsc()
    lu_cn = factor(cn_lhs)
    sub = dt / startup_steps if startup_steps else dt
    be_lhs = (Vm - sub * K).tocsc()
    lu_be = factor(be_lhs) if startup_steps else None

    rho = grid.rho.copy()
    m0 = grid.mass(rho)
    times, snaps = [0.0], [np.clip(rho, 0.0, None)]
    drift, min_seen, clipped = 0.0, float(np.min(rho)), 0.0
    for k in range(1, n_steps + 1):
        if k == 1 and startup_steps:
            for _ in range(startup_steps):
                rho = solve(lu_be, be_lhs, V * rho)
        else:
            rho = solve(lu_cn, cn_lhs, cn_rhs @ rho)
        drift = max(drift, abs(grid.mass(rho) - m0) / abs(m0))
        min_seen = min(min_seen, float(np.min(rho)))
        if k % save_every == 0 or k == n_steps:
            if times[-1] != k * dt:
                neg = np.clip(rho, None, 0.0)
                clipped = max(clipped, -grid.mass(neg))
                times.append(k * dt)
                snaps.append(np.clip(rho, 0.0, None))
    return FickSolution(grid, np.array(times), np.array(snaps), drift, min_seen, clipped, n_steps)


def histogram_l1(samples, grid: DensityGrid, rho=None, bins: int = 40) -> dict:
    """L1 distance between a sample histogram and the grid density, both normalized.

    In the radial geometry ``samples`` are 3-D points (or radii) and the
    compared density is the radial one, ``r^2 rho``.  The grid density is
    averaged over each histogram bin by linear interpolation.
    """
    rho = grid.rho if rho is None else np.asarray(rho, dtype=float)
    s = np.asarray(samples, dtype=float)
    if grid.geometry == "radial":
        s = np.linalg.norm(s, axis=-1) if s.ndim > 1 else np.abs(s)
        weight = grid.axis**2
    else:
        s = s.reshape(-1) if s.ndim <= 1 or s.shape[-1] == 1 else s[:, 0]
        weight = np.ones_like(grid.axis)
    edges = np.linspace(grid.lower, grid.upper, bins + 1)
    counts, _ = np.histogram(s, bins=edges)
    width = np.diff(edges)
    n_out = int(s.size - counts.sum())
    hist = counts / (s.size * width)
    fine = np.linspace(grid.lower, grid.upper, bins * 32 + 1)
    dens = np.interp(fine, grid.axis, weight * rho)
    mass = np.trapezoid(dens, fine)
    cell = np.array([
        np.trapezoid(dens[k * 32:(k + 1) * 32 + 1], fine[k * 32:(k + 1) * 32 + 1]) for k in range(bins)
    ]) / (mass * width)
    diff = np.abs(hist - cell)
    return {
        "L1": float(np.sum(diff * width)),
        "centers": 0.5 * (edges[1:] + edges[:-1]),
        "hist": hist,
        "solved": cell,
        "abs_diff": diff,
        "n_outside": n_out,
    }

