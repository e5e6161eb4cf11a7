"""Time stepping for the full fast-slow system and for the reduced SDE.

Both simulations consume the same :class:`~fastslow.paths.PathEnsemble`, so
their difference at a given time is a pathwise (strong) error.

Schemes for the full system, all run at the internal step
``h = dt / substeps_fast`` and recorded every ``dt * record_every``:

``euler-maruyama``
    Explicit Euler on both lines.  Needs ``h < eps / (2 gamma_max)``.
``exact-ou-fast``
    Fast line advanced by the exact Ornstein-Uhlenbeck transition with the slow
    state frozen over the step; slow line by left-point Euler.
``joint-ou-brownian``
    Same exact fast transition, and the slow line gets the exact time integral
    of the frozen-coefficient OU process::

        int y dt = A^-1 (F h + B dW - eps (y_new - y_old))

    so position and velocity are sampled jointly.  Stable for any ``h``.

The exact transition is sampled as ``y_new = mean + G dW + R z`` where ``dW``
is the path increment, ``G = A^-1 (I - E) B / h`` is the regression of the OU
noise on ``dW`` (``E = exp(-A h / eps)``), ``R`` is the symmetric square root
of the remaining covariance and ``z`` are the path's auxiliary normals.  The
marginal covariance is exactly ``(S - E S E^T) / eps``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import GridMismatch, InsufficientPaths, StepUnstable
from .limit import LimitSde, _checked_inverse, _sym, lyapunov_batch
from .paths import PathEnsemble, Trajectory, WienerPath, as_ensemble
from .system import FastSlowSystem

__all__ = [
    "SCHEMES",
    "SchemeConfig",
    "ErrorEstimate",
    "exact_ou_fast_step",
    "ou_transition",
    "simulate_full",
    "simulate_reduced",
    "strong_error",
    "stationary_initial_fast",
]

SCHEMES = ("euler-maruyama", "exact-ou-fast", "joint-ou-brownian")
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "joint-ou-brownian"
    dt: float = 1e-2
    substeps_fast: int = 1
    record_every: int = 1
    overflow_guard: float = 1e12
    # When both are given, the Euler stability bound is enforced here.
    eps: float | None = None
    gamma_max: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.substeps_fast < 1 or self.record_every < 1:
            raise ValueError("substeps_fast and record_every must be >= 1")
        if self.scheme == "euler-maruyama" and self.eps is not None and self.gamma_max is not None:
            check_euler_bound(self.h, self.eps, self.gamma_max)

    @property
    def h(self) -> float:
        return self.dt / self.substeps_fast


def check_euler_bound(h: float, eps: float, gamma_max: float) -> None:
    limit = eps / (2.0 * gamma_max)
    if not h < limit:
        raise StepUnstable(f"Euler fast step {h:.3g} violates the bound eps/(2 gamma_max) = {limit:.3g}")


class OUTransition(NamedTuple):
    E: np.ndarray      # (b, n, n) exp(-A h / eps)
    drift: np.ndarray  # (b, n) (I - E) A^-1 F
    G: np.ndarray      # (b, n, m) regression on dW
    R: np.ndarray      # (b, n, n) residual square root
    Ainv: np.ndarray   # (b, n, n)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(_sym(M))
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def ou_transition(A, F, B, eps: float, h: float) -> OUTransition:
    """Frozen-coefficient OU transition over ``h`` for batched ``A (b,n,n)``, ``F (b,n)``, ``B (b,n,m)``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    F = np.asarray(F, dtype=float)
    n = A.shape[-1]
    eig = np.linalg.eigvalsh(_sym(A))[..., 0]
    if np.any(eig <= 0):
        raise StepUnstable("symmetric part of A is not positive definite; no exact OU transition")
    Ainv = _checked_inverse(A)
    E = scipy.linalg.expm(-A * (h / eps))
    I_E = np.eye(n) - E
    S = lyapunov_batch(np.ascontiguousarray(A), B @ np.swapaxes(B, -1, -2))
    cov = (S - E @ S @ np.swapaxes(E, -1, -2)) / eps
    cross = Ainv @ I_E @ B  # Cov(xi, dW), using that A^-1 commutes with E
    G = cross / h
    resid = cov - cross @ np.swapaxes(cross, -1, -2) / h
    drift = np.einsum("bij,bj->bi", I_E @ Ainv, F)
    return OUTransition(E, drift, G, _psd_sqrt(resid), Ainv)


def _isotropic_transition(a, b, eps, h):
    """Scalar version for ``A = a I``, ``B = b I``; returns per-path scalars."""
    x = a * (h / eps)
    E = np.exp(-x)
    one_m_E = -np.expm1(-x)
    var = (b**2 / (2.0 * a * eps)) * (-np.expm1(-2.0 * x))
    cross = one_m_E * b / a
    resid = np.clip(var - cross**2 / h, 0.0, None)
    return E, one_m_E, cross / h, np.sqrt(resid)


def exact_ou_fast_step(A, F, B, eps: float, y, dt: float, increment, aux) -> np.ndarray:
    """One exact step of ``eps dy = (-A y + F) dt + B dw`` with frozen coefficients.

    ``increment`` is the Wiener increment over the step (``m`` components) and
    ``aux`` are ``n`` standard normals; the result is
    ``E y + (I - E) A^-1 F + G increment + R aux``.  Accepts a single state or
    a batch (leading axis).
    """
    A = np.asarray(A, dtype=float)
    single = A.ndim == 2
    A, F, B, y, inc, z = (np.asarray(v, dtype=float) for v in (A, F, B, y, increment, aux))
    if single:
        A, F, B, y, inc, z = A[None], F[None], B[None], y[None], inc[None], z[None]
    tr = ou_transition(A, F, B, eps, dt)
    out = (
        np.einsum("bij,bj->bi", tr.E, y)
        + tr.drift
        + np.einsum("bij,bj->bi", tr.G, inc)
        + np.einsum("bij,bj->bi", tr.R, z)
    )
    return out[0] if single else out


def stationary_initial_fast(system: FastSlowSystem, x0: np.ndarray, z: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Draw ``y0`` from the frozen stationary Gaussian ``N(A^-1 F, S / eps)`` at ``x0``."""
    co = system.coefficients(x0, t)
    mean = np.einsum("bij,bj->bi", _checked_inverse(co.A), co.F)
    if system.isotropic is not None:
        a = np.asarray(system.isotropic[0](x0, t), dtype=float)
        b = np.asarray(system.isotropic[1](x0, t), dtype=float)
        return mean + (np.abs(b) / np.sqrt(2.0 * a * system.eps))[:, None] * z
    S = lyapunov_batch(np.ascontiguousarray(co.A), co.B @ np.swapaxes(co.B, -1, -2))
    return mean + np.einsum("bij,bj->bi", _psd_sqrt(S / system.eps), z)


def _plan(ens: PathEnsemble, cfg: SchemeConfig, t_end: float | None):
    hp = ens.step
    h = cfg.h
    stride = h / hp
    if abs(stride - round(stride)) > 1e-6 * stride or round(stride) < 1:
        raise GridMismatch(f"internal step {h:.6g} is not a multiple of the path step {hp:.6g}")
    stride = int(round(stride))
    horizon = ens.t_grid[-1] if t_end is None else float(t_end)
    n_int = horizon / h
    if abs(n_int - round(n_int)) > 1e-6 * max(n_int, 1.0) or round(n_int) < 1:
        raise GridMismatch(f"horizon {horizon:.6g} is not a whole number of internal steps {h:.6g}")
    n_int = int(round(n_int))
    rec = cfg.substeps_fast * cfg.record_every
    if n_int % rec:
        raise GridMismatch("horizon is not a whole number of recording intervals")
    if n_int * stride > ens.steps:
        raise GridMismatch("path is shorter than the requested horizon")
    return h, stride, n_int, rec


def _broadcast_state(v, n_paths: int, dim: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.broadcast_to(v, (n_paths, dim)).copy() if v.ndim <= 1 else v.copy()
    if out.shape != (n_paths, dim):
        raise GridMismatch(f"{what} has shape {v.shape}, expected ({n_paths}, {dim}) or ({dim},)")
    return out


def _chunk_len(n_paths: int, stride: int, m: int) -> int:
    # recording is keyed on the global step counter, so chunks need no alignment
    return max(1, _CHUNK_ELEMENTS // max(1, n_paths * stride * m))


def simulate_full(system: FastSlowSystem, x0, y0, path: WienerPath | PathEnsemble, cfg: SchemeConfig,
                  t_end: float | None = None) -> Trajectory:
    """Simulate the full fast-slow system on the given Wiener path(s).

    ``y0`` may be an array or ``"stationary"`` (frozen stationary Gaussian at
    ``x0`` drawn from the path's initial-condition stream).
    """
    ens = as_ensemble(path)
    if ens.m_noise != system.m_noise:
        raise GridMismatch(f"path has {ens.m_noise} noise components, system needs {system.m_noise}")
    h, stride, n_int, rec = _plan(ens, cfg, t_end)
    P, n, ns = ens.n_paths, system.n, system.n_slow
    eps = system.eps
    x = _broadcast_state(x0, P, ns, "x0")
    x_safe = x.copy()
    if isinstance(y0, str):
        if y0 != "stationary":
            raise ValueError(f"unknown initial fast state {y0!r}")
        y = stationary_initial_fast(system, x, ens.initial_normals(n))
    else:
        y = _broadcast_state(y0, P, n, "y0")

    if cfg.scheme == "euler-maruyama":
        A0 = system.coefficients(x, 0.0).A
        gamma_max = float(np.max(np.linalg.eigvalsh(_sym(A0))[:, -1]))
        check_euler_bound(h, eps, gamma_max)

    n_rec = n_int // rec
    t_grid = np.arange(n_rec + 1) * (h * rec)
    slow = np.empty((P, n_rec + 1, ns))
    fast = np.empty((P, n_rec + 1, n))
    slow[:, 0], fast[:, 0] = x, y
    aborted = np.zeros(P, dtype=bool)
    draw_aux = ens.aux_normals(n) if cfg.scheme != "euler-maruyama" else None
    iso = system.isotropic
    chunk = _chunk_len(P, stride, system.m_noise)

    k = 0
    for dW_chunk in ens.increment_chunks(stride, chunk):
        if k >= n_int:
            break
        c = min(dW_chunk.shape[1], n_int - k)
        aux_chunk = draw_aux(c) if draw_aux is not None else None
        for j in range(c):
            t = k * h
            dW = dW_chunk[:, j]
            fast_iso = iso is not None and cfg.scheme != "euler-maruyama"
            co = system.coefficients(x, t, ("F", "C", "Q", "P") if fast_iso else None)
            if cfg.scheme == "euler-maruyama":
                drift_y = -np.einsum("bij,bj->bi", co.A, y) + co.F
                y_new = y + drift_y * (h / eps) + np.einsum("bij,bj->bi", co.B, dW) / eps
                x = x + (np.einsum("bij,bj->bi", co.C, y) + co.Q) * h + np.einsum("bij,bj->bi", co.P, dW)
            else:
                z = aux_chunk[:, j]
                if iso is not None:
                    a = np.asarray(iso[0](x, t), dtype=float)
                    b = np.asarray(iso[1](x, t), dtype=float)
                    E, one_m_E, G, R = _isotropic_transition(a, b, eps, h)
                    y_new = E[:, None] * y + (one_m_E / a)[:, None] * co.F + G[:, None] * dW + R[:, None] * z
                    Ainv_int = None
                    inv_a = 1.0 / a
                else:
                    tr = ou_transition(co.A, co.F, co.B, eps, h)
                    y_new = (
                        np.einsum("bij,bj->bi", tr.E, y) + tr.drift
                        + np.einsum("bij,bj->bi", tr.G, dW) + np.einsum("bij,bj->bi", tr.R, z)
                    )
                    Ainv_int = tr.Ainv
                if cfg.scheme == "exact-ou-fast":
                    x = x + (np.einsum("bij,bj->bi", co.C, y) + co.Q) * h + np.einsum("bij,bj->bi", co.P, dW)
                else:
                    noise = b[:, None] * dW if fast_iso else np.einsum("bij,bj->bi", co.B, dW)
                    rhs = co.F * h + noise - eps * (y_new - y)
                    if Ainv_int is None:
                        integral = inv_a[:, None] * rhs
                    else:
                        integral = np.einsum("bij,bj->bi", Ainv_int, rhs)
                    x = x + np.einsum("bij,bj->bi", co.C, integral) + co.Q * h + np.einsum("bij,bj->bi", co.P, dW)
            y = y_new
            k += 1
            bad = ~(np.linalg.norm(y, axis=-1) <= cfg.overflow_guard) & ~aborted
            if np.any(bad):
                # aborted rows keep integrating from a harmless state; their output is NaN
                aborted |= bad
                x[bad] = x_safe[bad]
                y[bad] = 0.0
            if k % rec == 0:
                slow[:, k // rec] = np.where(aborted[:, None], np.nan, x)
                fast[:, k // rec] = np.where(aborted[:, None], np.nan, y)
    if aborted.all():
        raise StepUnstable("every path exceeded the overflow guard; check the step size / scheme")
    return Trajectory(t_grid, slow, fast, ens.path_indices, aborted)


def simulate_reduced(limit_sde: LimitSde, x0, path: WienerPath | PathEnsemble, cfg: SchemeConfig,
                     t_end: float | None = None) -> Trajectory:
    """Euler-Maruyama for ``dx = q0 dt + C0 dw`` on the same path(s) as :func:`simulate_full`."""
    ens = as_ensemble(path)
    if ens.m_noise != limit_sde.m_noise:
        raise GridMismatch(f"path has {ens.m_noise} noise components, limit SDE needs {limit_sde.m_noise}")
    h, stride, n_int, rec = _plan(ens, cfg, t_end)
    P, d = ens.n_paths, limit_sde.dim
    x = _broadcast_state(x0, P, d, "x0")
    n_rec = n_int // rec
    t_grid = np.arange(n_rec + 1) * (h * rec)
    slow = np.empty((P, n_rec + 1, d))
    slow[:, 0] = x
    chunk = _chunk_len(P, stride, limit_sde.m_noise)
    k = 0
    for dW_chunk in ens.increment_chunks(stride, chunk):
        if k >= n_int:
            break
        c = min(dW_chunk.shape[1], n_int - k)
        for j in range(c):
            t = k * h
            x = x + limit_sde.drift(x, t) * h + np.einsum("bij,bj->bi", limit_sde.diffusion(x, t), dW_chunk[:, j])
            k += 1
            if k % rec == 0:
                slow[:, k // rec] = x
    return Trajectory(t_grid, slow, None, ens.path_indices)


@dataclass(frozen=True)
class ErrorEstimate:
    mean: float
    std_error: float
    n_paths: int
    n_excluded: int = 0


def mean_and_se(values: np.ndarray) -> tuple[float, float]:
    """Compensated-sum mean and standard error of a 1-D sample."""
    v = np.asarray(values, dtype=float)
    n = v.size
    mean = math.fsum(v.tolist()) / n
    if n < 2:
        return mean, float("nan")
    var = math.fsum(((v - mean) ** 2).tolist()) / (n - 1)
    return mean, math.sqrt(var / n)


def strong_error(full: Trajectory, reduced: Trajectory, s: float, min_paths: int = 2) -> ErrorEstimate:
    """Monte Carlo estimate of ``E|x_full(s) - x_reduced(s)|^2`` with its standard error."""
    if tuple(full.path_indices) != tuple(reduced.path_indices):
        raise GridMismatch("trajectories were not driven by the same paths")
    kf, kr = full.index_of(s), reduced.index_of(s)
    if abs(full.t_grid[kf] - reduced.t_grid[kr]) > 1e-9 * max(1.0, s):
        raise GridMismatch("trajectories have different grids at s")
    ok = ~(full.aborted | reduced.aborted)
    if np.count_nonzero(ok) < min_paths:
        raise InsufficientPaths("not enough non-aborted paths for an error estimate")
    d = full.slow[ok, kf] - reduced.slow[ok, kr]
    mean, se = mean_and_se(np.sum(d * d, axis=-1))
    return ErrorEstimate(mean, se, int(np.count_nonzero(ok)), int(np.count_nonzero(~ok)))
