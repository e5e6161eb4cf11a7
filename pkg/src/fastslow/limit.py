"""Coefficients of the reduced (diffusion-approximation) SDE ``dx = q0 dt + C0 dw``.

With ``S`` the stationary Lyapunov solution of ``A S + S A^T = B B^T`` (the
integral of ``exp(-lA) B B^T exp(-lA^T)`` over ``l >= 0``)::

    C0   = C A^-1 B + P
    q0_i = (C A^-1 F)_i + Q_i
           + sum_{j,l} (P B^T)_{j l} d_j (C A^-1)_{i l}
           + sum_{j,l} d_j (C A^-1)_{i l} (S C^T)_{l j}

The third term is the Ito cross-variation of ``C A^-1`` with the fast noise;
the fourth is the averaged ``eps y y^T`` contribution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import GradientUnavailable, SingularA, SolveFailure, UnstableA
from .system import FastSlowSystem

__all__ = [
    "LyapunovSolution",
    "LimitSde",
    "solve_stationary_lyapunov",
    "lyapunov_batch",
    "limit_diffusion",
    "limit_drift",
    "reduce_system",
    "COND_LIMIT",
]

COND_LIMIT = 1e12


@dataclass(frozen=True)
class LyapunovSolution:
    S: np.ndarray
    residual_norm: float


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def solve_stationary_lyapunov(A, B) -> LyapunovSolution:
    """Solve ``A S + S A^T = B B^T`` for a matrix ``A`` with positive-definite symmetric part."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise ValueError(f"incompatible shapes A{A.shape}, B{B.shape}")
    gamma = np.linalg.eigvalsh(_sym(A))[0]
    if gamma <= 0:
        raise UnstableA(f"symmetric part of A has eigenvalue {gamma:.3g} <= 0; the integral diverges")
    if np.linalg.cond(A) > COND_LIMIT:
        raise SolveFailure("A is too ill-conditioned for a reliable Lyapunov solve")
    Q = B @ B.T
    S = _sym(scipy.linalg.solve_continuous_lyapunov(A, Q))
    R = A @ S + S @ A.T - Q
    scale = 1.0 + np.linalg.norm(Q)
    if np.linalg.norm(R) > 1e-12 * scale:
        # one refinement sweep on the residual equation
        S = _sym(S - scipy.linalg.solve_continuous_lyapunov(A, R))
        R = A @ S + S @ A.T - Q
    res = float(np.linalg.norm(R))
    if res > 1e-10 * scale:
        raise SolveFailure(f"Lyapunov residual {res:.3g} exceeds tolerance")
    return LyapunovSolution(S, res)


def lyapunov_batch(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Batched ``A S + S A^T = Q`` via the Kronecker system; fine for small n."""
    b, n, _ = A.shape
    eye = np.eye(n)
    K = np.einsum("bik,jl->bijkl", A, eye) + np.einsum("ik,bjl->bijkl", eye, A)
    vec = np.linalg.solve(K.reshape(b, n * n, n * n), Q.reshape(b, n * n, 1))
    return _sym(vec.reshape(b, n, n))


def _checked_inverse(A: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(A)
    bad = ~(cond <= COND_LIMIT)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise SingularA(f"A is singular or ill-conditioned (cond={cond[k]:.3g})")
    return np.linalg.inv(A)


def limit_diffusion(system: FastSlowSystem, x, t: float = 0.0) -> np.ndarray:
    """``C A^-1 B + P`` at one point ``(n_slow,)`` or a batch ``(b, n_slow)``."""
    xb, single = system._as_batch(x)
    co = system.coefficients(xb, t)
    out = co.C @ _checked_inverse(co.A) @ co.B + co.P
    return out[0] if single else out


def _stationary_covariance(system: FastSlowSystem, xb, t, co) -> np.ndarray:
    if system.isotropic is not None:
        a = np.asarray(system.isotropic[0](xb, t), dtype=float)
        b = np.asarray(system.isotropic[1](xb, t), dtype=float)
        if np.any(a <= 0):
            raise UnstableA("fast relaxation rate is not positive")
        return (b**2 / (2.0 * a))[:, None, None] * np.eye(system.n)
    eig = np.linalg.eigvalsh(_sym(co.A))[:, 0]
    if np.any(eig <= 0):
        raise UnstableA("symmetric part of A is not positive definite at an evaluation point")
    return lyapunov_batch(np.ascontiguousarray(co.A), co.B @ np.swapaxes(co.B, -1, -2))


def _ca_inv_gradient(system: FastSlowSystem, xb, t, co, Ainv, mode: str, h) -> np.ndarray:
    """Stacked ``d_j (C A^-1)``, shape ``(b, n_slow_j, n_slow_i, n)``."""
    if mode == "analytic":
        dA = system.derivative_of("A", xb, t)
        dC = system.derivative_of("C", xb, t)
        if dA is None or dC is None:
            raise GradientUnavailable("system has no analytic derivatives of A and C; use gradient_mode='fd'")
        CAinv = co.C @ Ainv
        # d(C A^-1) = dC A^-1 - C A^-1 dA A^-1
        return dC @ Ainv[:, None] - CAinv[:, None] @ dA @ Ainv[:, None]
    if mode != "fd":
        raise ValueError(f"unknown gradient_mode {mode!r}")
    ns = system.n_slow
    if h is None:
        steps = np.finfo(float).eps ** (1.0 / 3.0) * (1.0 + np.abs(xb))
    else:
        steps = np.broadcast_to(np.asarray(h, dtype=float), xb.shape)
    out = np.empty((xb.shape[0], ns, ns, system.n))
    for j in range(ns):
        e = np.zeros(ns)
        e[j] = 1.0
        hj = steps[:, j:j + 1]
        cp = system.coefficients(xb + hj * e, t)
        cm = system.coefficients(xb - hj * e, t)
        fp = cp.C @ _checked_inverse(cp.A)
        fm = cm.C @ _checked_inverse(cm.A)
        out[:, j] = (fp - fm) / (2.0 * hj[:, :, None])
    return out


def limit_drift(system: FastSlowSystem, x, t: float = 0.0, gradient_mode: str = "analytic", h=None) -> np.ndarray:
    """Reduced drift ``q0`` at one point or a batch of points.

    ``gradient_mode='analytic'`` uses the system's ``dA``/``dC``; ``'fd'`` uses
    central differences with per-axis step ``h`` (default
    ``eps_mach**(1/3) * (1 + |x|)``).
    """
    xb, single = system._as_batch(x)
    co = system.coefficients(xb, t)
    Ainv = _checked_inverse(co.A)
    CAinv = co.C @ Ainv
    q = np.einsum("bil,bl->bi", CAinv, co.F) + co.Q
    dCA = _ca_inv_gradient(system, xb, t, co, Ainv, gradient_mode, h)
    PBt = co.P @ np.swapaxes(co.B, -1, -2)  # (b, n_slow_j, n_l)
    q = q + np.einsum("bjl,bjil->bi", PBt, dCA)
    S = _stationary_covariance(system, xb, t, co)
    SCt = S @ np.swapaxes(co.C, -1, -2)  # (b, n_l, n_slow_j)
    q = q + np.einsum("bjil,blj->bi", dCA, SCt)
    return q[0] if single else q


@dataclass(frozen=True, eq=False)
class LimitSde:
    """Reduced SDE with batched drift ``(b, dim)`` and diffusion ``(b, dim, m)`` callables."""

    dim: int
    m_noise: int
    drift_fn: Callable[[np.ndarray, float], np.ndarray]
    diffusion_fn: Callable[[np.ndarray, float], np.ndarray]
    label: str = "custom"

    def _batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        return np.atleast_2d(x), single

    def drift(self, x, t: float = 0.0) -> np.ndarray:
        xb, single = self._batch(x)
        q = np.broadcast_to(np.asarray(self.drift_fn(xb, t), dtype=float), (xb.shape[0], self.dim))
        return q[0] if single else q

    def diffusion(self, x, t: float = 0.0) -> np.ndarray:
        xb, single = self._batch(x)
        c = np.broadcast_to(
            np.asarray(self.diffusion_fn(xb, t), dtype=float), (xb.shape[0], self.dim, self.m_noise)
        )
        return c[0] if single else c

    def generator_diffusion(self, x, t: float = 0.0) -> np.ndarray:
        """``C0 C0^T / 2``, the second-order coefficient of the forward equation."""
        c = self.diffusion(x, t)
        return 0.5 * c @ np.swapaxes(c, -1, -2)


class _SystemDrift:
    def __init__(self, system, gradient_mode):
        self.system = system
        self.gradient_mode = gradient_mode

    def __call__(self, x, t):
        return limit_drift(self.system, x, t, self.gradient_mode)


class _SystemDiffusion:
    def __init__(self, system):
        self.system = system

    def __call__(self, x, t):
        return limit_diffusion(self.system, x, t)


def reduce_system(system: FastSlowSystem, gradient_mode: str = "analytic") -> LimitSde:
    """Package ``q0`` and ``C0`` of ``system`` as a :class:`LimitSde` (independent of eps)."""
    return LimitSde(
        system.n_slow,
        system.m_noise,
        _SystemDrift(system, gradient_mode),
        _SystemDiffusion(system),
        label=f"reduced-{system.label}",
    )
