"""The fast-slow Ito system and checks of the averaging theorem's hypotheses.

The system is::

    eps dy = (-A(x,t) y + F(x,t)) dt + B(x,t) dw
        dx = ( C(x,t) y + Q(x,t)) dt + P(x,t) dw

with ``y`` fast (dimension n), ``x`` slow (dimension n_slow) and a single
m-dimensional Wiener process ``w`` driving both lines.

Coefficient callables take ``(x, t)`` with ``x`` of shape ``(batch, n_slow)``
and return arrays broadcastable to ``(batch, ...)``.  Use
:meth:`FastSlowSystem.from_pointwise` to adapt functions written for a single
point.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainMismatch, StabilityViolation
from .fields import Box, ScalarField

__all__ = [
    "FastSlowSystem",
    "Coefficients",
    "make_brownian_system",
    "verify_stability",
    "check_regularity",
    "RegularityWarning",
]

Coefficient = Callable[[np.ndarray, float], np.ndarray]


class RegularityWarning(UserWarning):
    """Advisory: a sampled Lipschitz/boundedness check looks suspicious."""


class Coefficients(NamedTuple):
    A: np.ndarray  # (batch, n, n)
    F: np.ndarray  # (batch, n)
    B: np.ndarray  # (batch, n, m)
    C: np.ndarray  # (batch, n_slow, n)
    Q: np.ndarray  # (batch, n_slow)
    P: np.ndarray  # (batch, n_slow, m)


class _ConstantCoefficient:
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def __call__(self, x, t):
        return self.value


class _PointwiseCoefficient:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, x, t):
        return np.stack([np.asarray(self.fn(xi, t), dtype=float) for xi in x])


class _ScaledIdentity:
    """``field(x) * I_k`` for each point of the batch."""

    def __init__(self, field: ScalarField, k: int):
        self.field = field
        self.k = k

    def __call__(self, x, t):
        return self.field.value(x)[:, None, None] * np.eye(self.k)


class _ScaledIdentityGradient:
    """Stacked ``d/dx_j (field(x) I_k)``, shape ``(batch, n_slow, k, k)``."""

    def __init__(self, field: ScalarField, k: int):
        self.field = field
        self.k = k

    def __call__(self, x, t):
        return self.field.gradient(x)[:, :, None, None] * np.eye(self.k)


class _ScalarOf:
    def __init__(self, field: ScalarField):
        self.field = field

    def __call__(self, x, t):
        return self.field.value(x)


@dataclass(frozen=True)
class FastSlowSystem:
    n: int
    n_slow: int
    m_noise: int
    eps: float
    A: Coefficient
    F: Coefficient
    B: Coefficient
    C: Coefficient
    Q: Coefficient
    P: Coefficient
    # Optional analytic derivatives, each stacked over slow coordinates j:
    # dA(x,t)[b, j] = dA/dx_j with shape (n, n); dC likewise (n_slow, n).
    dA: Coefficient | None = None
    dC: Coefficient | None = None
    # Fast path when A = a(x) I and B = b(x) I (n == m): the two scalar callables.
    isotropic: tuple[Coefficient, Coefficient] | None = None
    label: str = "custom"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if min(self.n, self.n_slow, self.m_noise) < 1:
            raise ValueError("dimensions must be positive")

    @classmethod
    def constant(cls, A, F, B, C, Q, P, eps: float) -> FastSlowSystem:
        A, F, B, C, Q, P = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (A, F, B, C, Q, P))
        A, B, C, P = (np.atleast_2d(v) for v in (A, B, C, P))
        n, m = B.shape
        n_slow = C.shape[0]
        zeros_a = np.zeros((n_slow, n, n))
        zeros_c = np.zeros((n_slow, n_slow, n))
        wrap = _ConstantCoefficient
        return cls(
            n, n_slow, m, float(eps),
            wrap(A), wrap(F), wrap(B), wrap(C), wrap(Q), wrap(P),
            dA=wrap(zeros_a), dC=wrap(zeros_c), label="constant",
        )

    @classmethod
    def from_pointwise(cls, n, n_slow, m_noise, eps, A, F, B, C, Q, P, dA=None, dC=None) -> FastSlowSystem:
        """Build from callables that take a single point ``x`` of shape ``(n_slow,)``."""
        wrap = _PointwiseCoefficient
        return cls(
            n, n_slow, m_noise, float(eps),
            wrap(A), wrap(F), wrap(B), wrap(C), wrap(Q), wrap(P),
            dA=None if dA is None else wrap(dA),
            dC=None if dC is None else wrap(dC),
        )

    def with_eps(self, eps: float) -> FastSlowSystem:
        return dataclasses.replace(self, eps=float(eps))

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[-1] != self.n_slow:
            raise DomainMismatch(f"expected slow points of dimension {self.n_slow}, got shape {x.shape}")
        return x, single

    def coefficients(self, x, t: float = 0.0, names: tuple[str, ...] | None = None) -> Coefficients:
        """Evaluate the coefficients on a batch of slow states, shape-normalized.

        ``names`` restricts evaluation to a subset; the others are ``None``.
        """
        x, _ = self._as_batch(x)
        b = x.shape[0]
        n, ns, m = self.n, self.n_slow, self.m_noise
        shapes = {"A": (n, n), "F": (n,), "B": (n, m), "C": (ns, n), "Q": (ns,), "P": (ns, m)}
        out = dict.fromkeys(shapes)
        for name in names or shapes:
            val = np.asarray(getattr(self, name)(x, t), dtype=float)
            out[name] = np.broadcast_to(val, (b,) + shapes[name])
        return Coefficients(**out)

    def derivative_of(self, name: str, x, t: float = 0.0) -> np.ndarray | None:
        fn = self.dA if name == "A" else self.dC
        if fn is None:
            return None
        x, _ = self._as_batch(x)
        shape = (self.n_slow, self.n, self.n) if name == "A" else (self.n_slow, self.n_slow, self.n)
        return np.broadcast_to(np.asarray(fn(x, t), dtype=float), (x.shape[0],) + shape)


def make_brownian_system(eta: ScalarField, sigma: ScalarField, eps: float, dim: int = 3) -> FastSlowSystem:
    """Dimensionless Brownian particle: ``eps du = -eta(y) u ds + sigma(y) dw``, ``dy = u ds``."""
    for name, f in (("eta", eta), ("sigma", sigma)):
        if f.dim is not None and f.dim != dim:
            raise DomainMismatch(f"{name} field is {f.dim}-dimensional but the system is {dim}-dimensional")
    zero_vec = _ConstantCoefficient(np.zeros(dim))
    eye = _ConstantCoefficient(np.eye(dim))
    return FastSlowSystem(
        n=dim,
        n_slow=dim,
        m_noise=dim,
        eps=float(eps),
        A=_ScaledIdentity(eta, dim),
        F=zero_vec,
        B=_ScaledIdentity(sigma, dim),
        C=eye,
        Q=zero_vec,
        P=_ConstantCoefficient(np.zeros((dim, dim))),
        dA=_ScaledIdentityGradient(eta, dim) if eta.has_derivatives else None,
        dC=_ConstantCoefficient(np.zeros((dim, dim, dim))),
        isotropic=(_ScalarOf(eta), _ScalarOf(sigma)),
        label="brownian",
    )


def _sample_points(box: Box, grid_density: int, n_slow: int) -> np.ndarray:
    if box.dim != n_slow:
        raise DomainMismatch(f"domain box is {box.dim}-dimensional, system slow dimension is {n_slow}")
    return box.grid(grid_density)


def verify_stability(system: FastSlowSystem, domain_box: Box, grid_density: int = 9, times=(0.0,)) -> float:
    """Smallest eigenvalue of ``(A + A^T)/2`` over the sampled grid (the gamma of condition 2).

    Raises :class:`StabilityViolation` if it is not positive anywhere.
    """
    pts = _sample_points(domain_box, grid_density, system.n_slow)
    gamma = np.inf
    for t in times:
        A = system.coefficients(pts, t).A
        eig = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))[:, 0]
        k = int(np.argmin(eig))
        if eig[k] <= 0.0:
            raise StabilityViolation(
                f"symmetric part of A has eigenvalue {eig[k]:.3g} <= 0 at x={pts[k].tolist()}, t={t}"
            )
        gamma = min(gamma, float(eig[k]))
    return gamma


def check_regularity(system: FastSlowSystem, domain_box: Box, grid_density: int = 9, t: float = 0.0,
                     lipschitz_limit: float = 1e8) -> dict:
    """Sampled sup-norms and Lipschitz estimates for Q, F, B (advisory only).

    Emits :class:`RegularityWarning` instead of raising.
    """
    pts = _sample_points(domain_box, grid_density, system.n_slow)
    coeffs = system.coefficients(pts, t)
    spacing = float(np.min(domain_box.widths)) / (grid_density - 1)
    report = {}
    shape = (grid_density,) * system.n_slow
    for name in ("Q", "F", "B"):
        vals = getattr(coeffs, name).reshape(shape + (-1,))
        sup = float(np.max(np.abs(vals)))
        lip = 0.0
        for ax in range(system.n_slow):
            diff = np.diff(vals, axis=ax)
            if diff.size:
                lip = max(lip, float(np.max(np.linalg.norm(diff, axis=-1))) / spacing)
        report[name] = {"sup": sup, "lipschitz_estimate": lip}
        if not np.isfinite(sup) or not np.isfinite(lip):
            warnings.warn(f"{name} is not finite on the sampled grid", RegularityWarning, stacklevel=2)
        elif lip > lipschitz_limit:
            warnings.warn(f"{name} looks non-Lipschitz (estimate {lip:.3g})", RegularityWarning, stacklevel=2)
    return report
