"""Smooth scalar fields with analytic derivatives, and axis-aligned domain boxes.

Fields are evaluated on arrays of points with shape ``(..., d)``; values come
back with shape ``(...)``, gradients ``(..., d)`` and Hessians ``(..., d, d)``.
The named families (constant, gaussian-bump, smooth-ramp, product) are the ones
a run configuration can describe.  :class:`CallableField` is the extension
point for arbitrary user functions.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigInvalid, FieldError, GradientUnavailable

__all__ = [
    "Box",
    "ScalarField",
    "Constant",
    "GaussianBump",
    "SmoothRamp",
    "Product",
    "Power",
    "Rescaled",
    "CallableField",
    "field_from_spec",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower, upper]`` in ``d`` dimensions."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise ConfigInvalid("box bounds must be non-empty and of equal length")
        if any(not (h > l) for l, h in zip(lo, hi)):
            raise ConfigInvalid(f"degenerate box: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, half_width: float, dim: int = 3) -> Box:
        return cls((-half_width,) * dim, (half_width,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def axes(self, density: int) -> list[np.ndarray]:
        if density < 2:
            raise ConfigInvalid("grid density must be at least 2 per axis")
        return [np.linspace(l, h, density) for l, h in zip(self.lower, self.upper)]

    def grid(self, density: int) -> np.ndarray:
        """Tensor grid of ``density**dim`` points, shape ``(N, dim)``."""
        mesh = np.meshgrid(*self.axes(density), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, y: np.ndarray, atol: float = 0.0) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.all((y >= np.asarray(self.lower) - atol) & (y <= np.asarray(self.upper) + atol), axis=-1)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


def _points(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = y[None]
    return y


class ScalarField:
    """Base class; subclasses implement ``value``, ``gradient`` and ``hessian``."""

    kind: str = "abstract"
    dim: int | None = None

    def __call__(self, y) -> np.ndarray:
        return self.value(y)

    def value(self, y) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, y) -> np.ndarray:
        raise GradientUnavailable(f"{self.kind} field has no analytic gradient")

    def hessian(self, y) -> np.ndarray:
        raise GradientUnavailable(f"{self.kind} field has no analytic Hessian")

    @property
    def has_derivatives(self) -> bool:
        return True

    @property
    def is_constant(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise ConfigInvalid(f"{self.kind} field cannot be serialized")

    def extrema(self, box: Box, density: int = 33) -> tuple[float, float]:
        """Grid minimum and maximum over ``box``."""
        vals = self.value(box.grid(density))
        return float(np.min(vals)), float(np.max(vals))

    def check_positive(self, box: Box, density: int = 33) -> float:
        lo, _ = self.extrema(box, density)
        if not lo > 0.0 or not np.isfinite(lo):
            raise FieldError(f"{self.kind} field is not strictly positive on the box (min {lo:g})")
        return lo

    # composition helpers
    def __mul__(self, other: ScalarField | float) -> ScalarField:
        if not isinstance(other, ScalarField):
            other = Constant(float(other))
        return Product((self, other))

    __rmul__ = __mul__

    def power(self, p: float, coeff: float = 1.0) -> ScalarField:
        return Power(self, p, coeff)


@dataclass(frozen=True, eq=False)
class Constant(ScalarField):
    c: float
    kind = "constant"
    dim = None

    def value(self, y):
        y = _points(y)
        return np.full(y.shape[:-1], float(self.c))

    def gradient(self, y):
        return np.zeros_like(_points(y))

    def hessian(self, y):
        y = _points(y)
        return np.zeros(y.shape + (y.shape[-1],))

    @property
    def is_constant(self) -> bool:
        return True

    def to_dict(self):
        return {"kind": "constant", "value": float(self.c)}


@dataclass(frozen=True, eq=False)
class GaussianBump(ScalarField):
    """``base + amplitude * exp(-|y - center|^2 / (2 width^2))``.

    A negative amplitude gives a dip with floor ``base + amplitude``.
    """

    base: float
    amplitude: float
    center: tuple[float, ...]
    width: float
    kind = "gaussian-bump"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        if not self.width > 0:
            raise FieldError("gaussian-bump width must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    def _core(self, y):
        d = _points(y) - np.asarray(self.center)
        g = np.exp(-np.sum(d * d, axis=-1) / (2.0 * self.width**2))
        return d, g

    def value(self, y):
        _, g = self._core(y)
        return self.base + self.amplitude * g

    def gradient(self, y):
        d, g = self._core(y)
        return -(self.amplitude * g / self.width**2)[..., None] * d

    def hessian(self, y):
        d, g = self._core(y)
        w2 = self.width**2
        eye = np.eye(d.shape[-1])
        outer = d[..., :, None] * d[..., None, :] / w2**2
        return (self.amplitude * g)[..., None, None] * (outer - eye / w2)

    def to_dict(self):
        return {
            "kind": "gaussian-bump",
            "base": self.base,
            "amplitude": self.amplitude,
            "center": list(self.center),
            "width": self.width,
        }


@dataclass(frozen=True, eq=False)
class SmoothRamp(ScalarField):
    """``base + amplitude * tanh((direction . y - offset) / width)``."""

    base: float
    amplitude: float
    direction: tuple[float, ...]
    offset: float = 0.0
    width: float = 1.0
    kind = "smooth-ramp"

    def __post_init__(self):
        object.__setattr__(self, "direction", tuple(float(v) for v in np.atleast_1d(self.direction)))
        if not self.width > 0:
            raise FieldError("smooth-ramp width must be positive")

    @property
    def dim(self) -> int:
        return len(self.direction)

    def _z(self, y):
        return (_points(y) @ np.asarray(self.direction) - self.offset) / self.width

    def value(self, y):
        return self.base + self.amplitude * np.tanh(self._z(y))

    def gradient(self, y):
        th = np.tanh(self._z(y))
        return (self.amplitude * (1.0 - th**2) / self.width)[..., None] * np.asarray(self.direction)

    def hessian(self, y):
        th = np.tanh(self._z(y))
        a = np.asarray(self.direction)
        coeff = -2.0 * self.amplitude * th * (1.0 - th**2) / self.width**2
        return coeff[..., None, None] * np.outer(a, a)

    def to_dict(self):
        return {
            "kind": "smooth-ramp",
            "base": self.base,
            "amplitude": self.amplitude,
            "direction": list(self.direction),
            "offset": self.offset,
            "width": self.width,
        }


@dataclass(frozen=True, eq=False)
class Product(ScalarField):
    factors: tuple[ScalarField, ...]
    kind = "product"

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        dims = {f.dim for f in self.factors if f.dim is not None}
        if len(dims) > 1:
            raise FieldError(f"product factors have incompatible dimensions {sorted(dims)}")
        if not self.factors:
            raise FieldError("product needs at least one factor")

    @property
    def dim(self) -> int | None:
        dims = [f.dim for f in self.factors if f.dim is not None]
        return dims[0] if dims else None

    @property
    def is_constant(self) -> bool:
        return all(f.is_constant for f in self.factors)

    @property
    def has_derivatives(self) -> bool:
        return all(f.has_derivatives for f in self.factors)

    def value(self, y):
        out = self.factors[0].value(y)
        for f in self.factors[1:]:
            out = out * f.value(y)
        return out

    def _fold(self, y, want_hessian: bool):
        f0 = self.factors[0]
        v, g = f0.value(y), f0.gradient(y)
        h = f0.hessian(y) if want_hessian else None
        for f in self.factors[1:]:
            v2, g2 = f.value(y), f.gradient(y)
            if want_hessian:
                h2 = f.hessian(y)
                h = (
                    h * v2[..., None, None]
                    + v[..., None, None] * h2
                    + g[..., :, None] * g2[..., None, :]
                    + g2[..., :, None] * g[..., None, :]
                )
            g = g * v2[..., None] + v[..., None] * g2
            v = v * v2
        return v, g, h

    def gradient(self, y):
        return self._fold(y, False)[1]

    def hessian(self, y):
        return self._fold(y, True)[2]

    def to_dict(self):
        return {"kind": "product", "factors": [f.to_dict() for f in self.factors]}


@dataclass(frozen=True, eq=False)
class Power(ScalarField):
    """``coeff * base(y) ** p``; ``base`` must stay positive."""

    base: ScalarField
    p: float
    coeff: float = 1.0
    kind = "power"

    @property
    def dim(self):
        return self.base.dim

    @property
    def is_constant(self) -> bool:
        return self.base.is_constant

    @property
    def has_derivatives(self) -> bool:
        return self.base.has_derivatives

    def value(self, y):
        return self.coeff * self.base.value(y) ** self.p

    def gradient(self, y):
        b = self.base.value(y)
        return (self.coeff * self.p * b ** (self.p - 1.0))[..., None] * self.base.gradient(y)

    def hessian(self, y):
        b = self.base.value(y)
        gb = self.base.gradient(y)
        c1 = self.coeff * self.p * b ** (self.p - 1.0)
        c2 = self.coeff * self.p * (self.p - 1.0) * b ** (self.p - 2.0)
        return c2[..., None, None] * gb[..., :, None] * gb[..., None, :] + c1[..., None, None] * self.base.hessian(y)

    def to_dict(self):
        return {"kind": "power", "base": self.base.to_dict(), "p": self.p, "coeff": self.coeff}


@dataclass(frozen=True, eq=False)
class Rescaled(ScalarField):
    """``value_scale * base(arg_scale * y)``; used to move between physical and dimensionless coordinates."""

    base: ScalarField
    value_scale: float = 1.0
    arg_scale: float = 1.0
    kind = "rescaled"

    @property
    def dim(self):
        return self.base.dim

    @property
    def is_constant(self) -> bool:
        return self.base.is_constant

    @property
    def has_derivatives(self) -> bool:
        return self.base.has_derivatives

    def value(self, y):
        return self.value_scale * self.base.value(self.arg_scale * _points(y))

    def gradient(self, y):
        return self.value_scale * self.arg_scale * self.base.gradient(self.arg_scale * _points(y))

    def hessian(self, y):
        return self.value_scale * self.arg_scale**2 * self.base.hessian(self.arg_scale * _points(y))

    def to_dict(self):
        return {
            "kind": "rescaled",
            "base": self.base.to_dict(),
            "value_scale": self.value_scale,
            "arg_scale": self.arg_scale,
        }


@dataclass(frozen=True, eq=False)
class CallableField(ScalarField):
    """Wrap user callables. ``fn`` must accept ``(..., d)`` arrays.

    Without ``grad``/``hess`` the field still works wherever derivatives are
    not needed (or where finite differences are requested).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    field_dim: int | None = None
    kind = "callable"

    @property
    def dim(self):
        return self.field_dim

    @property
    def has_derivatives(self) -> bool:
        return self.grad is not None and self.hess is not None

    def value(self, y):
        return np.asarray(self.fn(_points(y)), dtype=float)

    def gradient(self, y):
        if self.grad is None:
            raise GradientUnavailable("callable field was built without a gradient")
        return np.asarray(self.grad(_points(y)), dtype=float)

    def hessian(self, y):
        if self.hess is None:
            raise GradientUnavailable("callable field was built without a Hessian")
        return np.asarray(self.hess(_points(y)), dtype=float)


_FAMILY_KEYS: dict[str, set[str]] = {
    "constant": {"value"},
    "gaussian-bump": {"base", "amplitude", "center", "width"},
    "smooth-ramp": {"base", "amplitude", "direction", "offset", "width"},
    "product": {"factors"},
}


def field_from_spec(spec: Mapping[str, Any] | float | int) -> ScalarField:
    """Build one of the named families from its configuration mapping."""
    if isinstance(spec, (int, float)):
        return Constant(float(spec))
    if not isinstance(spec, Mapping) or "kind" not in spec:
        raise ConfigInvalid(f"field spec must be a mapping with a 'kind' key, got {spec!r}")
    kind = spec["kind"]
    if kind not in _FAMILY_KEYS:
        raise ConfigInvalid(f"unknown field kind {kind!r}; expected one of {sorted(_FAMILY_KEYS)}")
    extra = set(spec) - _FAMILY_KEYS[kind] - {"kind"}
    if extra:
        raise ConfigInvalid(f"unknown keys for {kind} field: {sorted(extra)}")
    try:
        if kind == "constant":
            return Constant(float(spec["value"]))
        if kind == "gaussian-bump":
            return GaussianBump(float(spec["base"]), float(spec["amplitude"]), tuple(spec["center"]), float(spec["width"]))
        if kind == "smooth-ramp":
            return SmoothRamp(
                float(spec["base"]),
                float(spec["amplitude"]),
                tuple(spec["direction"]),
                float(spec.get("offset", 0.0)),
                float(spec.get("width", 1.0)),
            )
        return Product(tuple(field_from_spec(f) for f in spec["factors"]))
    except KeyError as exc:
        raise ConfigInvalid(f"{kind} field is missing key {exc}") from None


def pair_directions(dim: int) -> np.ndarray:
    """Unit directions used for difference-quotient sampling: axes plus diagonals."""
    dirs = [np.eye(dim)[i] for i in range(dim)]
    for signs in itertools.product((1.0, -1.0), repeat=dim - 1):
        if dim > 1:
            dirs.append(np.array((1.0,) + signs) / np.sqrt(dim))
    return np.array(dirs)
