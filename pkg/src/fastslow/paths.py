"""Reproducible Wiener paths and simulated trajectories.

Every path owns independent random streams derived from ``(seed, path_index,
stream)`` through :class:`numpy.random.SeedSequence` spawn keys, so a path is
bit-identical no matter which batch or worker produces it:

* stream 0: Wiener increments on the path's time grid;
* stream 1: auxiliary standard normals consumed by exact OU steps;
* stream 2: normals used to draw initial conditions.

Draws from one stream are sequential, so generating a path in chunks gives the
same numbers as generating it at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import GridMismatch, InvalidGrid

__all__ = [
    "WienerPath",
    "PathEnsemble",
    "Trajectory",
    "sample_wiener",
    "sample_ensemble",
    "uniform_grid",
    "path_generator",
]

STREAM_WIENER = 0
STREAM_AUX = 1
STREAM_INIT = 2


def path_generator(seed: int, path_index: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def uniform_grid(t_end: float, steps: int) -> np.ndarray:
    if steps < 1 or not t_end > 0:
        raise InvalidGrid("need a positive horizon and at least one step")
    return np.linspace(0.0, float(t_end), int(steps) + 1)


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise InvalidGrid("time grid needs at least two points")
    if t[0] != 0.0:
        raise InvalidGrid("time grid must start at 0")
    if np.any(np.diff(t) <= 0):
        raise InvalidGrid("time grid must be strictly increasing")
    return t


def _uniform_step(t: np.ndarray) -> float:
    dt = np.diff(t)
    h = float(dt.mean())
    if np.max(np.abs(dt - h)) > 1e-9 * h:
        raise GridMismatch("integrators need a uniform path grid")
    return h


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Wiener paths for a set of path indices on one shared time grid."""

    t_grid: np.ndarray
    m_noise: int
    seed: int
    path_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "t_grid", _check_grid(self.t_grid))
        object.__setattr__(self, "path_indices", tuple(int(i) for i in self.path_indices))
        if self.m_noise < 1:
            raise InvalidGrid("m_noise must be at least 1")
        if len(set(self.path_indices)) != len(self.path_indices):
            raise InvalidGrid("path indices must be distinct")

    @property
    def n_paths(self) -> int:
        return len(self.path_indices)

    @property
    def steps(self) -> int:
        return self.t_grid.size - 1

    @property
    def step(self) -> float:
        """Uniform grid spacing (raises GridMismatch for non-uniform grids)."""
        return _uniform_step(self.t_grid)

    def path(self, k: int) -> WienerPath:
        return WienerPath(self.t_grid, self.m_noise, self.seed, self.path_indices[k])

    def subset(self, indices: Sequence[int]) -> PathEnsemble:
        return PathEnsemble(self.t_grid, self.m_noise, self.seed, tuple(indices))

    def _generators(self, stream: int) -> list[np.random.Generator]:
        return [path_generator(self.seed, i, stream) for i in self.path_indices]

    def increment_chunks(self, stride: int, chunk_steps: int) -> Iterator[np.ndarray]:
        """Yield Wiener increments aggregated over ``stride`` grid steps.

        Each chunk has shape ``(n_paths, c, m_noise)`` with ``c <= chunk_steps``
        aggregated steps; iteration stops at the end of the grid.
        """
        if self.steps % stride:
            raise GridMismatch(f"path has {self.steps} steps, not a multiple of stride {stride}")
        gens = self._generators(STREAM_WIENER)
        sqrt_dt = np.sqrt(np.diff(self.t_grid))
        total = self.steps // stride
        done = 0
        while done < total:
            c = min(chunk_steps, total - done)
            lo, hi = done * stride, (done + c) * stride
            z = np.stack([g.standard_normal((hi - lo, self.m_noise)) for g in gens])
            z *= sqrt_dt[lo:hi, None]
            if stride > 1:
                z = z.reshape(self.n_paths, c, stride, self.m_noise).sum(axis=2)
            yield z
            done += c

    def aux_normals(self, dim: int):
        """Return a callable drawing ``(n_paths, count, dim)`` auxiliary normals sequentially."""
        gens = self._generators(STREAM_AUX)

        def draw(count: int) -> np.ndarray:
            return np.stack([g.standard_normal((count, dim)) for g in gens])

        return draw

    def initial_normals(self, dim: int) -> np.ndarray:
        """Standard normals ``(n_paths, dim)`` reserved for initial conditions."""
        return np.stack([g.standard_normal(dim) for g in self._generators(STREAM_INIT)])

    @property
    def increments(self) -> np.ndarray:
        """All increments at once, shape ``(n_paths, steps, m_noise)``."""
        return next(self.increment_chunks(1, self.steps))


@dataclass(frozen=True, eq=False)
class WienerPath:
    t_grid: np.ndarray
    m_noise: int
    seed: int
    path_index: int

    def __post_init__(self):
        object.__setattr__(self, "t_grid", _check_grid(self.t_grid))

    def as_ensemble(self) -> PathEnsemble:
        return PathEnsemble(self.t_grid, self.m_noise, self.seed, (self.path_index,))

    @cached_property
    def increments(self) -> np.ndarray:
        """Shape ``(steps, m_noise)``; component variance equals the step length."""
        inc = self.as_ensemble().increments[0]
        inc.setflags(write=False)
        return inc

    @property
    def values(self) -> np.ndarray:
        """w(t) on the grid, starting at 0."""
        return np.vstack([np.zeros(self.m_noise), np.cumsum(self.increments, axis=0)])


def sample_wiener(seed: int, path_index: int, t_grid, m_noise: int) -> WienerPath:
    return WienerPath(np.asarray(t_grid, dtype=float), int(m_noise), int(seed), int(path_index))


def sample_ensemble(seed: int, paths: int | Sequence[int], t_grid, m_noise: int) -> PathEnsemble:
    indices = range(paths) if isinstance(paths, (int, np.integer)) else paths
    return PathEnsemble(np.asarray(t_grid, dtype=float), int(m_noise), int(seed), tuple(indices))


def as_ensemble(path: WienerPath | PathEnsemble) -> PathEnsemble:
    return path.as_ensemble() if isinstance(path, WienerPath) else path


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded states of a batch of paths on a common time grid.

    ``slow`` has shape ``(n_paths, T, n_slow)``; ``fast`` is ``(n_paths, T, n)``
    or ``None`` for reduced simulations.  Aborted paths (overflow guard) keep
    NaN after the abort and are flagged in ``aborted``.
    """

    t_grid: np.ndarray
    slow: np.ndarray
    fast: np.ndarray | None
    path_indices: tuple[int, ...]
    aborted: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.path_indices)
        if self.aborted is None:
            object.__setattr__(self, "aborted", np.zeros(n, dtype=bool))
        if self.slow.shape[:2] != (n, self.t_grid.size):
            raise GridMismatch("slow states do not match the time grid / path count")
        if self.fast is not None and self.fast.shape[:2] != (n, self.t_grid.size):
            raise GridMismatch("fast states do not match the time grid / path count")
        ok = ~self.aborted
        if not np.all(np.isfinite(self.slow[ok])):
            raise ValueError("non-finite slow state in a non-aborted path")

    @property
    def n_paths(self) -> int:
        return len(self.path_indices)

    @property
    def n_aborted(self) -> int:
        return int(np.count_nonzero(self.aborted))

    def index_of(self, s: float, rtol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.t_grid - s)))
        if abs(self.t_grid[k] - s) > rtol * max(1.0, abs(s)) + 1e-12 * self.t_grid[-1]:
            raise GridMismatch(f"time {s} is not on the trajectory grid")
        return k

    def slow_at(self, s: float) -> np.ndarray:
        return self.slow[:, self.index_of(s)]

    def fast_at(self, s: float) -> np.ndarray:
        if self.fast is None:
            raise ValueError("trajectory has no fast components")
        return self.fast[:, self.index_of(s)]
