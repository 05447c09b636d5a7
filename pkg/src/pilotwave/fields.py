"""Uniform grids, sampled fields and the differential operators acting on them.

Periodic grids use spectral (FFT) derivatives; dirichlet-zero grids use
second-order central differences with second-order one-sided wall stencils.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

PERIODIC = "periodic"
DIRICHLET = "dirichlet-zero"
BOUNDARIES = (PERIODIC, DIRICHLET)

NODE_THRESHOLD = 1e-12
MIN_POINTS = 8


class GridError(ValueError):
    pass


class FieldError(ValueError):
    pass


@dataclass(frozen=True)
class UnitSystem:
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and self.mass > 0):
            raise ValueError(f"hbar and mass must be positive, got {self.hbar}, {self.mass}")
        if not (np.isfinite(self.hbar) and np.isfinite(self.mass)):
            raise ValueError("hbar and mass must be finite")

    @property
    def k(self) -> float:
        """Inverse action constant in psi = A exp(i k S)."""
        return 1.0 / self.hbar


@dataclass(frozen=True)
class Grid:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]
    boundary: str = PERIODIC

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise GridError(f"unknown boundary {self.boundary!r}; expected one of {BOUNDARIES}")
        if not (len(self.lower) == len(self.upper) == len(self.counts)):
            raise GridError("bounds and counts must have one entry per axis")
        if len(self.counts) not in (1, 2):
            raise GridError(f"only 1D and 2D grids are supported, got ndim={len(self.counts)}")
        for lo, hi, n in zip(self.lower, self.upper, self.counts):
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise GridError(f"non-positive extent [{lo}, {hi}]")
            if n < MIN_POINTS:
                raise GridError(f"count {n} < {MIN_POINTS}")

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    @property
    def spacing(self) -> tuple[float, ...]:
        div = (lambda n: n) if self.periodic else (lambda n: n - 1)
        return tuple((hi - lo) / div(n) for lo, hi, n in zip(self.lower, self.upper, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, i: int) -> np.ndarray:
        """Coordinates lower + j*h, built outward from the midpoint so that grids
        symmetric about the origin are mirror-symmetric bit for bit."""
        lo, hi, n, h = self.lower[i], self.upper[i], self.counts[i], self.spacing[i]
        m = 0.5 * n if self.periodic else 0.5 * (n - 1)
        x = 0.5 * (lo + hi) + (np.arange(n) - m) * h
        x[0] = lo
        if not self.periodic:
            x[-1] = hi
        return x

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(self.axis(i) for i in range(self.ndim))

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def wavenumbers(self, i: int) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.counts[i], d=self.spacing[i])

    def quadrature_weights(self) -> np.ndarray:
        """Per-point weights: Riemann sum (periodic) or trapezoid (dirichlet)."""
        w = np.ones(self.shape)
        for i, h in enumerate(self.spacing):
            wi = np.full(self.counts[i], h)
            if not self.periodic:
                wi[0] = wi[-1] = 0.5 * h
            shape = [1] * self.ndim
            shape[i] = -1
            w = w * wi.reshape(shape)
        return w


def make_grid(bounds: Sequence[Sequence[float]], counts: Union[int, Sequence[int]],
              boundary: str = PERIODIC) -> Grid:
    """Build a uniform grid; ``bounds`` is one (lower, upper) pair per axis and a
    scalar ``counts`` applies to every axis."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    counts = (counts,) * bounds.shape[0] if np.isscalar(counts) else tuple(counts)
    if bounds.shape[1] != 2:
        raise GridError("each axis needs a (lower, upper) pair")
    return Grid(tuple(float(b) for b in bounds[:, 0]), tuple(float(b) for b in bounds[:, 1]),
                tuple(int(n) for n in counts), boundary)


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=self._dtype, copy=True)
        if values.shape != self.grid.shape:
            if values.size != self.grid.size:
                raise FieldError(f"{values.size} samples for a grid of {self.grid.size} points")
            values = values.reshape(self.grid.shape)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    _dtype = float

    def with_values(self, values):
        return type(self)(self.grid, values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


class RealField(Field):
    _dtype = float


class ComplexField(Field):
    _dtype = complex

    def conj(self) -> "ComplexField":
        return ComplexField(self.grid, np.conj(self.values))

    @property
    def density(self) -> RealField:
        return RealField(self.grid, np.abs(self.values) ** 2)


@dataclass(frozen=True, eq=False)
class NodeMask:
    grid: Grid
    values: np.ndarray
    threshold: float = NODE_THRESHOLD

    @classmethod
    def from_density(cls, grid: Grid, density: np.ndarray, threshold: float = NODE_THRESHOLD):
        density = np.asarray(density)
        peak = density.max()
        mask = density < threshold * peak if peak > 0 else np.ones(density.shape, bool)
        return cls(grid, mask, threshold)

    @property
    def any(self) -> bool:
        return bool(self.values.any())


def as_array(f) -> np.ndarray:
    return f.values if isinstance(f, Field) else np.asarray(f)


def _rewrap(f, values):
    if not isinstance(f, Field):
        return values
    return (ComplexField if np.iscomplexobj(values) else RealField)(f.grid, values)


def _check_axis(grid: Grid, axis: int):
    if not 0 <= axis < grid.ndim:
        raise GridError(f"axis {axis} out of range for a {grid.ndim}D grid")


def _shape_along(grid: Grid, axis: int, v: np.ndarray) -> np.ndarray:
    shape = [1] * grid.ndim
    shape[axis] = -1
    return v.reshape(shape)


def grad_values(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    _check_axis(grid, axis)
    h = grid.spacing[axis]
    if grid.periodic:
        n = grid.counts[axis]
        k = grid.wavenumbers(axis)
        if n % 2 == 0:
            k[n // 2] = 0.0
        out = np.fft.ifft(1j * _shape_along(grid, axis, k) * np.fft.fft(values, axis=axis), axis=axis)
        return out if np.iscomplexobj(values) else out.real
    return np.gradient(values, h, axis=axis, edge_order=2)


def second_derivative_values(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    _check_axis(grid, axis)
    if grid.periodic:
        k = _shape_along(grid, axis, grid.wavenumbers(axis))
        out = np.fft.ifft(-(k ** 2) * np.fft.fft(values, axis=axis), axis=axis)
        return out if np.iscomplexobj(values) else out.real
    h2 = grid.spacing[axis] ** 2
    f = np.moveaxis(values, axis, 0)
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h2
    d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2
    d[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h2
    return np.moveaxis(d, 0, axis)


def laplacian_values(values: np.ndarray, grid: Grid) -> np.ndarray:
    return sum(second_derivative_values(values, grid, a) for a in range(grid.ndim))


def gradient(f: Field, axis: int = 0) -> Field:
    """Partial derivative of ``f`` along ``axis``; returns a field of the same kind."""
    return _rewrap(f, grad_values(f.values, f.grid, axis))


def laplacian(f: Field) -> Field:
    return _rewrap(f, laplacian_values(f.values, f.grid))


def integrate_values(values: np.ndarray, grid: Grid, where: np.ndarray | None = None):
    w = grid.quadrature_weights()
    if where is not None:
        w = np.where(where, w, 0.0)
    return np.sum(w * values)


def integrate(f: Field) -> float:
    """Integral over the grid: Riemann sum on periodic grids, trapezoid on dirichlet ones."""
    if isinstance(f, ComplexField):
        raise FieldError("integrate expects a real field")
    return float(integrate_values(f.values, f.grid))


def norm_squared(psi: ComplexField) -> float:
    return float(integrate_values(np.abs(psi.values) ** 2, psi.grid))


def normalize(psi: ComplexField) -> ComplexField:
    n2 = norm_squared(psi)
    if not np.isfinite(n2) or n2 <= 0.0:
        raise FieldError("cannot normalize a zero or non-finite field")
    return ComplexField(psi.grid, psi.values / np.sqrt(n2))


def polar_decompose(psi: ComplexField, units: UnitSystem,
                    threshold: float = NODE_THRESHOLD) -> tuple[RealField, RealField, NodeMask]:
    """Split psi into amplitude A = |psi| and principal-branch phase S = hbar*arg(psi)."""
    values = psi.values
    if not np.all(np.isfinite(values)):
        raise FieldError("psi contains non-finite samples")
    amp = np.abs(values)
    phase = units.hbar * np.angle(values)
    mask = NodeMask.from_density(psi.grid, amp ** 2, threshold)
    return RealField(psi.grid, amp), RealField(psi.grid, phase), mask
