"""Static force-function catalog U(q) sampled on grids, plus analytic
gradients and Hessians for the smooth entries (used by the classical flows)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from pilotwave.fields import DIRICHLET, Grid, RealField, UnitSystem

KINDS = ("free", "harmonic", "inverted-harmonic", "box", "gaussian-barrier", "double-slit", "tabulated")
SMOOTH_KINDS = ("free", "harmonic", "inverted-harmonic", "gaussian-barrier")


class PotentialError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """One catalog entry.

    ``omega`` (harmonic), ``kappa`` (inverted-harmonic), ``height``/``center``/``width``
    (gaussian-barrier), ``height``/``wall``/``thickness``/``slits``/``width`` (double-slit)
    and ``table`` (tabulated) are read according to ``kind``.
    """

    kind: str = "free"
    omega: float = 1.0
    kappa: float = 1.0
    height: float = 0.0
    center: tuple[float, ...] = (0.0,)
    width: float = 1.0
    wall: float = 0.0
    thickness: Optional[float] = None
    slits: tuple[float, ...] = ()
    table: Optional[RealField] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PotentialError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        numbers = [self.omega, self.kappa, self.height, self.width, self.wall, *self.center, *self.slits]
        if not all(np.isfinite(numbers)):
            raise PotentialError("potential parameters must be finite")
        if self.kind == "harmonic" and self.omega <= 0:
            raise PotentialError("harmonic omega must be > 0")
        if self.kind == "inverted-harmonic" and self.kappa <= 0:
            raise PotentialError("inverted-harmonic kappa must be > 0")
        if self.kind in ("gaussian-barrier", "double-slit") and self.height < 0:
            raise PotentialError("barrier height must be >= 0")
        if self.kind in ("gaussian-barrier", "double-slit") and self.width <= 0:
            raise PotentialError("width must be > 0")
        if self.kind == "double-slit" and not self.slits:
            raise PotentialError("double-slit needs at least one slit center")
        if self.kind == "tabulated" and self.table is None:
            raise PotentialError("tabulated potential needs a table field")

    @property
    def smooth(self) -> bool:
        return self.kind in SMOOTH_KINDS


def _radius2(coords, center) -> np.ndarray:
    center = np.broadcast_to(np.asarray(center, float), (len(coords),))
    return sum((c - c0) ** 2 for c, c0 in zip(coords, center))


def eval_potential(spec: PotentialSpec, grid: Grid, units: UnitSystem = UnitSystem()) -> RealField:
    """Sample U on every grid point."""
    coords = grid.mesh()
    kind = spec.kind
    if kind in ("free", "box"):
        if kind == "box" and grid.boundary != DIRICHLET:
            raise PotentialError("box potential is realized by dirichlet-zero walls; use a dirichlet grid")
        U = np.zeros(grid.shape)
    elif kind == "harmonic":
        U = 0.5 * units.mass * spec.omega ** 2 * _radius2(coords, 0.0)
    elif kind == "inverted-harmonic":
        U = -0.5 * spec.kappa * _radius2(coords, 0.0)
    elif kind == "gaussian-barrier":
        U = spec.height * np.exp(-_radius2(coords, spec.center) / (2.0 * spec.width ** 2))
    elif kind == "double-slit":
        U = _double_slit(spec, grid)
    else:
        table = spec.table
        if table.grid != grid:
            raise PotentialError("tabulated potential lives on a different grid")
        U = np.array(table.values)
    return RealField(grid, U)


def _double_slit(spec: PotentialSpec, grid: Grid) -> np.ndarray:
    if grid.ndim != 2:
        raise PotentialError("double-slit potential needs a 2D grid")
    x, y = grid.axes
    hx = grid.spacing[0]
    thickness = spec.thickness if spec.thickness is not None else 2 * hx
    # wall columns: the cell-aligned strip of grid columns nearest to the declared wall position
    first = int(round((spec.wall - grid.lower[0]) / hx))
    ncols = max(1, int(round(thickness / hx)))
    cols = np.zeros(x.size, bool)
    cols[max(first, 0):min(first + ncols, x.size)] = True
    closed = np.ones(y.size, bool)
    for c in spec.slits:
        closed &= np.abs(y - c) >= 0.5 * spec.width
    return spec.height * (cols[:, None] & closed[None, :]).astype(float)


def potential_gradient(spec: PotentialSpec, q: np.ndarray, units: UnitSystem = UnitSystem()) -> np.ndarray:
    """Analytic dU/dq at configuration(s) ``q`` (last axis = coordinates)."""
    q = np.asarray(q, float)
    if spec.kind == "free":
        return np.zeros_like(q)
    if spec.kind == "harmonic":
        return units.mass * spec.omega ** 2 * q
    if spec.kind == "inverted-harmonic":
        return -spec.kappa * q
    if spec.kind == "gaussian-barrier":
        d = q - np.asarray(spec.center, float)
        g = spec.height * np.exp(-np.sum(d ** 2, axis=-1, keepdims=True) / (2 * spec.width ** 2))
        return -g * d / spec.width ** 2
    raise PotentialError(f"{spec.kind} potential has no analytic derivatives")


def potential_hessian(spec: PotentialSpec, q: np.ndarray, units: UnitSystem = UnitSystem()) -> np.ndarray:
    """Analytic d2U/dq_i dq_j at a single configuration ``q``."""
    q = np.asarray(q, float)
    n = q.shape[-1]
    eye = np.eye(n)
    if spec.kind == "free":
        return np.zeros((n, n))
    if spec.kind == "harmonic":
        return units.mass * spec.omega ** 2 * eye
    if spec.kind == "inverted-harmonic":
        return -spec.kappa * eye
    if spec.kind == "gaussian-barrier":
        w2 = spec.width ** 2
        d = q - np.asarray(spec.center, float)
        g = spec.height * np.exp(-np.dot(d, d) / (2 * w2))
        return g * (np.outer(d, d) / w2 ** 2 - eye / w2)
    raise PotentialError(f"{spec.kind} potential has no analytic second derivatives")


def potential_value(spec: PotentialSpec, q: np.ndarray, units: UnitSystem = UnitSystem()) -> np.ndarray:
    """Analytic U at configuration(s) ``q`` (last axis = coordinates)."""
    q = np.asarray(q, float)
    r2 = np.sum(q ** 2, axis=-1)
    if spec.kind == "free":
        return np.zeros_like(r2)
    if spec.kind == "harmonic":
        return 0.5 * units.mass * spec.omega ** 2 * r2
    if spec.kind == "inverted-harmonic":
        return -0.5 * spec.kappa * r2
    if spec.kind == "gaussian-barrier":
        d = q - np.asarray(spec.center, float)
        return spec.height * np.exp(-np.sum(d ** 2, axis=-1) / (2 * spec.width ** 2))
    raise PotentialError(f"{spec.kind} potential has no analytic form for point evaluation")
