"""Pilot-wave engine: quantum potential, guidance velocity, |psi|^2 sampling
and trajectory ensembles integrated along the guidance equation."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from pilotwave import rng as rngmod
from pilotwave.fields import (
    NODE_THRESHOLD,
    ComplexField,
    FieldError,
    Grid,
    NodeMask,
    RealField,
    UnitSystem,
    grad_values,
    integrate_values,
    laplacian_values,
)
from pilotwave.tdse import WaveTimeline

log = logging.getLogger(__name__)

INTERPOLATION_ORDER = {"linear": 1, "cubic": 3}


@dataclass(frozen=True, eq=False)
class QField:
    """Quantum potential samples; NaN where the node mask is set."""

    field: RealField
    mask: NodeMask
    units: UnitSystem

    @property
    def values(self) -> np.ndarray:
        return self.field.values


@dataclass(frozen=True, eq=False)
class VelocityField:
    grid: Grid
    components: np.ndarray  # (ndim, *grid.shape)
    mask: NodeMask


@dataclass(eq=False)
class TrajectoryEnsemble:
    times: np.ndarray
    positions: np.ndarray  # (n_times, N, ndim); NaN after escape
    escaped: np.ndarray  # (N,) bool
    dt_sub: float
    interpolation: str
    seed: Optional[int] = None
    boundary_policy: str = "wrap"
    metadata: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.positions.shape[1]


# -- fields -------------------------------------------------------------------

def quantum_potential(A: RealField, mask: NodeMask, units: UnitSystem = UnitSystem()) -> QField:
    """Q = -(hbar^2/2m) Laplacian(A)/A at unmasked points."""
    a = A.values
    if np.any(a < 0):
        raise FieldError("amplitude must be non-negative")
    lap = laplacian_values(a, A.grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = -(units.hbar ** 2 / (2.0 * units.mass)) * lap / a
    q = np.where(mask.values, np.nan, q)
    return QField(RealField(A.grid, q), mask, units)


def log_derivatives(psi: np.ndarray, grid: Grid, floor: float = NODE_THRESHOLD):
    """Per-axis grad(psi)/psi and Laplacian(psi)/psi with |psi|^2 floored at floor*max."""
    dens = np.abs(psi) ** 2
    den = np.maximum(dens, floor * dens.max())
    grads = [grad_values(psi, grid, a) for a in range(grid.ndim)]
    lap = laplacian_values(psi, grid)
    conj = np.conj(psi)
    return [conj * g / den for g in grads], conj * lap / den


def quantum_potential_psi(psi: ComplexField, units: UnitSystem = UnitSystem()) -> QField:
    """Q evaluated from psi itself: -(hbar^2/2m)[Re(Lap psi/psi) + |Im(grad psi/psi)|^2].

    Identical to the amplitude form in the continuum but free of the kink
    that |psi| develops at nodes.
    """
    mask = NodeMask.from_density(psi.grid, np.abs(psi.values) ** 2)
    dlog, lap = log_derivatives(psi.values, psi.grid)
    ratio = lap.real + sum(d.imag ** 2 for d in dlog)
    q = -(units.hbar ** 2 / (2.0 * units.mass)) * ratio
    q = np.where(mask.values, np.nan, q)
    return QField(RealField(psi.grid, q), mask, units)


def velocity_field(psi: ComplexField, units: UnitSystem = UnitSystem(),
                   floor: float = NODE_THRESHOLD) -> VelocityField:
    """v = (hbar/m) Im(psi* grad psi)/|psi|^2, denominator floored at floor*max|psi|^2."""
    values = psi.values
    if not np.all(np.isfinite(values)):
        raise FieldError("psi contains non-finite samples")
    dens = np.abs(values) ** 2
    den = np.maximum(dens, floor * dens.max())
    # Im(psi* grad psi) = R grad I - I grad R on real parts keeps v exactly zero
    # for real psi and exactly odd under conjugation
    re, im = np.ascontiguousarray(values.real), np.ascontiguousarray(values.imag)
    comps = np.array([
        (units.hbar / units.mass)
        * (re * grad_values(im, psi.grid, a) - im * grad_values(re, psi.grid, a)) / den
        for a in range(psi.grid.ndim)
    ])
    comps.setflags(write=False)
    return VelocityField(psi.grid, comps, NodeMask.from_density(psi.grid, dens, floor))


def phase_rate(timeline: WaveTimeline, j: int) -> tuple[np.ndarray, NodeMask]:
    """dS/dt at snapshot j from phase increments to both neighbours.

    Increments are angles of psi_{j+1} psi_j^* (never differences of wrapped
    phases); each one is placed on the 2*pi branch of its value at the
    max-|psi| anchor point.
    """
    if not 0 < j < len(timeline) - 1:
        raise ValueError(f"snapshot {j} has no neighbours on both sides")
    hbar = timeline.units.hbar
    psis = [timeline.snapshots[k] for k in (j - 1, j, j + 1)]
    masks = [NodeMask.from_density(timeline.grid, np.abs(p) ** 2) for p in psis]
    anchor = np.unravel_index(np.argmax(np.abs(psis[1])), timeline.grid.shape)
    if any(m.values[anchor] for m in masks):
        raise ValueError("phase anchor point is masked")

    def increment(a, b):
        z = b * np.conj(a)
        za = z[anchor]
        return np.angle(za) + np.angle(z * np.conj(za) / max(abs(za), 1e-300))

    t0, t1, t2 = timeline.times[j - 1:j + 2]
    d1, d2 = t1 - t0, t2 - t1
    r1 = increment(psis[0], psis[1]) / d1
    r2 = increment(psis[1], psis[2]) / d2
    rate = hbar * (d2 * r1 + d1 * r2) / (d1 + d2)
    mask = NodeMask(timeline.grid, masks[0].values | masks[1].values | masks[2].values)
    return rate, mask


def quantum_potential_hj(timeline: WaveTimeline, j: int, U: RealField) -> QField:
    """Q = -dS/dt - U - |grad S|^2/2m from the phase dynamics alone."""
    units = timeline.units
    dSdt, mask = phase_rate(timeline, j)
    v = velocity_field(timeline.psi(j), units)
    kinetic = 0.5 * units.mass * np.sum(v.components ** 2, axis=0)
    q = -dSdt - U.values - kinetic
    q = np.where(mask.values, np.nan, q)
    return QField(RealField(timeline.grid, q), mask, units)


# -- sampling ---------------------------------------------------------------

def _cells_1d(p: np.ndarray, h: float, periodic: bool):
    """Left/right densities of each piecewise-linear cell and cumulative masses."""
    if periodic:
        p = np.append(p, p[0])
    left, right = p[:-1], p[1:]
    mass = 0.5 * h * (left + right)
    return left, right, np.concatenate([[0.0], np.cumsum(mass)])


def _invert_cell(r, left, right, h):
    """Fraction s in [0, 1] with h*(left*s + (right-left)*s^2/2) = r."""
    slope = right - left
    disc = np.sqrt(np.maximum(left * left + 2.0 * slope * r / h, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(left + disc > 0, 2.0 * r / (h * (left + disc)), 0.5)
    return np.clip(s, 0.0, 1.0)


def _sample_1d(p, lower, h, periodic, u):
    left, right, cum = _cells_1d(p, h, periodic)
    r = u * cum[-1]
    cell = np.clip(np.searchsorted(cum, r, side="right") - 1, 0, left.size - 1)
    s = _invert_cell(r - cum[cell], left[cell], right[cell], h)
    return cell, s, lower + (cell + s) * h


def sample_initial_positions(P0: RealField, n: int, seed: int,
                             generator: Optional[np.random.Generator] = None) -> np.ndarray:
    """Draw ``n`` positions from the piecewise-(bi)linear interpolant of P0.

    1D uses inverse-CDF sampling; 2D samples the first axis from its marginal
    and then the second axis from the conditional density.  Returns (n, ndim).
    """
    grid = P0.grid
    p = np.asarray(P0.values, float)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise FieldError("sampling density must be finite and non-negative")
    total = float(integrate_values(p, grid))
    if abs(total - 1.0) > 1e-6:
        raise FieldError(f"sampling density integrates to {total}, expected 1")
    gen = generator if generator is not None else rngmod.stream(seed, rngmod.SAMPLING)
    h = grid.spacing
    if grid.ndim == 1:
        _, _, x = _sample_1d(p, grid.lower[0], h[0], grid.periodic, gen.random(n))
        return x[:, None]

    u1 = gen.random(n)
    u2 = gen.random(n)
    pp = np.concatenate([p, p[:1]], axis=0) if grid.periodic else p
    # marginal over the second axis, exact for the bilinear interpolant
    col_cum = np.array([_cells_1d(row, h[1], grid.periodic)[2] for row in pp])
    marginal = col_cum[:, -1]
    cell_x, sx, x = _sample_1d(marginal[:-1] if grid.periodic else marginal,
                               grid.lower[0], h[0], grid.periodic, u1)
    y = np.empty(n)
    chunk = 4096
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        i, s = cell_x[sl], sx[sl][:, None]
        cum = (1.0 - s) * col_cum[i] + s * col_cum[i + 1]
        dens = (1.0 - s) * pp[i] + s * pp[i + 1]
        if grid.periodic:
            dens = np.concatenate([dens, dens[:, :1]], axis=1)
        r = u2[sl] * cum[:, -1]
        cell = (cum <= r[:, None]).sum(axis=1) - 1
        cell = np.clip(cell, 0, dens.shape[1] - 2)
        rows = np.arange(cell.size)
        sy = _invert_cell(r - cum[rows, cell], dens[rows, cell], dens[rows, cell + 1], h[1])
        y[sl] = grid.lower[1] + (cell + sy) * h[1]
    return np.column_stack([x, y])


# -- trajectories -----------------------------------------------------------

class FieldInterpolator:
    """Spatial interpolation of a vector field sampled on a grid."""

    def __init__(self, grid: Grid, components: np.ndarray, kind: str = "linear"):
        if kind not in INTERPOLATION_ORDER:
            raise ValueError(f"unknown interpolation {kind!r}")
        self.grid = grid
        self.order = INTERPOLATION_ORDER[kind]
        self.mode = "grid-wrap" if grid.periodic else "nearest"
        if self.order > 1:
            components = np.array([ndimage.spline_filter(c, order=self.order, mode=self.mode)
                                   for c in components])
        self.coeffs = components

    def blend(self, other: "FieldInterpolator", tau: float) -> "FieldInterpolator":
        """Interpolator of (1 - tau) * self + tau * other; exact since both are linear in the samples."""
        out = object.__new__(FieldInterpolator)
        out.grid, out.order, out.mode = self.grid, self.order, self.mode
        out.coeffs = (1.0 - tau) * self.coeffs + tau * other.coeffs
        return out

    def index_coords(self, q: np.ndarray) -> np.ndarray:
        lower = np.asarray(self.grid.lower)
        h = np.asarray(self.grid.spacing)
        return ((q - lower) / h).T

    def __call__(self, q: np.ndarray) -> np.ndarray:
        out = np.empty(q.shape)
        coords = self.index_coords(q)
        for a, c in enumerate(self.coeffs):
            out[:, a] = ndimage.map_coordinates(c, coords, order=self.order, mode=self.mode,
                                                prefilter=False)
        return out


def _wrap(q, grid: Grid):
    lower = np.asarray(grid.lower)
    extent = np.asarray(grid.upper) - lower
    return lower + np.mod(q - lower, extent)


def _masked_at(mask: np.ndarray, grid: Grid, q: np.ndarray) -> np.ndarray:
    idx = np.rint((q - np.asarray(grid.lower)) / np.asarray(grid.spacing)).astype(int)
    if grid.periodic:
        idx = np.mod(idx, np.asarray(grid.counts))
    else:
        idx = np.clip(idx, 0, np.asarray(grid.counts) - 1)
    return mask[tuple(idx.T)]


def _significant_speed(v: VelocityField, density: np.ndarray, rel: float = 1e-3) -> float:
    """Largest guidance speed where the density exceeds ``rel`` of its peak."""
    keep = density >= rel * density.max()
    return float(np.abs(v.components[:, keep]).max(initial=0.0))


def integrate_trajectories(timeline: WaveTimeline, positions: np.ndarray, substeps: int = 4,
                           interpolation: str = "linear", threads: int = 1,
                           seed: Optional[int] = None) -> TrajectoryEnsemble:
    """RK4 on dq/dt = v(q, t), sampled at every snapshot time of ``timeline``.

    v is interpolated in space (``interpolation``) and linearly in time between
    snapshots.  Periodic grids wrap positions; on dirichlet grids a particle
    leaving the box is marked escaped and its trajectory is NaN from then on.
    """
    grid = timeline.grid
    units = timeline.units
    if len(timeline) < 2:
        raise ValueError("timeline needs at least two snapshots")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    q = np.array(positions, float).reshape(len(positions), -1)
    if q.shape[1] != grid.ndim:
        raise ValueError("positions have the wrong dimension")
    lower, upper = np.asarray(grid.lower), np.asarray(grid.upper)
    if np.any(q < lower) or np.any(q > upper):
        raise ValueError("initial positions must lie inside the grid bounds")

    n_t, n_p = len(timeline), q.shape[0]
    out = np.full((n_t, n_p, grid.ndim), np.nan)
    out[0] = q
    alive = np.ones(n_p, bool)
    h_min = min(grid.spacing)

    fields = [velocity_field(timeline.psi(0), units)]
    interps = [FieldInterpolator(grid, fields[0].components, interpolation)]
    chunks = np.array_split(np.arange(n_p), max(1, min(threads, n_p)))
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    dt_sub = np.inf
    coarse: list[int] = []
    worst = 0.0
    try:
        for j in range(n_t - 1):
            fb = velocity_field(timeline.psi(j + 1), units)
            ib = FieldInterpolator(grid, fb.components, interpolation)
            fa, ia = fields[-1], interps[-1]
            t0, t1 = timeline.times[j], timeline.times[j + 1]
            dt = (t1 - t0) / substeps
            dt_sub = min(dt_sub, dt)
            vmax = max(_significant_speed(fa, timeline.psi(j).density.values),
                       _significant_speed(fb, timeline.psi(j + 1).density.values))
            if vmax * (t1 - t0) > h_min:
                coarse.append(j)
                worst = max(worst, vmax * (t1 - t0))
            mask = fa.mask.values | fb.mask.values

            blended = {}

            def vel(x, t):
                if t not in blended:
                    blended[t] = ia.blend(ib, (t - t0) / (t1 - t0))
                return blended[t](x)

            def rk4(x, t, step):
                k1 = vel(x, t)
                k2 = vel(x + 0.5 * step * k1, t + 0.5 * step)
                k3 = vel(x + 0.5 * step * k2, t + 0.5 * step)
                k4 = vel(x + step * k3, t + step)
                return x + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

            def advance(idx):
                x = q[idx]
                for s in range(substeps):
                    t = t0 + s * dt
                    new = rk4(x, t, dt)
                    mid = 0.5 * (x + new)
                    hit = _masked_at(mask, grid, mid) | _masked_at(mask, grid, new)
                    if hit.any():
                        xh = rk4(x[hit], t, 0.5 * dt)
                        new[hit] = rk4(xh, t + 0.5 * dt, 0.5 * dt)
                    x = new
                return x

            live = np.flatnonzero(alive)
            parts = [np.intersect1d(c, live, assume_unique=True) for c in chunks]
            results = list(pool.map(advance, parts)) if pool else [advance(p) for p in parts]
            for idx, x in zip(parts, results):
                q[idx] = x
            if grid.periodic:
                q[alive] = _wrap(q[alive], grid)
            else:
                gone = alive & (np.any(q < lower, axis=1) | np.any(q > upper, axis=1))
                alive &= ~gone
                q[gone] = np.nan
            out[j + 1] = np.where(alive[:, None], q, np.nan)
            fields, interps = [fb], [ib]
    finally:
        if pool:
            pool.shutdown()
    if coarse:
        log.warning("%d of %d snapshot intervals move particles more than one grid spacing "
                    "(worst |v|*dt_snap = %.3g, spacing %.3g); consider a smaller stride",
                    len(coarse), n_t - 1, worst, h_min)

    return TrajectoryEnsemble(
        times=np.array(timeline.times), positions=out, escaped=~alive, dt_sub=float(dt_sub),
        interpolation=interpolation, seed=seed,
        boundary_policy="wrap" if grid.periodic else "truncate",
    )
