"""Residuals and identities checked on wavefunctions, timelines and ensembles.

All norms here are P-weighted: ``sqrt(sum P f^2 / sum P)`` over unmasked
points, so exponential tails and node neighbourhoods do not dominate.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from pilotwave.bohm import (
    TrajectoryEnsemble,
    log_derivatives,
    quantum_potential,
    quantum_potential_psi,
    phase_rate,
    velocity_field,
)
from pilotwave.fields import (
    ComplexField,
    FieldError,
    Grid,
    NodeMask,
    RealField,
    UnitSystem,
    grad_values,
    integrate_values,
    laplacian_values,
    polar_decompose,
)
from pilotwave.tdse import WaveTimeline

NORMALIZATION_TOL = 1e-6


# -- report -------------------------------------------------------------------

@dataclass(frozen=True)
class Entry:
    name: str
    value: float
    tolerance: float
    passed: bool


@dataclass
class DiagnosticsReport:
    scenario: str
    provenance: dict = field(default_factory=dict)
    entries: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # errors that aborted part of the run

    def add(self, name: str, value: float, tolerance: float, passed: Optional[bool] = None) -> Entry:
        """Append an entry; by default it passes when ``value <= tolerance``."""
        value = float(value)
        if passed is None:
            passed = bool(np.isfinite(value) and value <= tolerance)
        entry = Entry(name, value, float(tolerance), bool(passed))
        self.entries.append(entry)
        return entry

    @property
    def passed(self) -> bool:
        return not self.failures and all(e.passed for e in self.entries)

    def __getitem__(self, name: str) -> Entry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value", "tolerance", "pass"])
        for e in self.entries:
            w.writerow([e.name, format(e.value, ".17g"), format(e.tolerance, ".17g"),
                        "true" if e.passed else "false"])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"scenario: {self.scenario}"]
        lines += [f"  {k}: {v}" for k, v in self.provenance.items()]
        width = max((len(e.name) for e in self.entries), default=4)
        for e in self.entries:
            lines.append(f"  [{'PASS' if e.passed else 'FAIL'}] {e.name:<{width}}  "
                         f"{e.value:.6e}  (tol {e.tolerance:.1e})")
        lines += [f"  error: {msg}" for msg in self.failures]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


# -- helpers ----------------------------------------------------------------

def weighted_norm(values: np.ndarray, density: np.ndarray, grid: Grid, mask: np.ndarray) -> float:
    keep = ~mask & np.isfinite(values)
    vals = np.where(keep, values, 0.0)
    num = integrate_values(np.where(keep, density * vals * vals, 0.0), grid)
    den = integrate_values(np.where(keep, density, 0.0), grid)
    return float(math.sqrt(num / den)) if den > 0 else math.nan


def _check_normalized(psi: ComplexField):
    n2 = float(integrate_values(np.abs(psi.values) ** 2, psi.grid))
    if abs(n2 - 1.0) > NORMALIZATION_TOL:
        raise FieldError(f"psi must be normalized, got norm {n2}")


def _current(psi: np.ndarray, grid: Grid, hbar: float) -> list[np.ndarray]:
    """P grad S = hbar Im(psi* grad psi), one array per axis."""
    return [hbar * np.imag(np.conj(psi) * grad_values(psi, grid, a)) for a in range(grid.ndim)]


def _divergence(components: Sequence[np.ndarray], grid: Grid) -> np.ndarray:
    return sum(grad_values(c, grid, a) for a, c in enumerate(components))


def _time_derivative(f0, f1, f2, t0, t1, t2):
    d1, d2 = t1 - t0, t2 - t1
    return (d2 * (f1 - f0) / d1 + d1 * (f2 - f1) / d2) / (d1 + d2)


def _masks(timeline: WaveTimeline, j: int) -> np.ndarray:
    m = np.zeros(timeline.grid.shape, bool)
    for k in (j - 1, j, j + 1):
        m |= NodeMask.from_density(timeline.grid, np.abs(timeline.snapshots[k]) ** 2).values
    return m


# -- stability condition ------------------------------------------------------

def chetaev_residual(psi: ComplexField, units: UnitSystem = UnitSystem()) -> tuple[RealField, float]:
    """L = div v, the Cartesian form of sum d/dq_i (g_ij dS/dq_j), and its P-weighted norm.

    Evaluated as (hbar/m) Im(Lap psi/psi - (grad psi/psi)^2) so the wrapped
    phase is never differentiated.
    """
    grid = psi.grid
    dens = np.abs(psi.values) ** 2
    mask = NodeMask.from_density(grid, dens).values
    dlog, lap = log_derivatives(psi.values, grid)
    L = (units.hbar / units.mass) * np.imag(lap - sum(d * d for d in dlog))
    L = np.where(mask, np.nan, L)
    return RealField(grid, L), weighted_norm(L, dens, grid, mask)


def epsilon_field(psi: ComplexField, units: UnitSystem = UnitSystem()) -> RealField:
    """Kinetic-energy variation (hbar/2) div v."""
    L, _ = chetaev_residual(psi, units)
    return RealField(psi.grid, 0.5 * units.hbar * L.values)


# -- hydrodynamic residuals ---------------------------------------------------

def continuity_residual(timeline: WaveTimeline) -> np.ndarray:
    """P-weighted norm of dP/dt + (1/m) div(P grad S) at every interior snapshot."""
    if len(timeline) < 3:
        raise ValueError("continuity residual needs at least 3 snapshots")
    grid, units = timeline.grid, timeline.units
    t = timeline.times
    out = []
    for j in range(1, len(timeline) - 1):
        P = [np.abs(timeline.snapshots[k]) ** 2 for k in (j - 1, j, j + 1)]
        dPdt = _time_derivative(*P, *t[j - 1:j + 2])
        flux = _divergence(_current(timeline.snapshots[j], grid, units.hbar), grid) / units.mass
        out.append(weighted_norm(dPdt + flux, P[1], grid, _masks(timeline, j)))
    return np.array(out)


def madelung_residuals(timeline: WaveTimeline, U: RealField) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude-transport and quantum Hamilton-Jacobi residual norms per interior snapshot.

    r_amp = dA/dt + (1/2m)(A Lap S + 2 grad A . grad S), evaluated as
    dA/dt + div(P grad S)/(2mA); r_phase = dS/dt + |grad S|^2/2m + U + Q.
    """
    if len(timeline) < 3:
        raise ValueError("Madelung residuals need at least 3 snapshots")
    grid, units = timeline.grid, timeline.units
    t = timeline.times
    r_amp, r_phase = [], []
    for j in range(1, len(timeline) - 1):
        psi = timeline.snapshots[j]
        A = [np.abs(timeline.snapshots[k]) for k in (j - 1, j, j + 1)]
        mask = _masks(timeline, j)
        dAdt = _time_derivative(*A, *t[j - 1:j + 2])
        div_j = _divergence(_current(psi, grid, units.hbar), grid)
        with np.errstate(divide="ignore", invalid="ignore"):
            ramp = dAdt + div_j / (2.0 * units.mass * A[1])
        dSdt, _ = phase_rate(timeline, j)
        v = velocity_field(timeline.psi(j), units).components
        Amp, _, node = polar_decompose(timeline.psi(j), units)
        Q = quantum_potential(Amp, node, units).values
        rphase = dSdt + 0.5 * units.mass * np.sum(v ** 2, axis=0) + U.values + Q
        P = A[1] ** 2
        r_amp.append(weighted_norm(ramp, P, grid, mask))
        r_phase.append(weighted_norm(rphase, P, grid, mask))
    return np.array(r_amp), np.array(r_phase)


# -- uncertainty identity -----------------------------------------------------

@dataclass(frozen=True)
class UncertaintyRecord:
    var_x: float
    var_p: float
    mean_Q: float
    gradS_var: float
    product: float
    bound: float
    mass: float

    @property
    def decomposition_error(self) -> float:
        """|var_p - (gradS_var + 2m <Q>)|."""
        return abs(self.var_p - (self.gradS_var + 2.0 * self.mass * self.mean_Q))

    @property
    def quantum_product(self) -> float:
        """var_x * 2m <Q>, the right-hand side of the equality form."""
        return self.var_x * 2.0 * self.mass * self.mean_Q


def momentum_moments(psi: ComplexField, units: UnitSystem) -> tuple[float, float]:
    """<p> and <p^2>: FFT on periodic grids, -hbar^2 <psi|Lap|psi> on dirichlet ones."""
    grid, v = psi.grid, psi.values
    hbar = units.hbar
    if grid.periodic:
        amp = np.abs(np.fft.fft(v)) ** 2
        amp /= amp.sum()
        p = hbar * grid.wavenumbers(0)
        return float(np.sum(p * amp)), float(np.sum(p * p * amp))
    norm = integrate_values(np.abs(v) ** 2, grid)
    p1 = integrate_values(hbar * np.imag(np.conj(v) * grad_values(v, grid, 0)), grid) / norm
    p2 = -hbar ** 2 * integrate_values(np.real(np.conj(v) * laplacian_values(v, grid)), grid) / norm
    return float(p1), float(p2)


def uncertainty_check(psi: ComplexField, units: UnitSystem = UnitSystem()) -> UncertaintyRecord:
    """Position/momentum dispersions and the split var_p = var(grad S) + 2m <Q>."""
    if psi.grid.ndim != 1:
        raise ValueError("uncertainty_check is one-dimensional")
    _check_normalized(psi)
    grid = psi.grid
    x = grid.axis(0)
    P = np.abs(psi.values) ** 2
    mx = integrate_values(x * P, grid)
    var_x = float(integrate_values((x - mx) ** 2 * P, grid))
    p1, p2 = momentum_moments(psi, units)
    var_p = p2 - p1 * p1

    q = quantum_potential_psi(psi, units)
    keep = ~q.mask.values
    mean_Q = float(integrate_values(np.where(keep, np.nan_to_num(q.values) * P, 0.0), grid))
    flux = _current(psi.values, grid, units.hbar)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        gs2 = np.where(keep, flux * flux / P, 0.0)
    gradS_var = float(integrate_values(gs2, grid) - integrate_values(flux, grid) ** 2)
    return UncertaintyRecord(var_x, var_p, mean_Q, gradS_var, var_x * var_p,
                             units.hbar ** 2 / 4.0, units.mass)


# -- perturbation action ------------------------------------------------------

@dataclass(frozen=True)
class ActionRecord:
    action: float
    fisher_form: float
    normalization: float

    @property
    def relative_gap(self) -> float:
        scale = max(abs(self.action), abs(self.fisher_form))
        return abs(self.action - self.fisher_form) / scale if scale > 0 else 0.0


def perturbation_action(psi: ComplexField, units: UnitSystem = UnitSystem()) -> ActionRecord:
    """Integral of Q |psi|^2 computed directly and via (hbar^2/8m) int (grad P)^2/P."""
    _check_normalized(psi)
    grid = psi.grid
    A, _, mask = polar_decompose(psi, units)
    P = A.values ** 2
    Q = quantum_potential(A, mask, units).values
    keep = ~mask.values
    direct = float(integrate_values(np.where(keep, np.nan_to_num(Q) * P, 0.0), grid))

    gradP2 = sum(grad_values(P, grid, a) ** 2 for a in range(grid.ndim))
    gradA2 = sum(grad_values(A.values, grid, a) ** 2 for a in range(grid.ndim))
    with np.errstate(divide="ignore", invalid="ignore"):
        # masked points take the continuous limit (grad P)^2/P -> 4 |grad A|^2
        fisher_density = np.where(keep, gradP2 / P, 4.0 * gradA2)
    fisher = float(units.hbar ** 2 / (8.0 * units.mass) * integrate_values(fisher_density, grid))
    return ActionRecord(direct, fisher, float(integrate_values(P, grid)))


@dataclass(frozen=True)
class Bump:
    """Smooth compact bump exp(-1/(1-r^2)), r = |q - center|/radius."""

    center: tuple[float, ...]
    radius: float

    def sample(self, grid: Grid) -> np.ndarray:
        coords = grid.mesh()
        c = np.broadcast_to(np.asarray(self.center, float), (grid.ndim,))
        r2 = sum((x - c0) ** 2 for x, c0 in zip(coords, c)) / self.radius ** 2
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(r2 < 1.0, np.exp(-1.0 / (1.0 - np.minimum(r2, 1 - 1e-300))), 0.0)

    def check(self, grid: Grid):
        c = np.broadcast_to(np.asarray(self.center, float), (grid.ndim,))
        h = np.asarray(grid.spacing)
        if np.any(c - self.radius <= np.asarray(grid.lower) + h) or \
                np.any(c + self.radius >= np.asarray(grid.upper) - h):
            raise ValueError("bump support hits the grid boundary")


@dataclass(frozen=True)
class ProbeRecord:
    derivative: float
    second_variation: float
    action: float


def _rayleigh_action(a: np.ndarray, grid: Grid, units: UnitSystem) -> float:
    """int Q a^2 / int a^2 for a real amplitude a, i.e. -(hbar^2/2m) <a|Lap|a>/<a|a>."""
    num = integrate_values(a * laplacian_values(a, grid), grid)
    return float(-(units.hbar ** 2 / (2.0 * units.mass)) * num / integrate_values(a * a, grid))


def stationarity_probe(psi: ComplexField, bump: Bump, h: float = 1e-3,
                       units: UnitSystem = UnitSystem()) -> ProbeRecord:
    """Centered Gateaux derivative of the perturbation action along a norm-preserving bump."""
    grid = psi.grid
    if np.max(np.abs(psi.values.imag)) > 1e-12 * np.max(np.abs(psi.values)):
        raise ValueError("stationarity_probe expects a real wavefunction")
    bump.check(grid)
    a = psi.values.real
    b = bump.sample(grid)
    b = b - integrate_values(a * b, grid) / integrate_values(a * a, grid) * a
    b /= math.sqrt(integrate_values(b * b, grid))
    j0 = _rayleigh_action(a, grid, units)
    jp = _rayleigh_action(a + h * b, grid, units)
    jm = _rayleigh_action(a - h * b, grid, units)
    return ProbeRecord((jp - jm) / (2.0 * h), (jp - 2.0 * j0 + jm) / (h * h), j0)


# -- ensembles ----------------------------------------------------------------

def _hat_cumulative(grid: Grid, axis: int, edges: np.ndarray) -> np.ndarray:
    """Matrix M with M[e, i] = integral from lower to edges[e] of the hat function of node i."""
    n, h, lo = grid.counts[axis], grid.spacing[axis], grid.lower[axis]
    ncell = n if grid.periodic else n - 1
    M = np.zeros((edges.size, n))
    for e, x in enumerate(edges):
        pos = np.clip((x - lo) / h, 0.0, ncell)
        c = min(int(np.floor(pos)), ncell - 1)
        s = pos - c
        if c > 0:
            M[e, 0] += 0.5 * h
            M[e, 1:c] += h
            M[e, c] += 0.5 * h
        M[e, c] += h * (s - 0.5 * s * s)
        M[e, (c + 1) % n] += 0.5 * h * s * s
    return M


def binned_density(P: RealField, bins: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Exact bin masses of the piecewise-(bi)linear interpolant of P over the grid box."""
    grid = P.grid
    edges = [np.linspace(lo, hi, bins + 1) for lo, hi in zip(grid.lower, grid.upper)]
    cum = [_hat_cumulative(grid, a, e) for a, e in enumerate(edges)]
    if grid.ndim == 1:
        F = cum[0] @ P.values
        return np.diff(F), edges
    F = cum[0] @ P.values @ cum[1].T
    return np.diff(np.diff(F, axis=0), axis=1), edges


def equivariance_statistic(ensemble: TrajectoryEnsemble, P_final: RealField, bins: int = 50,
                           time_index: int = -1) -> dict:
    """Total-variation distance and chi-square between the ensemble histogram and binned P."""
    if ensemble.count == 0:
        raise ValueError("empty ensemble")
    expected, edges = binned_density(P_final, bins)
    pos = ensemble.positions[time_index]
    pos = pos[np.all(np.isfinite(pos), axis=1)]
    counts, _ = np.histogramdd(pos, bins=edges)
    observed = counts / ensemble.count
    n = ensemble.count
    ok = expected * n >= 5
    chi2 = float(np.sum((counts[ok] - n * expected[ok]) ** 2 / (n * expected[ok])))
    return {
        "tv_distance": float(0.5 * np.abs(observed - expected).sum()),
        "chi_square": chi2,
        "observed": observed,
        "expected": expected,
        "edges": edges,
    }


def non_crossing(ensemble: TrajectoryEnsemble) -> bool:
    """True when every 1D trajectory keeps its initial rank at every output time."""
    pos = ensemble.positions[..., 0]
    order = np.argsort(pos[0], kind="stable")
    ranked = pos[:, order]
    finite = np.all(np.isfinite(ranked), axis=0)
    return bool(np.all(np.diff(ranked[:, finite], axis=1) >= 0))
