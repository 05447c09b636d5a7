"""Time-dependent Schrodinger propagation and stationary states.

Two real-time propagators are provided: Strang split-operator with FFT
kinetic steps (periodic grids) and Crank-Nicolson with a banded discrete
Hamiltonian (dirichlet-zero grids; axis-wise in 2D).  Stationary states come
from a tridiagonal eigen-solve (1D) or imaginary-time relaxation (any grid).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import sparse
from scipy.linalg import eigh_tridiagonal, solve_banded
from scipy.sparse.linalg import splu

from pilotwave.fields import (
    ComplexField,
    Grid,
    RealField,
    UnitSystem,
    integrate_values,
    laplacian_values,
)

log = logging.getLogger(__name__)

SPLIT = "split-spectral"
CRANK = "crank-nicolson"
METHODS = (SPLIT, CRANK)
NORM_TOL = 1e-8


class SolverError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    steps: int
    method: str = SPLIT
    stride: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.stride < 1:
            raise ConfigurationError("snapshot stride must be >= 1")

    def check_grid(self, grid: Grid):
        if self.method == SPLIT and not grid.periodic:
            raise ConfigurationError("split-spectral requires a periodic grid")
        if self.method == CRANK and grid.periodic:
            raise ConfigurationError("crank-nicolson requires a dirichlet-zero grid")


class WaveTimeline:
    """Ordered, normalized snapshots psi(t_j) on one grid."""

    def __init__(self, grid: Grid, times, snapshots, units: UnitSystem, check_norm: bool = True):
        times = np.asarray(times, float)
        snaps = np.asarray(snapshots, complex)
        if snaps.shape != (times.size,) + grid.shape:
            raise ValueError(f"snapshot array shape {snaps.shape} does not match "
                             f"{times.size} times on grid {grid.shape}")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        if check_norm:
            w = grid.quadrature_weights()
            norms = np.sum(np.abs(snaps) ** 2 * w, axis=tuple(range(1, snaps.ndim)))
            bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
            if bad.size:
                raise ValueError(f"snapshot {bad[0]} has norm {norms[bad[0]]!r}")
        times.setflags(write=False)
        snaps.setflags(write=False)
        self.grid = grid
        self.times = times
        self.snapshots = snaps
        self.units = units

    def __len__(self):
        return self.times.size

    def psi(self, j: int) -> ComplexField:
        return ComplexField(self.grid, self.snapshots[j])

    @property
    def final(self) -> ComplexField:
        return self.psi(len(self) - 1)


@dataclass(frozen=True, eq=False)
class EigenSolution:
    grid: Grid
    energies: np.ndarray
    states: np.ndarray
    units: UnitSystem

    def state(self, n: int) -> ComplexField:
        return ComplexField(self.grid, self.states[n])


# -- propagators -----------------------------------------------------------

def _kinetic_k2(grid: Grid) -> np.ndarray:
    k2 = np.zeros(grid.shape)
    for a in range(grid.ndim):
        shape = [1] * grid.ndim
        shape[a] = -1
        k2 = k2 + grid.wavenumbers(a).reshape(shape) ** 2
    return k2


class SplitSpectralPropagator:
    """Strang step exp(-iU dt/2hbar) F^-1 exp(-i hbar k^2 dt/2m) F exp(-iU dt/2hbar)."""

    def __init__(self, grid: Grid, U: np.ndarray, dt: float, units: UnitSystem):
        if not grid.periodic:
            raise ConfigurationError("split-spectral requires a periodic grid")
        self.grid = grid
        self.dt = dt
        self.units = units
        self._kin = np.exp(-1j * units.hbar * _kinetic_k2(grid) * dt / (2.0 * units.mass))
        self.set_potential(U)

    def set_potential(self, U):
        self._half = np.exp(-0.5j * np.asarray(U) * self.dt / self.units.hbar)

    def step(self, psi: np.ndarray) -> np.ndarray:
        psi = self._half * psi
        psi = np.fft.ifftn(self._kin * np.fft.fftn(psi))
        return self._half * psi


def _tridiagonal_kinetic(n: int, h: float, units: UnitSystem):
    """Diagonal/off-diagonal of -hbar^2/2m D2 on the n-2 interior points."""
    c = units.hbar ** 2 / (2.0 * units.mass * h * h)
    return np.full(n - 2, 2.0 * c), np.full(n - 3, -c)


class CrankNicolsonPropagator:
    """(1 + iH dt/2hbar) psi' = (1 - iH dt/2hbar) psi with zero walls.

    1D uses the full banded H.  2D applies exp(-iU dt/2hbar) half steps around
    one Crank-Nicolson kinetic solve per axis (the axis operators commute).
    ``dt`` may be negative, which gives the exact inverse step.
    """

    def __init__(self, grid: Grid, U: np.ndarray, dt: float, units: UnitSystem):
        if grid.periodic:
            raise ConfigurationError("crank-nicolson requires a dirichlet-zero grid")
        self.grid = grid
        self.dt = dt
        self.units = units
        self.set_potential(U)

    def set_potential(self, U):
        grid, dt, units = self.grid, self.dt, self.units
        U = np.asarray(U, float)
        a = 0.5j * dt / units.hbar
        self._axes = []
        if grid.ndim == 1:
            d, e = _tridiagonal_kinetic(grid.counts[0], grid.spacing[0], units)
            d = d + U[1:-1]
            self._axes.append(self._bands(d, e, a))
            self._half = None
        else:
            for ax in range(2):
                d, e = _tridiagonal_kinetic(grid.counts[ax], grid.spacing[ax], units)
                self._axes.append(self._bands(d, e, a))
            self._half = np.exp(-0.5j * U * dt / units.hbar)

    @staticmethod
    def _bands(d, e, a):
        ab = np.zeros((3, d.size), complex)
        ab[0, 1:] = a * e
        ab[1] = 1.0 + a * d
        ab[2, :-1] = a * e
        return ab, d, e, a

    @staticmethod
    def _solve(bands, rhs_in: np.ndarray) -> np.ndarray:
        """Solve along axis 0 for the interior rows of ``rhs_in`` (walls stay zero)."""
        ab, d, e, a = bands
        f = rhs_in[1:-1]
        ex = e.reshape((-1,) + (1,) * (f.ndim - 1))
        dx = d.reshape((-1,) + (1,) * (f.ndim - 1))
        rhs = (1.0 - a * dx) * f
        rhs[:-1] -= a * ex * f[1:]
        rhs[1:] -= a * ex * f[:-1]
        out = np.zeros_like(rhs_in)
        out[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
        return out

    def step(self, psi: np.ndarray) -> np.ndarray:
        if self.grid.ndim == 1:
            return self._solve(self._axes[0], psi)
        psi = self._half * psi
        psi = self._solve(self._axes[0], psi)
        psi = self._solve(self._axes[1], psi.T).T
        psi = self._half * psi
        psi[0, :] = psi[-1, :] = 0.0
        psi[:, 0] = psi[:, -1] = 0.0
        return psi


def make_propagator(method: str, grid: Grid, U, dt: float, units: UnitSystem):
    if method == SPLIT:
        return SplitSpectralPropagator(grid, U, dt, units)
    if method == CRANK:
        return CrankNicolsonPropagator(grid, U, dt, units)
    raise ConfigurationError(f"unknown method {method!r}")


PotentialInput = Union[RealField, Callable[[float], RealField]]


def evolve(psi0: ComplexField, U: PotentialInput, cfg: EvolutionConfig,
           units: UnitSystem = UnitSystem()) -> WaveTimeline:
    """Propagate ``psi0`` for ``cfg.steps`` steps, recording every ``cfg.stride``-th state.

    ``U`` is either a static field or a callable t -> field evaluated at the
    midpoint of each step.
    """
    grid = psi0.grid
    cfg.check_grid(grid)
    w = grid.quadrature_weights()
    norm0 = float(np.sum(np.abs(psi0.values) ** 2 * w))
    if abs(norm0 - 1.0) > 1e-6:
        raise ConfigurationError(f"psi0 must be normalized, got norm {norm0}")

    static = isinstance(U, RealField)
    U0 = U if static else U(0.5 * cfg.dt)
    if U0.grid != grid:
        raise ConfigurationError("potential and wavefunction live on different grids")
    umax = float(np.max(np.abs(U0.values)))
    if cfg.dt * umax / units.hbar > 0.05:
        log.warning("dt*max|U|/hbar = %.3g exceeds 0.05", cfg.dt * umax / units.hbar)
    prop = make_propagator(cfg.method, grid, U0.values, cfg.dt, units)

    psi = np.array(psi0.values, complex)
    times = [0.0]
    snaps = [psi.copy()]
    for n in range(1, cfg.steps + 1):
        if not static:
            prop.set_potential(U((n - 0.5) * cfg.dt).values)
        psi = prop.step(psi)
        if not np.all(np.isfinite(psi)):
            raise SolverError(f"non-finite wavefunction at step {n}")
        if n % cfg.stride == 0 or n == cfg.steps:
            times.append(n * cfg.dt)
            snaps.append(psi.copy())
    return WaveTimeline(grid, times, np.array(snaps), units)


# -- energies and stationary states ---------------------------------------

def apply_hamiltonian(psi: np.ndarray, U: np.ndarray, grid: Grid, units: UnitSystem) -> np.ndarray:
    return -(units.hbar ** 2 / (2.0 * units.mass)) * laplacian_values(psi, grid) + U * psi


def energy(psi: ComplexField, U: RealField, units: UnitSystem = UnitSystem()) -> float:
    """<psi|H|psi> / <psi|psi> with the grid's own Laplacian."""
    v = psi.values
    Hv = apply_hamiltonian(v, U.values, psi.grid, units)
    num = integrate_values(np.real(np.conj(v) * Hv), psi.grid)
    den = integrate_values(np.abs(v) ** 2, psi.grid)
    return float(num / den)


def _fix_sign(phi: np.ndarray) -> np.ndarray:
    mean = phi.sum()
    if abs(mean) <= 1e-8 * np.abs(phi).sum():
        # antisymmetric states: orient by the first significant lobe
        mean = phi[np.flatnonzero(np.abs(phi) > 1e-3 * np.abs(phi).max())[0]]
    return phi if mean > 0 else -phi


def solve_eigenpairs(U: RealField, n_states: int, units: UnitSystem = UnitSystem()) -> EigenSolution:
    """Lowest ``n_states`` eigenpairs of -hbar^2/2m D2 + U on a 1D dirichlet grid."""
    grid = U.grid
    if grid.ndim != 1:
        raise ConfigurationError("solve_eigenpairs supports 1D grids only; use imaginary time in 2D")
    if grid.periodic:
        raise ConfigurationError("solve_eigenpairs requires a dirichlet-zero grid")
    n = grid.counts[0]
    if not 1 <= n_states <= n // 4:
        raise ConfigurationError(f"n_states must be in [1, {n // 4}], got {n_states}")
    d, e = _tridiagonal_kinetic(n, grid.spacing[0], units)
    vals, vecs = eigh_tridiagonal(d + U.values[1:-1], e, select="i", select_range=(0, n_states - 1))
    w = grid.quadrature_weights()
    states = np.zeros((n_states, n))
    for j in range(n_states):
        phi = np.zeros(n)
        phi[1:-1] = vecs[:, j]
        phi /= np.sqrt(np.sum(w * phi ** 2))
        states[j] = _fix_sign(phi)
    return EigenSolution(grid, vals, states, units)


def _dirichlet_hamiltonian(grid: Grid, U: np.ndarray, units: UnitSystem) -> sparse.csc_matrix:
    """Sparse H on the interior points of a dirichlet grid (row-major order)."""
    ops = []
    for a in range(grid.ndim):
        d, e = _tridiagonal_kinetic(grid.counts[a], grid.spacing[a], units)
        ops.append(sparse.diags([e, d, e], [-1, 0, 1]))
    if grid.ndim == 1:
        T = ops[0]
    else:
        nx, ny = grid.counts[0] - 2, grid.counts[1] - 2
        T = sparse.kron(ops[0], sparse.identity(ny)) + sparse.kron(sparse.identity(nx), ops[1])
    interior = U[(slice(1, -1),) * grid.ndim].ravel()
    return (T + sparse.diags(interior)).tocsc()


def imaginary_time_ground_state(U: RealField, units: UnitSystem = UnitSystem(), tol: float = 1e-10,
                                dtau: float = 0.02, max_iter: int = 200_000,
                                psi0: Optional[ComplexField] = None) -> tuple[float, ComplexField, int]:
    """Relax toward the ground state along t -> -i tau.

    Periodic grids use split-operator decay steps; dirichlet grids use backward
    Euler (I + dtau H/hbar) psi' = psi.  Stops once the Rayleigh quotient
    changes by less than ``tol`` between iterations; returns (E0, phi0, iterations).
    """
    grid = U.grid
    if psi0 is None:
        coords = grid.mesh()
        center = [0.5 * (lo + hi) for lo, hi in zip(grid.lower, grid.upper)]
        width = [0.1 * (hi - lo) for lo, hi in zip(grid.lower, grid.upper)]
        phi = np.exp(-sum(((c - c0) / s) ** 2 for c, c0, s in zip(coords, center, width))).astype(complex)
        if not grid.periodic:
            for a in range(grid.ndim):
                idx = [slice(None)] * grid.ndim
                idx[a] = [0, -1]
                phi[tuple(idx)] = 0.0
    else:
        phi = np.array(psi0.values, complex)
    w = grid.quadrature_weights()

    def renorm(v):
        return v / np.sqrt(np.sum(w * np.abs(v) ** 2))

    if grid.periodic:
        half = np.exp(-0.5 * U.values * dtau / units.hbar)
        kin = np.exp(-units.hbar * _kinetic_k2(grid) * dtau / (2.0 * units.mass))

        def relax(v):
            return half * np.fft.ifftn(kin * np.fft.fftn(half * v))
    else:
        H = _dirichlet_hamiltonian(grid, U.values, units)
        lu = splu((sparse.identity(H.shape[0], format="csc") + (dtau / units.hbar) * H).tocsc())
        inner = (slice(1, -1),) * grid.ndim

        def relax(v):
            out = np.zeros_like(v)
            out[inner] = lu.solve(np.ascontiguousarray(v[inner]).ravel()).reshape(out[inner].shape)
            return out

    phi = renorm(phi)
    E = energy(ComplexField(grid, phi), U, units)
    for it in range(1, max_iter + 1):
        phi = renorm(relax(phi))
        E_new = energy(ComplexField(grid, phi), U, units)
        if not np.isfinite(E_new):
            raise SolverError(f"imaginary-time relaxation diverged at iteration {it}")
        if abs(E_new - E) < tol:
            return E_new, ComplexField(grid, phi), it
        E = E_new
    raise SolverError(f"imaginary-time relaxation did not converge in {max_iter} iterations")


def eigen_residuals(sol: EigenSolution, U: RealField) -> np.ndarray:
    """||H phi_n - E_n phi_n|| with the interior operator the eigensolver diagonalized."""
    H = _dirichlet_hamiltonian(sol.grid, U.values, sol.units)
    w = sol.grid.quadrature_weights()[1:-1]
    out = []
    for E, phi in zip(sol.energies, sol.states):
        r = H @ phi[1:-1] - E * phi[1:-1]
        out.append(float(np.sqrt(np.sum(w * r * r))))
    return np.array(out)


def eigen_gram(sol: EigenSolution) -> np.ndarray:
    """Quadrature Gram matrix <phi_n|phi_m>."""
    w = sol.grid.quadrature_weights()
    return (sol.states * w) @ sol.states.T
