"""Hamilton flows, Poincare first-variation equations, the bilinear invariant
and Benettin estimates of the largest Lyapunov exponent.

Exponents are reported as growth rates: lambda_max = -X[f] for the
characteristic value X[f] = -limsup log|f(t)|/t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from pilotwave import rng as rngmod
from pilotwave.bohm import FieldInterpolator, VelocityField
from pilotwave.fields import UnitSystem
from pilotwave.potentials import (
    PotentialSpec,
    potential_gradient,
    potential_hessian,
    potential_value,
)

STABILITY_TOL = 0.02


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class HamiltonianSpec:
    """H = |p|^2/2m + U(q)."""

    potential: PotentialSpec
    mass: float = 1.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be > 0")

    @property
    def units(self) -> UnitSystem:
        return UnitSystem(mass=self.mass)

    def energy(self, q, p):
        p = np.asarray(p, float)
        return np.sum(p ** 2, axis=-1) / (2 * self.mass) + potential_value(self.potential, q, self.units)

    def force(self, q):
        return -potential_gradient(self.potential, q, self.units)

    def hessian(self, q):
        return potential_hessian(self.potential, q, self.units)


@dataclass(frozen=True)
class ClassicalState:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, float))
        p = np.atleast_1d(np.asarray(self.p, float))
        if q.shape != p.shape:
            raise ValueError("q and p must have the same dimension")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("state components must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class VariationalState:
    xi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, float))
        eta = np.atleast_1d(np.asarray(self.eta, float))
        if xi.shape != eta.shape:
            raise ValueError("xi and eta must have the same dimension")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", eta)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.xi, self.eta])


@dataclass(frozen=True, eq=False)
class ClassicalTrajectory:
    spec: HamiltonianSpec
    times: np.ndarray
    q: np.ndarray  # (n_t, d)
    p: np.ndarray
    dt: float

    @property
    def energies(self) -> np.ndarray:
        return self.spec.energy(self.q, self.p)


@dataclass(frozen=True, eq=False)
class VariationalTrajectory:
    times: np.ndarray
    xi: np.ndarray  # (n_t, d)
    eta: np.ndarray


def _rk4(f, y, t, dt):
    k1 = f(y, t)
    k2 = f(y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(y + dt * k3, t + dt)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _hamilton_rhs(spec: HamiltonianSpec, d: int):
    def rhs(y, t):
        q, p = y[:d], y[d:]
        return np.concatenate([p / spec.mass, spec.force(q)])
    return rhs


def _joint_rhs(spec: HamiltonianSpec, d: int):
    """Reference (q, p) followed by k stacked variations (xi, eta), flattened."""
    def rhs(y, t):
        q, p = y[:d], y[d:2 * d]
        var = y[2 * d:].reshape(-1, 2 * d)
        xi, eta = var[:, :d], var[:, d:]
        hess = spec.hessian(q)
        dvar = np.concatenate([eta / spec.mass, -xi @ hess.T], axis=1)
        return np.concatenate([p / spec.mass, spec.force(q), dvar.ravel()])
    return rhs


def hamilton_flow(spec: HamiltonianSpec, x0: ClassicalState, dt: float, steps: int) -> ClassicalTrajectory:
    """Classical RK4 integration of dq/dt = dH/dp, dp/dt = -dH/dq."""
    if not (dt > 0 and steps >= 1):
        raise ValueError("dt must be > 0 and steps >= 1")
    d = x0.q.size
    rhs = _hamilton_rhs(spec, d)
    y = np.concatenate([x0.q, x0.p])
    out = np.empty((steps + 1, 2 * d))
    out[0] = y
    for n in range(steps):
        y = _rk4(rhs, y, x0.t + n * dt, dt)
        if not np.all(np.isfinite(y)):
            raise FlowError(f"non-finite state at step {n + 1}")
        out[n + 1] = y
    times = x0.t + dt * np.arange(steps + 1)
    return ClassicalTrajectory(spec, times, out[:, :d], out[:, d:], dt)


def variational_flow(spec: HamiltonianSpec, reference: ClassicalTrajectory,
                     v0: Union[VariationalState, Sequence[VariationalState]]):
    """Integrate the first-variation equations along ``reference``.

    The reference is re-integrated jointly with the variations so RK4 stages
    see the reference at intermediate times; it must reproduce ``reference``.
    Returns one VariationalTrajectory, or a list when ``v0`` is a sequence.
    """
    single = isinstance(v0, VariationalState)
    states = [v0] if single else list(v0)
    d = reference.q.shape[1]
    if any(s.xi.size != d for s in states):
        raise ValueError("variation dimension does not match the reference")
    spec.hessian(reference.q[0])  # raises for potentials without second derivatives
    rhs = _joint_rhs(spec, d)
    y = np.concatenate([reference.q[0], reference.p[0]] + [s.vector for s in states])
    n_t = reference.times.size
    hist = np.empty((n_t, len(states), 2 * d))
    hist[0] = y[2 * d:].reshape(-1, 2 * d)
    for n in range(n_t - 1):
        y = _rk4(rhs, y, reference.times[n], reference.dt)
        hist[n + 1] = y[2 * d:].reshape(-1, 2 * d)
    if not np.allclose(y[:d], reference.q[-1], rtol=1e-9, atol=1e-12):
        raise FlowError("reference trajectory was not produced by this Hamiltonian")
    sols = [VariationalTrajectory(reference.times, hist[:, k, :d], hist[:, k, d:])
            for k in range(len(states))]
    return sols[0] if single else sols


def poincare_invariant(sol_a: VariationalTrajectory, sol_b: VariationalTrajectory) -> np.ndarray:
    """C(t) = sum_s (xi_s eta'_s - eta_s xi'_s) at every time stamp."""
    if sol_a.times.shape != sol_b.times.shape or not np.array_equal(sol_a.times, sol_b.times):
        raise ValueError("variational solutions have mismatched time stamps")
    return np.sum(sol_a.xi * sol_b.eta - sol_a.eta * sol_b.xi, axis=1)


@dataclass(frozen=True, eq=False)
class LyapunovResult:
    lambda_max: float
    log_growth: np.ndarray
    renorm_interval: float

    @property
    def running(self) -> np.ndarray:
        """Running estimate after each renormalization interval."""
        k = np.arange(1, self.log_growth.size + 1)
        return np.cumsum(self.log_growth) / (k * self.renorm_interval)


def _frozen_velocity_rhs(field: VelocityField, interpolation: str):
    interp = FieldInterpolator(field.grid, field.components, interpolation)

    def rhs(y, t):
        return interp(y.reshape(-1, field.grid.ndim)).reshape(y.shape)
    return rhs


def lyapunov_estimate(flow: Union[HamiltonianSpec, VelocityField], x0, horizon: float,
                      renorm_interval: float = 1.0, dt: float = 0.05, offset: float = 1e-8,
                      seed: int = 0, interpolation: str = "cubic") -> LyapunovResult:
    """Benettin two-trajectory estimate of the largest Lyapunov exponent.

    ``flow`` is a Hamiltonian (phase-space flow, ``x0`` a ClassicalState) or a
    frozen guidance velocity field (``x0`` a position).  The offset direction
    comes from the "lyapunov-offset" random stream.
    """
    if not horizon > renorm_interval > 0:
        raise ValueError("horizon must exceed the renormalization interval")
    if isinstance(flow, HamiltonianSpec):
        y = np.concatenate([x0.q, x0.p])
        rhs = _hamilton_rhs(flow, x0.q.size)
    elif isinstance(flow, VelocityField):
        y = np.atleast_1d(np.asarray(x0, float))
        rhs = _frozen_velocity_rhs(flow, interpolation)
    else:
        raise TypeError("flow must be a HamiltonianSpec or a VelocityField")
    direction = rngmod.stream(seed, rngmod.LYAPUNOV_OFFSET).standard_normal(y.size)
    direction /= np.linalg.norm(direction)
    z = y + offset * direction
    n_sub = max(1, int(round(renorm_interval / dt)))
    h = renorm_interval / n_sub
    n_int = int(round(horizon / renorm_interval))
    logs = np.empty(n_int)
    t = 0.0
    for k in range(n_int):
        for _ in range(n_sub):
            y = _rk4(rhs, y, t, h)
            z = _rk4(rhs, z, t, h)
            t += h
        sep = np.linalg.norm(z - y)
        if not np.isfinite(sep) or sep == 0.0 or not np.all(np.isfinite(y)):
            raise FlowError(f"separation under/overflow in renormalization interval {k}")
        logs[k] = math.log(sep / offset)
        z = y + (offset / sep) * (z - y)
    return LyapunovResult(float(logs.sum() / (n_int * renorm_interval)), logs, renorm_interval)


@dataclass(frozen=True)
class StabilityVerdict:
    exponents: np.ndarray
    tolerance: float

    @property
    def stable(self) -> bool:
        return bool(np.all(np.abs(self.exponents) <= self.tolerance))

    @property
    def verdict(self) -> str:
        return "stable (first approximation)" if self.stable else "unstable"


def zero_characteristic_check(spec: HamiltonianSpec, x0: ClassicalState,
                              variations: Sequence[VariationalState], horizon: float,
                              renorm_interval: float = 1.0, dt: float = 0.05,
                              tolerance: float = STABILITY_TOL) -> StabilityVerdict:
    """Estimate the exponent of each independent variational solution along the
    reference through ``x0``; stable iff every |exponent| <= ``tolerance``."""
    V = np.array([v.vector for v in variations], float)
    if V.ndim != 2 or V.shape[1] != 2 * x0.q.size:
        raise ValueError("variations do not match the phase-space dimension")
    norms = np.linalg.norm(V, axis=1)
    if np.any(norms == 0) or np.linalg.det((V / norms[:, None]) @ (V / norms[:, None]).T) < 1e-10:
        raise ValueError("variational solutions are not independent (Gram determinant < 1e-10)")
    d = x0.q.size
    rhs = _joint_rhs(spec, d)
    var = V / norms[:, None]
    ref = np.concatenate([x0.q, x0.p])
    n_sub = max(1, int(round(renorm_interval / dt)))
    h = renorm_interval / n_sub
    n_int = int(round(horizon / renorm_interval))
    logs = np.zeros(len(variations))
    t = x0.t
    for k in range(n_int):
        y = np.concatenate([ref, var.ravel()])
        for _ in range(n_sub):
            y = _rk4(rhs, y, t, h)
            t += h
        ref = y[:2 * d]
        var = y[2 * d:].reshape(-1, 2 * d)
        growth = np.linalg.norm(var, axis=1)
        if np.any(~np.isfinite(growth)) or np.any(growth == 0):
            raise FlowError(f"variation under/overflow in interval {k}")
        logs += np.log(growth)
        var = var / growth[:, None]
    return StabilityVerdict(logs / (n_int * renorm_interval), tolerance)
