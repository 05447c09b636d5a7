import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import free_gaussian_exact, gaussian
from pilotwave.bohm import TrajectoryEnsemble, sample_initial_positions
from pilotwave.diagnostics import (
    Bump,
    DiagnosticsReport,
    chetaev_residual,
    continuity_residual,
    epsilon_field,
    equivariance_statistic,
    madelung_residuals,
    non_crossing,
    perturbation_action,
    stationarity_probe,
    uncertainty_check,
)
from pilotwave.fields import DIRICHLET, ComplexField, FieldError, UnitSystem, make_grid, normalize
from pilotwave.potentials import PotentialSpec, eval_potential
from pilotwave.tdse import EvolutionConfig, WaveTimeline, evolve, solve_eigenpairs

FREE_GRID = make_grid([[-20, 20]], 512)
BOX_GRID = make_grid([[0, 1]], 513, DIRICHLET)


def stationary_timeline(phi, E, times, units=UnitSystem()):
    return WaveTimeline(phi.grid, times, np.array([phi.values * np.exp(-1j * E * t / units.hbar) for t in times]),
                        units)


@pytest.fixture(scope="module")
def box():
    U = eval_potential(PotentialSpec("box"), BOX_GRID)
    return U, solve_eigenpairs(U, 2)


@pytest.fixture(scope="module")
def harmonic():
    g = make_grid([[-8, 8]], 512, DIRICHLET)
    U = eval_potential(PotentialSpec("harmonic"), g)
    return U, solve_eigenpairs(U, 2)


def free_timeline(n=512, dt=0.01, steps=200):
    g = make_grid([[-20, 20]], n)
    return evolve(gaussian(g), eval_potential(PotentialSpec("free"), g), EvolutionConfig(dt, steps)), g


def coherent_state(grid, t, x0=1.0):
    """Displaced harmonic ground state (m = omega = hbar = 1) at time t."""
    xc, pc = x0 * np.cos(t), -x0 * np.sin(t)
    x = grid.axis(0)
    phase = pc * x - 0.5 * t - 0.5 * xc * pc
    return ComplexField(grid, np.pi ** -0.25 * np.exp(-(x - xc) ** 2 / 2 + 1j * phase))


class TestChetaev:
    def test_eigenstate(self, box, harmonic):
        for _, sol in (box, harmonic):
            for n in range(2):
                _, norm = chetaev_residual(sol.state(n))
                assert norm <= 1e-10

    @pytest.mark.parametrize("t", [0.3, 1.0, 2.5])
    def test_coherent_state(self, t):
        g = make_grid([[-10, 10]], 512)
        _, norm = chetaev_residual(coherent_state(g, t))
        assert norm <= 1e-6

    def test_free_gaussian_rate(self):
        L, norm = chetaev_residual(free_gaussian_exact(FREE_GRID, 1.0))
        core = np.abs(FREE_GRID.axis(0)) < 5
        np.testing.assert_allclose(L.values[core], 0.2, atol=1e-3)
        assert norm == pytest.approx(0.2, abs=1e-3)


class TestEpsilon:
    def test_eigenstate_zero(self, box):
        eps = epsilon_field(box[1].state(0)).values
        # the walls are nodes and carry no value
        assert np.isnan(eps[[0, -1]]).all()
        assert not np.any(eps[1:-1])

    def test_free_gaussian(self):
        eps = epsilon_field(free_gaussian_exact(FREE_GRID, 1.0))
        core = np.abs(FREE_GRID.axis(0)) < 5
        np.testing.assert_allclose(eps.values[core], 0.1, atol=1e-3)

    @pytest.mark.parametrize("hbar", [0.5, 1.7])
    def test_is_half_hbar_times_residual(self, hbar):
        u = UnitSystem(hbar=hbar)
        psi = free_gaussian_exact(FREE_GRID, 0.7)
        L, _ = chetaev_residual(psi, u)
        np.testing.assert_array_equal(epsilon_field(psi, u).values, 0.5 * hbar * L.values)

    def test_doubling_hbar_at_fixed_velocity(self):
        x = FREE_GRID.axis(0)
        amp = np.exp(-x ** 2 / 4)
        c = 0.15
        # phase S = c x^2 in both cases, so v = 2 c x / m is the same field
        e1 = epsilon_field(normalize(ComplexField(FREE_GRID, amp * np.exp(1j * c * x ** 2))), UnitSystem(1.0))
        e2 = epsilon_field(normalize(ComplexField(FREE_GRID, amp * np.exp(0.5j * c * x ** 2))), UnitSystem(2.0))
        core = np.abs(x) < 6
        np.testing.assert_allclose(e2.values[core], 2 * e1.values[core], rtol=1e-8)


class TestContinuity:
    def test_stationary(self, harmonic):
        U, sol = harmonic
        tl = stationary_timeline(sol.state(1), sol.energies[1], [0.0, 0.01, 0.02, 0.03])
        assert np.all(continuity_residual(tl) <= 1e-10)

    def test_needs_three_snapshots(self, harmonic):
        U, sol = harmonic
        with pytest.raises(ValueError):
            continuity_residual(stationary_timeline(sol.state(0), sol.energies[0], [0.0, 0.01]))

    def test_free_gaussian_convergence(self):
        coarse, _ = free_timeline()
        fine, _ = free_timeline(1024, 0.005, 400)
        rc = continuity_residual(coarse).max()
        rf = continuity_residual(fine).max()
        assert rc < 1e-3
        assert 3.5 <= rc / rf <= 4.5

    def test_manufactured_advection(self):
        """Periodic bump carried at uniform speed c: exact solution with zero residual."""
        L = 2 * np.pi
        g = make_grid([[0, L]], 256)
        x = g.axis(0)
        c = 2.0
        times = np.arange(5) * 1e-3

        def psi(t):
            P = np.exp(np.cos(x - c * t))
            return np.sqrt(P / (P.sum() * g.spacing[0])) * np.exp(1j * (c * x - 0.5 * c * c * t))
        tl = WaveTimeline(g, times, np.array([psi(t) for t in times]), UnitSystem())
        assert np.all(continuity_residual(tl) <= 1e-4)


class TestMadelung:
    def test_stationary(self, harmonic):
        U, sol = harmonic
        tl = stationary_timeline(sol.state(0), sol.energies[0], [0.0, 0.01, 0.02])
        amp, phase = madelung_residuals(tl, U)
        assert amp.max() <= 1e-10 and phase.max() <= 1e-6

    def test_plane_wave(self):
        g = make_grid([[0, 2 * np.pi]], 128)
        x = g.axis(0)
        p = 3.0
        times = np.array([0.0, 0.01, 0.02])
        snaps = [np.exp(1j * (p * x - 0.5 * p * p * t)) / np.sqrt(2 * np.pi) for t in times]
        amp, phase = madelung_residuals(WaveTimeline(g, times, np.array(snaps), UnitSystem()),
                                        eval_potential(PotentialSpec("free"), g))
        assert amp.max() <= 1e-10 and phase.max() <= 1e-10

    def test_free_gaussian_solver(self):
        tl, g = free_timeline()
        amp, phase = madelung_residuals(tl, eval_potential(PotentialSpec("free"), g))
        assert amp.max() <= 1e-3 and phase.max() <= 1e-3


class TestUncertainty:
    grid = make_grid([[-20, 20]], 1024)

    def test_minimum_uncertainty_gaussian(self):
        r = uncertainty_check(gaussian(self.grid))
        assert r.var_x == pytest.approx(1.0, abs=1e-8)
        assert r.var_p == pytest.approx(0.25, abs=1e-8)
        assert 2 * r.mass * r.mean_Q == pytest.approx(0.25, abs=1e-8)
        assert r.product == pytest.approx(0.25, abs=1e-8)
        assert r.bound == 0.25

    def test_boost_changes_mean_only(self):
        base = uncertainty_check(gaussian(self.grid))
        boosted = uncertainty_check(gaussian(self.grid, momentum=1.3))
        assert boosted.var_p == pytest.approx(base.var_p, abs=1e-8)
        assert abs(boosted.gradS_var) <= 1e-8
        assert boosted.decomposition_error <= 1e-8

    def test_first_excited_harmonic(self):
        x = self.grid.axis(0)
        psi = normalize(ComplexField(self.grid, x * np.exp(-x ** 2 / 2)))
        r = uncertainty_check(psi)
        assert r.var_x == pytest.approx(1.5, abs=1e-8)
        assert r.var_p == pytest.approx(1.5, abs=1e-8)
        assert r.product == pytest.approx(2.25, abs=1e-8) and r.product >= r.bound
        assert r.decomposition_error <= 1e-8

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.6, 2.0), st.floats(-2, 2), st.floats(-0.3, 0.3))
    def test_decomposition_identity(self, center, sigma, momentum, chirp):
        x = self.grid.axis(0)
        v = np.exp(-(x - center) ** 2 / (4 * sigma ** 2) + 1j * (momentum * x + chirp * x ** 2))
        r = uncertainty_check(normalize(ComplexField(self.grid, v)))
        assert r.decomposition_error <= 1e-8
        assert r.product >= r.bound * (1 - 1e-10)

    def test_rejects_unnormalized(self):
        with pytest.raises(FieldError):
            uncertainty_check(ComplexField(self.grid, 2 * gaussian(self.grid).values))


class TestAction:
    grid = make_grid([[-20, 20]], 1024)

    def test_gaussian_both_routes(self):
        r = perturbation_action(gaussian(self.grid))
        assert r.action == pytest.approx(0.125, abs=1e-8)
        assert r.fisher_form == pytest.approx(0.125, abs=1e-8)

    def test_plane_wave(self):
        g = make_grid([[0, 2 * np.pi]], 64)
        r = perturbation_action(normalize(ComplexField(g, np.exp(3j * g.axis(0)))))
        assert abs(r.action) <= 1e-12 and abs(r.fisher_form) <= 1e-12

    def test_box_ground_state(self, box):
        r = perturbation_action(box[1].state(0))
        assert r.action == pytest.approx(math.pi ** 2 / 2, abs=1e-3)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.6, 2.0), st.floats(-2, 2))
    def test_routes_agree(self, center, sigma, momentum):
        r = perturbation_action(gaussian(self.grid, center, sigma, momentum))
        assert r.relative_gap <= 1e-6


class TestStationarity:
    @pytest.mark.parametrize("center", [0.5, 0.35])
    def test_box_ground_state(self, box, center):
        rec = stationarity_probe(box[1].state(0), Bump((center,), 0.1))
        assert abs(rec.derivative) <= 1e-4

    def test_excited_state_is_reported(self, box):
        rec = stationarity_probe(box[1].state(1), Bump((0.3,), 0.1))
        assert np.isfinite(rec.derivative) and np.isfinite(rec.second_variation)

    def test_non_eigenstate(self):
        x = BOX_GRID.axis(0)
        a = np.exp(-(x - 0.4) ** 2 / (2 * 0.1 ** 2))
        a[[0, -1]] = 0
        psi = normalize(ComplexField(BOX_GRID, a))
        assert abs(stationarity_probe(psi, Bump((0.5,), 0.1)).derivative) > 1e-2

    def test_bump_at_wall(self, box):
        with pytest.raises(ValueError):
            stationarity_probe(box[1].state(0), Bump((0.05,), 0.1))

    def test_complex_input_rejected(self, box):
        psi = ComplexField(BOX_GRID, box[1].state(0).values * np.exp(0.3j * BOX_GRID.axis(0)))
        with pytest.raises(ValueError):
            stationarity_probe(psi, Bump((0.5,), 0.1))


def ensemble_from(q):
    q = np.asarray(q, float).reshape(1, -1, 1)
    return TrajectoryEnsemble(np.zeros(1), q, np.zeros(q.shape[1], bool), 0.0, "linear")


class TestEquivariance:
    def test_resampling_floor(self):
        P = free_gaussian_exact(FREE_GRID, 2.0).density
        q = sample_initial_positions(P, 100_000, seed=11)
        assert equivariance_statistic(ensemble_from(q), P, 50)["tv_distance"] < 0.02

    def test_single_particle(self):
        P = gaussian(FREE_GRID).density
        tv = equivariance_statistic(ensemble_from([0.1]), P, 50)["tv_distance"]
        assert 0 <= tv <= 1

    def test_empty(self):
        with pytest.raises(ValueError):
            equivariance_statistic(ensemble_from([]), gaussian(FREE_GRID).density)

    def test_bin_masses_sum_to_one(self):
        stat = equivariance_statistic(ensemble_from([0.0]), gaussian(FREE_GRID).density, 37)
        assert stat["expected"].sum() == pytest.approx(1.0, abs=1e-12)
        assert stat["expected"].size == 37


def test_non_crossing_detects_swap():
    pos = np.array([[[0.0], [1.0]], [[0.5], [0.6]], [[0.7], [0.6]]])
    ens = TrajectoryEnsemble(np.arange(3.0), pos, np.zeros(2, bool), 0.1, "linear")
    assert not non_crossing(ens)
    ens.positions = pos[:2]
    assert non_crossing(ens)


class TestReport:
    def test_csv_and_pass_flag(self):
        rep = DiagnosticsReport("demo")
        rep.add("a", 1e-9, 1e-8)
        rep.add("b", 0.5, 0.1)
        rows = list(csv.reader(io.StringIO(rep.to_csv())))
        assert rows[0] == ["name", "value", "tolerance", "pass"]
        assert rows[1][3] == "true" and rows[2][3] == "false"
        assert float(rows[1][1]) == 1e-9
        assert not rep.passed

    def test_nan_fails(self):
        rep = DiagnosticsReport("demo")
        rep.add("x", float("nan"), 1.0)
        assert not rep.passed

    def test_failures_fail_the_report(self):
        rep = DiagnosticsReport("demo")
        rep.add("a", 0.0, 1.0)
        assert rep.passed
        rep.failures.append("SolverError: boom")
        assert not rep.passed
        assert "error: SolverError: boom" in rep.summary()
        assert rep.summary().rstrip().endswith("overall: FAIL")
