"""End-to-end acceptance criteria 1-11, each reported as one PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, free_gaussian_exact, scenario_path
from pilotwave.bohm import integrate_trajectories, quantum_potential, quantum_potential_psi
from pilotwave.classical import (
    ClassicalState,
    HamiltonianSpec,
    VariationalState,
    hamilton_flow,
    lyapunov_estimate,
    poincare_invariant,
    variational_flow,
    zero_characteristic_check,
)
from pilotwave.cli import main
from pilotwave.config import parse_config
from pilotwave.diagnostics import (
    Bump,
    chetaev_residual,
    continuity_residual,
    madelung_residuals,
    non_crossing,
    perturbation_action,
    stationarity_probe,
    uncertainty_check,
    weighted_norm,
)
from pilotwave.fields import ComplexField, UnitSystem, make_grid, polar_decompose
from pilotwave.io import read_qhdf
from pilotwave.potentials import PotentialSpec, eval_potential
from pilotwave.runner import (
    build_grid,
    build_initial_state,
    build_potential_spec,
    build_units,
    evolution_config,
    qpotential_agreement,
    run_scenario,
)
from pilotwave.tdse import EvolutionConfig, evolve, solve_eigenpairs

GALLERY = ["free_gaussian", "harmonic_coherent", "box_eigenstates", "harmonic_eigen",
           "inverted_oscillator", "double_slit_2d"]


class Criterion:
    """Collects named checks and reports them as a single line."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.checks: list[tuple[str, bool, str]] = []

    def check(self, label: str, ok, detail: str = "") -> None:
        self.checks.append((label, bool(ok), detail))

    def conclude(self) -> None:
        failed = [c for c in self.checks if not c[1]]
        status = "FAIL" if failed or not self.checks else "PASS"
        shown = failed or self.checks
        details = "; ".join(f"{label} {detail}".strip() for label, _, detail in shown)
        line = f"criterion {self.number:2d} {status}  {self.title}  [{details}]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert status == "PASS", line


def load(name: str) -> dict:
    return parse_config(scenario_path(name).read_text())


@pytest.fixture(scope="session")
def gallery(tmp_path_factory):
    """Single-threaded runs of the bundled scenarios, computed on first use."""
    base = tmp_path_factory.mktemp("gallery")
    cache = {}

    def get(name):
        if name not in cache:
            t0 = time.perf_counter()
            result = run_scenario(load(name), base / name, threads=1)
            cache[name] = (result, time.perf_counter() - t0)
        return cache[name]
    return get


def coherent_state(grid, t, x0=1.0):
    """Displaced harmonic ground state (m = omega = hbar = 1) at time t."""
    xc, pc = x0 * np.cos(t), -x0 * np.sin(t)
    x = grid.axis(0)
    phase = pc * x - 0.5 * t - 0.5 * xc * pc
    return ComplexField(grid, np.pi ** -0.25 * np.exp(-(x - xc) ** 2 / 2 + 1j * phase))


def test_criterion_01_quantization(tmp_path):
    c = Criterion(1, "quantization of harmonic and box spectra")
    t0 = time.perf_counter()
    harmonic = run_scenario(load("harmonic_eigen"), tmp_path / "h", command="spectrum")
    box = run_scenario(load("box_eigenstates"), tmp_path / "b", command="spectrum")
    elapsed = time.perf_counter() - t0
    E_h = np.array([float(e) for e in harmonic.report.provenance["energies"].split()])
    E_b = float(box.report.provenance["energies"].split()[0])
    gap_h = np.max(np.abs(E_h[:4] - (np.arange(4) + 0.5)))
    gap_b = abs(E_b - math.pi ** 2 / 2) / (math.pi ** 2 / 2)
    c.check("harmonic n<=3", gap_h <= 1e-3, f"{gap_h:.2e}")
    c.check("box E1 rel", gap_b <= 1e-3, f"{gap_b:.2e}")
    c.check("runtime", elapsed < 5.0, f"{elapsed:.2f}s")
    c.conclude()


def test_criterion_02_quantum_potential_identity():
    c = Criterion(2, "amplitude and Hamilton-Jacobi quantum potentials agree")
    t0 = time.perf_counter()
    for name in ("free_gaussian", "harmonic_coherent", "box_eigenstates", "double_slit_2d"):
        cfg = load(name)
        if name == "double_slit_2d":
            # a short stretch of the 2D run keeps this inside the time budget
            cfg["evolution"].update(steps=96, stride=16)
        units = build_units(cfg)
        grid = build_grid(cfg)
        U = eval_potential(build_potential_spec(cfg), grid, units)
        psi0 = build_initial_state(cfg, grid, U, units)
        coarse = evolve(psi0, U, evolution_config(cfg), units)
        j = (len(coarse) - 1) // 2
        stride = cfg["evolution"]["stride"]
        fine = evolve(psi0, U, evolution_config(cfg, refine=2, steps=2 * j * stride + stride), units)
        diff, err = qpotential_agreement(coarse, fine, U, j)
        c.check(name, diff <= 10 * err, f"{diff:.1e}<=10x{err:.1e}")

    for name in ("harmonic_eigen", "box_eigenstates"):
        cfg = load(name)
        U = eval_potential(build_potential_spec(cfg), build_grid(cfg))
        sol = solve_eigenpairs(U, 4)
        # |psi| has a kink at every node, so the amplitude stencil is exact only for the
        # nodeless ground state; the psi form covers the excited states
        forms = [(0, quantum_potential(*polar_decompose(sol.state(0), UnitSystem())[::2]))]
        forms += [(n, quantum_potential_psi(sol.state(n))) for n in range(4)]
        worst = 0.0
        for n, q in forms:
            Q = q.values
            bad = q.mask.values | ~np.isfinite(Q)
            worst = max(worst, weighted_norm(Q - (sol.energies[n] - U.values), np.abs(sol.states[n]) ** 2,
                                             U.grid, bad))
        c.check(f"{name} Q=E-U", worst <= 1e-6, f"{worst:.1e}")
    elapsed = time.perf_counter() - t0
    c.check("runtime", elapsed < 10.0, f"{elapsed:.2f}s")
    c.conclude()


def test_criterion_03_chetaev(gallery):
    c = Criterion(3, "stability-condition residual")
    worst = 0.0
    for name in ("harmonic_eigen", "box_eigenstates"):
        cfg = load(name)
        U = eval_potential(build_potential_spec(cfg), build_grid(cfg))
        sol = solve_eigenpairs(U, 4)
        for n in range(4):
            for phase in (1.0, np.exp(0.7j)):
                psi = ComplexField(U.grid, phase * sol.states[n])
                worst = max(worst, chetaev_residual(psi)[1])
    c.check("eigenstates", worst <= 1e-10, f"{worst:.1e}")

    coherent, _ = gallery("harmonic_coherent")
    tl = coherent.timeline
    res = max(chetaev_residual(tl.psi(j))[1] for j in range(0, len(tl), 10))
    c.check("coherent (solver)", res <= 1e-6, f"{res:.1e}")
    exact = max(chetaev_residual(coherent_state(tl.grid, t))[1] for t in np.linspace(0, math.pi, 7))
    c.check("coherent (exact)", exact <= 1e-6, f"{exact:.1e}")

    free, _ = gallery("free_gaussian")
    j = int(np.argmin(np.abs(free.timeline.times - 1.0)))
    rate = chetaev_residual(free.timeline.psi(j))[1]
    c.check("free t=1", abs(rate - 0.2) <= 1e-3, f"{rate:.5f}")
    c.conclude()


def test_criterion_04_uncertainty(gallery):
    c = Criterion(4, "uncertainty product and dispersion split")
    free, _ = gallery("free_gaussian")
    coherent, _ = gallery("harmonic_coherent")
    g = free.timeline.grid
    product = uncertainty_check(free.timeline.psi(0)).product
    c.check("min product", abs(product - 0.25) <= 1e-8, f"{abs(product - 0.25):.1e}")
    analytic = [free_gaussian_exact(g, 1.0), free_gaussian_exact(g, 2.0),
                coherent_state(coherent.timeline.grid, 1.3)]
    err = max(uncertainty_check(psi).decomposition_error for psi in analytic)
    c.check("analytic split", err <= 1e-8, f"{err:.1e}")
    err = max(uncertainty_check(r.timeline.final).decomposition_error for r in (free, coherent))
    c.check("solver split", err <= 1e-5, f"{err:.1e}")
    c.conclude()


def test_criterion_05_perturbation_action(gallery):
    c = Criterion(5, "perturbation action routes and box value")
    free, _ = gallery("free_gaussian")
    coherent, _ = gallery("harmonic_coherent")
    states = [free.timeline.psi(0), free.timeline.final, coherent.timeline.psi(0), coherent.timeline.final]
    gap = max(perturbation_action(psi).relative_gap for psi in states)
    c.check("dual routes", gap <= 1e-6, f"{gap:.1e}")
    cfg = load("box_eigenstates")
    U = eval_potential(build_potential_spec(cfg), build_grid(cfg))
    ground = solve_eigenpairs(U, 1).state(0)
    action = perturbation_action(ground).action
    c.check("box action", abs(action - math.pi ** 2 / 2) <= 1e-3, f"{abs(action - math.pi ** 2 / 2):.1e}")
    deriv = max(abs(stationarity_probe(ground, Bump((x,), 0.1)).derivative) for x in (0.35, 0.5, 0.65))
    c.check("probe derivative", deriv <= 1e-4, f"{deriv:.1e}")
    c.conclude()


def test_criterion_06_equivariance(gallery):
    c = Criterion(6, "equivariance of 1e5-particle ensembles")
    for name in ("free_gaussian", "harmonic_coherent"):
        result, elapsed = gallery(name)
        cfg = load(name)
        c.check(f"{name} setup", cfg["trajectories"]["count"] == 100_000 and
                next(d for d in cfg["diagnostics"] if d["name"] == "equivariance")["bins"] == 50)
        tv = result.report["equivariance_tv"].value
        c.check(f"{name} TV", tv < 0.03, f"{tv:.4f}")
        c.check(f"{name} order kept", non_crossing(result.ensemble))
        c.check(f"{name} runtime", elapsed < 60.0, f"{elapsed:.1f}s")
    c.conclude()


def test_criterion_07_trajectory_oracle(gallery):
    c = Criterion(7, "free-packet trajectories scale as sqrt(1 + t^2/4)")
    free, _ = gallery("free_gaussian")
    tl = free.timeline
    x0 = np.array([[0.5], [1.0], [2.0]])
    ens = integrate_trajectories(tl, x0, substeps=4)
    j = int(np.argmin(np.abs(tl.times - 2.0)))
    err = np.max(np.abs(ens.positions[j, :, 0] - math.sqrt(2) * x0[:, 0]))
    c.check("x(2)", tl.times[j] == pytest.approx(2.0) and err <= 2e-3, f"{err:.1e}")
    c.conclude()


def test_criterion_08_classical_stability():
    c = Criterion(8, "variational invariant, exponents and verdicts")
    harmonic = HamiltonianSpec(PotentialSpec("harmonic"))
    inverted = HamiltonianSpec(PotentialSpec("inverted-harmonic", kappa=1.0))
    basis = [VariationalState([1.0], [0.0]), VariationalState([0.0], [1.0])]
    x0 = ClassicalState([1.0], [0.0])
    ref = hamilton_flow(harmonic, x0, 20 * math.pi / 6284, 6284)
    C = poincare_invariant(*variational_flow(harmonic, ref, basis))
    drift = np.max(np.abs(C - C[0]))
    c.check("invariant drift", drift <= 1e-8, f"{drift:.1e}")
    lam_h = lyapunov_estimate(harmonic, x0, 200).lambda_max
    c.check("lambda harmonic", abs(lam_h) <= 0.01, f"{lam_h:.1e}")
    saddle = ClassicalState([0.0], [0.0])
    lam_i = lyapunov_estimate(inverted, saddle, 200).lambda_max
    c.check("lambda inverted", abs(lam_i - 1.0) <= 0.02, f"{lam_i:.4f}")
    stable = zero_characteristic_check(harmonic, x0, basis, 200).stable
    unstable = not zero_characteristic_check(inverted, saddle, basis, 200).stable
    c.check("verdicts", stable and unstable)
    c.conclude()


def test_criterion_09_hydrodynamic_residuals():
    c = Criterion(9, "continuity and Madelung residuals converge at second order")
    U_of = {}

    def residuals(n, dt, steps):
        g = make_grid([[-20, 20]], n)
        U_of[n] = U = eval_potential(PotentialSpec("free"), g)
        x = g.axis(0)
        psi0 = ComplexField(g, (2 * np.pi) ** -0.25 * np.exp(-x ** 2 / 4))
        tl = evolve(psi0, U, EvolutionConfig(dt, steps))
        amp, phase = madelung_residuals(tl, U)
        return np.array([continuity_residual(tl).max(), amp.max(), phase.max()])

    ref = residuals(512, 0.01, 200)
    half = residuals(1024, 0.005, 400)
    for label, r, ratio in zip(("continuity", "madelung amplitude", "madelung phase"), ref, ref / half):
        c.check(label, r <= 1e-3 and 3.5 <= ratio <= 4.5, f"{r:.1e} ratio {ratio:.2f}")
    c.conclude()


def test_criterion_10_determinism(gallery, tmp_path):
    c = Criterion(10, "byte-identical outputs across reruns and thread counts")
    for name in GALLERY:
        first, _ = gallery(name)
        other = tmp_path / name
        code = main(["run", str(scenario_path(name)), "--out", str(other), "--threads", "3", "--quiet"])
        a = {p.name: p.read_bytes() for p in first.out_dir.iterdir() if p.name != "manifest.json"}
        b = {p.name: p.read_bytes() for p in other.iterdir() if p.name != "manifest.json"}
        c.check(name, code == first.manifest.exit_code == 0 and a == b and len(a) >= 4, f"{len(a)} files")
    c.conclude()


def test_criterion_11_double_slit(gallery):
    c = Criterion(11, "double-slit far-field fringes")
    result, _ = gallery("double_slit_2d")
    c.check("reported peaks", result.report["fringe_symmetric_peaks"].passed,
            f"{result.report['fringe_symmetric_peaks'].value:.0f}")
    # independent count: strict local maxima above 10% of the peak with a mirror partner
    rows = np.genfromtxt(result.out_dir / "fringes.csv", delimiter=",", names=True)
    counts = rows["observed"]
    centers = 0.5 * (rows["left"] + rows["right"])
    width = rows["right"][0] - rows["left"][0]
    padded = np.concatenate([[0], counts, [0]])
    is_max = (padded[1:-1] > padded[:-2]) & (padded[1:-1] >= padded[2:]) & (counts >= 0.1 * counts.max())
    maxima = centers[is_max]
    mirrored = [x for x in maxima if np.any(np.abs(maxima + x) <= width * (1 + 1e-9))]
    c.check("mirrored maxima", len(mirrored) >= 3, f"{len(mirrored)} at {np.round(mirrored, 2).tolist()}")
    final = read_qhdf(result.out_dir / "psi_3200.qhdf")
    c.check("final snapshot", final.values.shape == (256, 256))
    c.conclude()
