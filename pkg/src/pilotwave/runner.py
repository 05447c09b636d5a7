"""Scenario execution: solver, trajectories, diagnostics and artifact files.

Every number a run writes is a pure function of the parsed config; thread
count only changes how particle batches are scheduled.
"""
from __future__ import annotations

import contextlib
import json
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy
from scipy.signal import find_peaks
from threadpoolctl import threadpool_limits

from pilotwave import __version__
from pilotwave import io as qio
from pilotwave.bohm import (
    TrajectoryEnsemble,
    integrate_trajectories,
    quantum_potential,
    quantum_potential_hj,
    sample_initial_positions,
)
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
from pilotwave.config import TRAJECTORY_DIAGNOSTICS, ConfigError, canonical_json, config_hash, validate
from pilotwave.diagnostics import (
    Bump,
    DiagnosticsReport,
    chetaev_residual,
    continuity_residual,
    equivariance_statistic,
    madelung_residuals,
    perturbation_action,
    stationarity_probe,
    uncertainty_check,
    weighted_norm,
)
from pilotwave.fields import (
    ComplexField,
    FieldError,
    Grid,
    GridError,
    RealField,
    UnitSystem,
    make_grid,
    normalize,
    polar_decompose,
)
from pilotwave.potentials import PotentialError, PotentialSpec, eval_potential
from pilotwave.tdse import (
    ConfigurationError,
    EvolutionConfig,
    WaveTimeline,
    eigen_gram,
    eigen_residuals,
    energy,
    evolve,
    imaginary_time_ground_state,
    solve_eigenpairs,
)

log = logging.getLogger(__name__)

STAGES = ("spectrum", "wave", "trajectories", "classical")
EXIT_PASS, EXIT_DIAGNOSTICS, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
CONFIG_ERRORS = (ConfigError, ConfigurationError, PotentialError, GridError)
LOCK_NAME = ".lock"


class RunError(RuntimeError):
    pass


# -- building blocks from config ------------------------------------------

def build_units(cfg: dict) -> UnitSystem:
    return UnitSystem(hbar=cfg["units"]["hbar"], mass=cfg["units"]["mass"])


def build_grid(cfg: dict) -> Grid:
    g = cfg["grid"]
    return make_grid(g["bounds"], g["counts"], g["boundary"])


def build_potential_spec(cfg: dict) -> PotentialSpec:
    p = cfg["potential"]
    return PotentialSpec(kind=p["kind"], omega=p["omega"], kappa=p["kappa"], height=p["height"],
                         center=tuple(p["center"]), width=p["width"], wall=p["wall"],
                         thickness=p["thickness"], slits=tuple(p["slits"]))


def _state_values(state: dict, grid: Grid, U: RealField, units: UnitSystem) -> np.ndarray:
    kind = state["kind"]
    coords = grid.mesh()
    if kind == "gaussian":
        arg = sum(-(x - c) ** 2 / (4.0 * s * s) + 1j * p * x / units.hbar
                  for x, c, s, p in zip(coords, state["center"], state["sigma"], state["momentum"]))
        return np.exp(arg)
    if kind == "plane_wave":
        return np.exp(1j * sum(p * x for x, p in zip(coords, state["momentum"])) / units.hbar)
    if kind == "eigenstate":
        n = state["n"]
        if grid.ndim == 1 and not grid.periodic:
            sol = solve_eigenpairs(U, max(n + 1, 1), units)
            return sol.states[n].astype(complex)
        if n:
            raise ConfigurationError("excited eigenstates need a 1D dirichlet-zero grid")
        return np.array(imaginary_time_ground_state(U, units)[1].values)
    total = np.zeros(grid.shape, complex)
    for comp in state["components"]:
        part = _state_values(comp["state"], grid, U, units)
        part = normalize(ComplexField(grid, part)).values
        total = total + complex(*comp["weight"]) * part
    return total


def build_initial_state(cfg: dict, grid: Grid, U: RealField, units: UnitSystem) -> ComplexField:
    values = _state_values(cfg["initial_state"], grid, U, units)
    if not grid.periodic:
        for a in range(grid.ndim):
            idx = [slice(None)] * grid.ndim
            idx[a] = [0, -1]
            values[tuple(idx)] = 0.0
    return normalize(ComplexField(grid, values))


def evolution_config(cfg: dict, refine: int = 1, steps: Optional[int] = None) -> EvolutionConfig:
    e = cfg["evolution"]
    return EvolutionConfig(dt=e["dt"] / refine, steps=steps or e["steps"] * refine,
                           method=e["method"], stride=e["stride"])


def snapshot_steps(cfg: dict) -> list[int]:
    """Solver step index of every timeline snapshot."""
    steps, stride = cfg["evolution"]["steps"], cfg["evolution"]["stride"]
    out = list(range(0, steps + 1, stride))
    if out[-1] != steps:
        out.append(steps)
    return out


def saved_snapshots(cfg: dict) -> list[int]:
    """Timeline indices written to disk (always including the first and last)."""
    n = len(snapshot_steps(cfg))
    idx = list(range(0, n, cfg["output"]["snapshot_stride"]))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    return idx


def trajectory_samples(n_times: int, samples: int) -> list[int]:
    return sorted(set(np.round(np.linspace(0, n_times - 1, min(samples, n_times))).astype(int).tolist()))


# -- diagnostics ------------------------------------------------------------

def _tolerance(d: dict) -> float:
    return d["tolerance"]


def qpotential_agreement(coarse: WaveTimeline, fine: WaveTimeline, U: RealField, j: int) -> tuple[float, float]:
    """(|Q_amp - Q_hj|, measured discretization error) in P-weighted L2 at snapshot ``j``.

    ``fine`` must be the same evolution at half the time step with the same
    snapshot stride, so fine snapshot 2j sits at the time of coarse snapshot j.
    The error estimate is the coarse/fine change of both routes.
    """
    if not np.isclose(fine.times[2 * j], coarse.times[j], rtol=0, atol=1e-12 * max(1.0, coarse.times[j])):
        raise ValueError("fine timeline is not aligned with the coarse one")
    units = coarse.units

    def routes(tl, k):
        A, _, node = polar_decompose(tl.psi(k), units)
        qa = quantum_potential(A, node, units).values
        qh = quantum_potential_hj(tl, k, U).values
        return qa, qh, np.abs(tl.snapshots[k]) ** 2

    qa_c, qh_c, P = routes(coarse, j)
    qa_f, qh_f, _ = routes(fine, 2 * j)
    bad = ~(np.isfinite(qa_c) & np.isfinite(qh_c) & np.isfinite(qa_f) & np.isfinite(qh_f))
    grid = coarse.grid
    diff = weighted_norm(qa_c - qh_c, P, grid, bad)
    err = weighted_norm(qh_c - qh_f, P, grid, bad) + weighted_norm(qa_c - qa_f, P, grid, bad)
    return diff, err


def wave_diagnostics(cfg: dict, timeline: WaveTimeline, U: RealField, report: DiagnosticsReport,
                     refine: Callable[[int], WaveTimeline]) -> None:
    """Append every requested wave-function diagnostic to ``report``.

    ``refine(steps)`` evolves the initial state at half the time step for
    ``steps`` steps with the configured stride (only used by quantum_potential).
    """
    units, grid = timeline.units, timeline.grid
    w = grid.quadrature_weights()
    for d in cfg["diagnostics"]:
        name, tol = d["name"], _tolerance(d)
        if name == "norm":
            norms = np.sum(np.abs(timeline.snapshots) ** 2 * w, axis=tuple(range(1, timeline.snapshots.ndim)))
            report.add("norm_drift", np.max(np.abs(norms - 1.0)), tol)
        elif name == "energy":
            E = np.array([energy(timeline.psi(j), U, units) for j in range(len(timeline))])
            report.add("energy_drift", np.max(np.abs(E - E[0])), tol)
        elif name == "chetaev":
            res = [chetaev_residual(timeline.psi(j), units)[1] for j in range(len(timeline))]
            report.add("chetaev_residual", max(res), tol)
        elif name == "continuity":
            report.add("continuity_residual", np.max(continuity_residual(timeline)), tol)
        elif name == "madelung":
            r_amp, r_phase = madelung_residuals(timeline, U)
            report.add("madelung_amplitude", np.max(r_amp), tol)
            report.add("madelung_phase", np.max(r_phase), tol)
        elif name == "quantum_potential":
            if len(timeline) < 3:
                raise ValueError("quantum_potential diagnostic needs at least 3 snapshots")
            j = (len(timeline) - 1) // 2
            stride = cfg["evolution"]["stride"]
            fine = refine(2 * j * stride + stride)
            diff, err = qpotential_agreement(timeline, fine, U, j)
            report.add("quantum_potential_agreement", diff, tol * err + d["floor"])
        elif name == "uncertainty":
            rec = uncertainty_check(timeline.final, units)
            report.add("uncertainty_decomposition", rec.decomposition_error, tol)
            report.add("uncertainty_bound_deficit", rec.bound - rec.product, 1e-12)
        elif name == "perturbation_action":
            rec = perturbation_action(timeline.psi(0), units)
            report.add("perturbation_action_gap", rec.relative_gap, tol)
        elif name == "stationarity":
            probe = stationarity_probe(timeline.psi(0), Bump(tuple(d["center"]), d["radius"]), d["h"], units)
            report.add("stationarity_derivative", abs(probe.derivative), tol)


def _rank_violations(positions: np.ndarray) -> int:
    pos = positions[..., 0]
    order = np.argsort(pos[0], kind="stable")
    ranked = pos[:, order]
    finite = np.all(np.isfinite(ranked), axis=0)
    return int(np.sum(np.diff(ranked[:, finite], axis=1) < 0))


def fringe_histogram(positions: np.ndarray, grid: Grid, screen: float, bins: int):
    """Histogram of y over particles with x beyond ``screen`` (counts, edges)."""
    far = positions[np.isfinite(positions[:, 0]) & (positions[:, 0] > screen)]
    return np.histogram(far[:, 1], bins=bins, range=(grid.lower[1], grid.upper[1]))


def symmetric_peaks(counts: np.ndarray, edges: np.ndarray, prominence: float) -> np.ndarray:
    """Centers of histogram maxima that have a mirror-image maximum within one bin."""
    if counts.max() == 0:
        return np.array([])
    peaks, _ = find_peaks(np.concatenate([[0], counts, [0]]), prominence=prominence * counts.max())
    centers = 0.5 * (edges[peaks - 1] + edges[peaks])
    width = edges[1] - edges[0]
    keep = [c for c in centers if np.any(np.abs(centers + c) <= width * (1 + 1e-9))]
    return np.array(keep)


def trajectory_diagnostics(cfg: dict, times: np.ndarray, positions: np.ndarray, P_final: RealField,
                           report: DiagnosticsReport, out: Optional[Path] = None) -> list[Path]:
    """Diagnostics that need the particle ensemble; ``positions`` are the written samples."""
    written = []
    grid = P_final.grid
    for d in cfg["diagnostics"]:
        name, tol = d["name"], _tolerance(d)
        if name == "equivariance":
            ens = TrajectoryEnsemble(times, positions, ~np.all(np.isfinite(positions[-1]), axis=1), 0.0, "")
            stat = equivariance_statistic(ens, P_final, int(d["bins"]))
            report.add("equivariance_tv", stat["tv_distance"], tol)
            if out is not None and grid.ndim == 1:
                written.append(qio.write_histogram(out / "histogram.csv", stat["edges"][0],
                                                   stat["observed"], stat["expected"]))
        elif name == "non_crossing":
            report.add("crossing_count", _rank_violations(positions), tol)
        elif name == "fringes":
            counts, edges = fringe_histogram(positions[-1], grid, d["screen"], int(d["bins"]))
            peaks = symmetric_peaks(counts, edges, d["prominence"])
            report.add("fringe_symmetric_peaks", peaks.size, tol, passed=peaks.size >= tol)
            if out is not None:
                written.append(qio.write_histogram(out / "fringes.csv", edges, counts,
                                                   np.full(counts.size, np.nan)))
    return written


def spectrum_stage(cfg: dict, U: RealField, units: UnitSystem, report: DiagnosticsReport,
                   out: Optional[Path]) -> list[Path]:
    s = cfg["spectrum"]
    sol = solve_eigenpairs(U, s["n_states"], units)
    res = eigen_residuals(sol, U)
    for n, (E, r) in enumerate(zip(sol.energies, res)):
        report.add(f"eigen_residual_{n}", r, 1e-6 * abs(E) + 1e-9)
    gram = eigen_gram(sol)
    report.add("eigen_orthonormality", np.max(np.abs(gram - np.eye(len(gram)))), 1e-8)
    if s["expected"]:
        for n, (E, ref) in enumerate(zip(sol.energies, s["expected"])):
            gap = abs(E - ref) / abs(ref) if s["relative"] else abs(E - ref)
            report.add(f"eigen_energy_{n}", gap, s["tolerance"])
    report.provenance["energies"] = " ".join(format(e, ".10g") for e in sol.energies)
    return [qio.write_spectrum(out / "spectrum.csv", sol.energies)] if out is not None else []


def classical_stage(cfg: dict, report: DiagnosticsReport, out: Optional[Path]) -> list[Path]:
    c = cfg["classical"]
    spec = HamiltonianSpec(build_potential_spec(cfg), cfg["units"]["mass"])
    x0 = ClassicalState(c["q0"], c["p0"])
    d = x0.q.size
    traj = hamilton_flow(spec, x0, c["dt"], c["steps"])
    E = traj.energies
    report.add("classical_energy_drift", np.max(np.abs(E - E[0])) / max(1.0, abs(E[0])), c["invariant_tolerance"])

    basis = np.eye(2 * d)
    variations = [VariationalState(v[:d], v[d:]) for v in basis]
    sols = variational_flow(spec, traj, variations)
    C = poincare_invariant(sols[0], sols[d])
    scale = np.max(np.abs(sols[0].xi * sols[d].eta).sum(1) + np.abs(sols[0].eta * sols[d].xi).sum(1))
    report.add("poincare_invariant_drift", np.max(np.abs(C - C[0])) / max(1.0, scale), c["invariant_tolerance"])

    lyap = lyapunov_estimate(spec, x0, c["horizon"], c["renorm_interval"], c["lyapunov_dt"],
                             c["offset"], c["seed"])
    verdict = zero_characteristic_check(spec, x0, variations, c["horizon"], c["renorm_interval"],
                                        c["lyapunov_dt"], c["stability_tolerance"])
    if c["expect_lambda"] is not None:
        report.add("lyapunov_error", abs(lyap.lambda_max - c["expect_lambda"]), c["lambda_tolerance"])
    max_exp = float(np.max(np.abs(verdict.exponents)))
    if c["expect_stable"] is not None:
        report.add("zero_characteristic_max", max_exp, c["stability_tolerance"],
                   passed=verdict.stable == c["expect_stable"])
    report.provenance["lambda_max"] = format(lyap.lambda_max, ".10g")
    report.provenance["stability"] = verdict.verdict
    if out is None:
        return []
    return [
        qio.write_classical(out / "classical.csv", traj.times, traj.q, traj.p),
        qio.write_variational(out / "variational.csv", traj.times, sols[0].xi, sols[0].eta, C),
        qio.write_lyapunov(out / "lyapunov.csv", lyap.log_growth, lyap.running),
    ]


# -- orchestration ----------------------------------------------------------

@dataclass
class RunManifest:
    scenario: str
    config_hash: str
    command: str
    files: list = field(default_factory=list)
    started: str = ""
    wall_clock_seconds: float = 0.0
    versions: dict = field(default_factory=dict)
    passed: bool = False
    exit_code: int = EXIT_RUNTIME
    errors: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class RunResult:
    manifest: RunManifest
    report: DiagnosticsReport
    out_dir: Path
    timeline: Optional[WaveTimeline] = None
    ensemble: Optional[TrajectoryEnsemble] = None


def versions() -> dict:
    return {"pilotwave": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def default_out_dir(cfg: dict) -> Path:
    if cfg["output"]["directory"]:
        return Path(cfg["output"]["directory"])
    return Path("runs") / f"{cfg['name']}-{config_hash(cfg)[:12]}"


@contextlib.contextmanager
def directory_lock(out: Path):
    """Exclusive ownership of ``out`` for the duration of a run."""
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunError(f"output directory {out} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()


def _without_trajectory_diagnostics(cfg: dict) -> dict:
    keep = [d for d in cfg["diagnostics"] if d["name"] not in TRAJECTORY_DIAGNOSTICS]
    return {**cfg, "diagnostics": keep}


def stages_for(command: str, cfg: dict) -> tuple[str, ...]:
    present = {
        "spectrum": cfg["spectrum"] is not None,
        "wave": cfg["initial_state"] is not None,
        "trajectories": cfg["trajectories"] is not None,
        "classical": cfg["classical"] is not None,
    }
    if command == "run":
        return tuple(s for s in STAGES if present[s])
    if command == "spectrum":
        return ("spectrum",)
    if command == "trajectories":
        return ("wave", "trajectories")
    if command == "classical":
        return ("classical",)
    raise ValueError(f"unknown command {command!r}")


def _execute(cfg: dict, command: str, out: Path, threads: int, report: DiagnosticsReport,
             result: RunResult) -> list[Path]:
    stages = stages_for(command, cfg)
    files: list[Path] = []
    units = build_units(cfg)
    if "classical" in stages and cfg["classical"] is None:
        raise ConfigurationError("classical: config has no classical block")
    if set(stages) & {"spectrum", "wave", "trajectories"}:
        grid = build_grid(cfg)
        U = eval_potential(build_potential_spec(cfg), grid, units)
    if "spectrum" in stages:
        if cfg["spectrum"] is None:
            cfg = dict(cfg, spectrum={"n_states": 4, "expected": None, "tolerance": 1e-3, "relative": False})
        files += spectrum_stage(cfg, U, units, report, out)
    if "wave" in stages:
        if cfg["initial_state"] is None:
            raise ConfigurationError("initial_state: config has no wave-function scenario")
        psi0 = build_initial_state(cfg, grid, U, units)
        timeline = evolve(psi0, U, evolution_config(cfg), units)
        result.timeline = timeline
        steps = snapshot_steps(cfg)
        for j in saved_snapshots(cfg):
            files.append(qio.write_qhdf(out / qio.snapshot_name(steps[j]), timeline.psi(j)))

        def refine(n):
            return evolve(timeline.psi(0), U, evolution_config(cfg, refine=2, steps=n), units)

        if command != "trajectories":
            wave_diagnostics(_without_trajectory_diagnostics(cfg), timeline, U, report, refine)
    if "trajectories" in stages:
        if cfg["trajectories"] is None:
            raise ConfigurationError("trajectories: config has no trajectories block")
        t = cfg["trajectories"]
        q0 = sample_initial_positions(timeline.psi(0).density, t["count"], t["seed"])
        ens = integrate_trajectories(timeline, q0, t["substeps"], t["interpolation"], threads, t["seed"])
        result.ensemble = ens
        idx = trajectory_samples(len(ens.times), t["samples"])
        files.append(qio.write_trajectories(out / "trajectories.csv", ens.times, ens.positions, idx))
        files += trajectory_diagnostics(cfg, ens.times[idx], ens.positions[idx], timeline.final.density,
                                        report, out)
    if "classical" in stages:
        files += classical_stage(cfg, report, out)
    return files


def run_scenario(cfg: dict, out: Optional[Path] = None, command: str = "run", threads: int = 1) -> RunResult:
    """Execute ``cfg`` and write every artifact into ``out``; never raises for module errors.

    Errors are recorded in the manifest and mapped to exit codes: 2 for
    configuration/invariant problems, 3 for numerical or runtime failures.
    """
    chash = config_hash(cfg)
    out = Path(out) if out is not None else default_out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    report = DiagnosticsReport(cfg["name"], provenance={"config_hash": chash[:16], "command": command})
    manifest = RunManifest(cfg["name"], chash, command, versions=versions(),
                           started=time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    result = RunResult(manifest, report, out)
    t0 = time.perf_counter()
    with directory_lock(out):
        files = [out / "config.json"]
        files[0].write_text(canonical_json(cfg))
        try:
            with threadpool_limits(limits=threads):
                files += _execute(cfg, command, out, threads, report, result)
            manifest.exit_code = EXIT_PASS if report.passed else EXIT_DIAGNOSTICS
        except CONFIG_ERRORS as exc:
            manifest.errors.append({"type": type(exc).__name__, "message": str(exc)})
            manifest.exit_code = EXIT_CONFIG
        except (ArithmeticError, RuntimeError, ValueError, FieldError, MemoryError) as exc:
            manifest.errors.append({"type": type(exc).__name__, "message": str(exc)})
            manifest.exit_code = EXIT_RUNTIME
        (out / "diagnostics.csv").write_text(report.to_csv())
        report.failures += [f"{e['type']}: {e['message']}" for e in manifest.errors]
        (out / "summary.txt").write_text(report.summary())
        files += [out / "diagnostics.csv", out / "summary.txt"]
        manifest.passed = manifest.exit_code == EXIT_PASS
        manifest.files = sorted(p.name for p in files)
        manifest.wall_clock_seconds = round(time.perf_counter() - t0, 3)
        (out / "manifest.json").write_text(manifest.to_json())
    return result


# -- re-diagnosis of a finished run ---------------------------------------

@dataclass
class DiagnoseResult:
    report: DiagnosticsReport
    matches: bool
    differences: list


def load_timeline(run_dir: Path, cfg: dict) -> WaveTimeline:
    """Rebuild the full timeline from stored snapshots.

    When only a subset was saved, the initial snapshot is re-evolved and the
    stored ones must be reproduced bit for bit.
    """
    grid = build_grid(cfg)
    units = build_units(cfg)
    steps = snapshot_steps(cfg)
    stored = {}
    for j in saved_snapshots(cfg):
        path = run_dir / qio.snapshot_name(steps[j])
        if not path.exists():
            raise RunError(f"missing snapshot {path.name}")
        f = qio.read_qhdf(path, grid.boundary)
        if f.grid != grid:
            raise RunError(f"{path.name} does not match the configured grid")
        stored[j] = f.values
    dt = cfg["evolution"]["dt"]
    if len(stored) == len(steps):
        return WaveTimeline(grid, [s * dt for s in steps], [stored[j] for j in range(len(steps))], units)
    U = eval_potential(build_potential_spec(cfg), grid, units)
    timeline = evolve(ComplexField(grid, stored[0]), U, evolution_config(cfg), units)
    for j, v in stored.items():
        if not np.array_equal(timeline.snapshots[j], v):
            raise RunError(f"re-evolution does not reproduce stored snapshot {steps[j]}")
    return timeline


def diagnose_run(run_dir: Path, threads: int = 1) -> DiagnoseResult:
    """Recompute the diagnostics of a finished run and compare with its report."""
    run_dir = Path(run_dir)
    cfg = validate(json.loads((run_dir / "config.json").read_text()))
    manifest = json.loads((run_dir / "manifest.json").read_text())
    command = manifest["command"]
    stages = stages_for(command, cfg)
    report = DiagnosticsReport(cfg["name"], provenance={"config_hash": config_hash(cfg)[:16], "command": command})
    units = build_units(cfg)
    with threadpool_limits(limits=threads):
        if {"spectrum", "wave", "trajectories"} & set(stages):
            grid = build_grid(cfg)
            U = eval_potential(build_potential_spec(cfg), grid, units)
        if "spectrum" in stages:
            if cfg["spectrum"] is None:
                cfg = dict(cfg, spectrum={"n_states": 4, "expected": None, "tolerance": 1e-3, "relative": False})
            spectrum_stage(cfg, U, units, report, None)
        if "wave" in stages:
            timeline = load_timeline(run_dir, cfg)

            def refine(n):
                return evolve(timeline.psi(0), U, evolution_config(cfg, refine=2, steps=n), units)

            if command != "trajectories":
                wave_diagnostics(_without_trajectory_diagnostics(cfg), timeline, U, report, refine)
        if "trajectories" in stages:
            times, positions = qio.read_trajectories(run_dir / "trajectories.csv")
            trajectory_diagnostics(cfg, times, positions, timeline.final.density, report, None)
        if "classical" in stages:
            classical_stage(cfg, report, None)
    original = (run_dir / "diagnostics.csv").read_text()
    fresh = report.to_csv()
    diffs = [f"- {a}\n+ {b}" for a, b in zip(original.splitlines(), fresh.splitlines()) if a != b]
    if len(original.splitlines()) != len(fresh.splitlines()):
        diffs.append("entry count differs")
    return DiagnoseResult(report, not diffs, diffs)
