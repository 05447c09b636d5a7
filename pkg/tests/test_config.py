from importlib import resources

import pytest
import yaml

from pilotwave.config import ConfigError, config_hash, override_seed, parse_config, validate

MINIMAL = """
name: minimal
grid:
  bounds: [[-20, 20]]
  counts: [512]
potential: {kind: free}
initial_state: {kind: gaussian}
evolution: {dt: 0.01, steps: 100}
"""

GALLERY = ["free_gaussian", "harmonic_coherent", "box_eigenstates", "harmonic_eigen",
           "inverted_oscillator", "double_slit_2d"]


def gallery_text(name):
    return (resources.files("pilotwave") / "scenarios" / f"{name}.yaml").read_text()


def errors_of(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value.errors


def test_defaults_echo():
    cfg = parse_config(MINIMAL)
    assert cfg["units"] == {"hbar": 1.0, "mass": 1.0}
    assert cfg["grid"]["boundary"] == "periodic"
    assert cfg["initial_state"] == {"kind": "gaussian", "center": [0.0], "sigma": [1.0], "momentum": [0.0]}
    assert cfg["evolution"] == {"dt": 0.01, "steps": 100, "method": "split-spectral", "stride": 1}
    assert cfg["potential"]["kind"] == "free" and cfg["potential"]["omega"] == 1.0
    assert cfg["trajectories"] is None and cfg["spectrum"] is None and cfg["classical"] is None
    assert cfg["diagnostics"] == []
    assert cfg["output"] == {"directory": None, "snapshot_stride": 1}


def test_block_defaults():
    cfg = parse_config(MINIMAL + """
trajectories: {count: 10, seed: 1}
diagnostics: [norm, equivariance, {energy: {tolerance: 1e-5}}]
""")
    assert cfg["trajectories"] == {"count": 10, "seed": 1, "substeps": 4, "interpolation": "linear", "samples": 5}
    assert cfg["diagnostics"][0] == {"name": "norm", "tolerance": 1e-8}
    assert cfg["diagnostics"][1] == {"name": "equivariance", "tolerance": 0.03, "bins": 50}
    assert cfg["diagnostics"][2] == {"name": "energy", "tolerance": 1e-5}


def test_dirichlet_picks_crank_nicolson():
    cfg = parse_config(MINIMAL.replace("counts: [512]", "counts: [513]\n  boundary: dirichlet-zero"))
    assert cfg["evolution"]["method"] == "crank-nicolson"


def test_typo_names_nearest_key():
    errs = errors_of(MINIMAL.replace("potential:", "potental:"))
    assert any("unknown key 'potental'" in e and "did you mean 'potential'" in e for e in errs)


def test_nested_typo():
    errs = errors_of(MINIMAL.replace("steps: 100", "stpes: 100"))
    assert any("evolution" in e and "'stpes'" in e and "'steps'" in e for e in errs)


def test_seed_required():
    errs = errors_of(MINIMAL + "trajectories: {count: 10}\n")
    assert any("seed required" in e for e in errs)


def test_all_errors_collected():
    text = MINIMAL.replace("dt: 0.01", "dt: -1").replace("potential: {kind: free}", "potential: {kind: fre}")
    text += "units: {hbar: 0}\nbogus: 1\n"
    errs = errors_of(text)
    assert len(errs) >= 4
    joined = "\n".join(errs)
    for fragment in ("evolution.dt", "potential.kind", "units.hbar", "'bogus'"):
        assert fragment in joined


@pytest.mark.parametrize("snippet,message", [
    ("grid:\n  bounds: [[0, 1]]\n  counts: [4]\n", "at least 8"),
    ("diagnostics: [fringes]\n", "fringes"),
    ("diagnostics: [equivalence]\n", "did you mean 'equivariance'"),
    ("spectrum: {n_states: 3}\n", "dirichlet"),
    ("classical: {q0: [0], p0: [0], horizon: 0.5}\n", "renorm_interval"),
])
def test_invariant_errors(snippet, message):
    raw = yaml.safe_load(MINIMAL)
    raw.update(yaml.safe_load(snippet))
    with pytest.raises(ConfigError) as info:
        validate(raw)
    assert any(message in e for e in info.value.errors)


def test_classical_needs_analytic_force():
    text = """
name: c
potential: {kind: double-slit, slits: [1]}
classical: {q0: [0], p0: [0]}
"""
    assert any("analytic force" in e for e in errors_of(text))


def test_not_yaml():
    assert any("YAML" in e for e in errors_of("name: [unclosed"))


def test_hash_ignores_formatting_and_output_dir():
    a = parse_config(MINIMAL)
    b = parse_config("{name: minimal, grid: {bounds: [[-20.0, 20.0]], counts: [512]}, potential: {kind: free},"
                     " initial_state: {kind: gaussian, sigma: [1]}, evolution: {dt: 1.0e-2, steps: 100},"
                     " output: {directory: elsewhere}}")
    assert config_hash(a) == config_hash(b)
    c = parse_config(MINIMAL.replace("steps: 100", "steps: 101"))
    assert config_hash(a) != config_hash(c)


@pytest.mark.parametrize("name", GALLERY)
def test_gallery_parses_and_reparses(name):
    cfg = parse_config(gallery_text(name))
    assert cfg["name"] == name
    again = validate(yaml.safe_load(yaml.safe_dump(cfg)))
    assert config_hash(again) == config_hash(cfg)


def test_seed_override():
    cfg = parse_config(gallery_text("harmonic_coherent"))
    new = override_seed(cfg, 2 ** 64 - 1)
    assert new["trajectories"]["seed"] == 2 ** 64 - 1 and new["classical"]["seed"] == 2 ** 64 - 1
    assert cfg["trajectories"]["seed"] == 20240602
    assert config_hash(new) != config_hash(cfg)
