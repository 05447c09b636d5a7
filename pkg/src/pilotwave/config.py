"""Scenario configuration: YAML text -> validated, fully defaulted tree.

Validation collects every problem before failing, and unknown keys are
rejected with the closest valid spelling.  The parsed tree is plain dicts and
lists (JSON-serializable), so its canonical JSON form doubles as the input of
the run hash.
"""
from __future__ import annotations

import copy
import difflib
import hashlib
import json
import math
import re
from dataclasses import dataclass
from typing import Any, Callable, Optional

import yaml

from pilotwave.fields import BOUNDARIES, DIRICHLET, PERIODIC
from pilotwave.potentials import KINDS
from pilotwave.tdse import CRANK, METHODS, SPLIT

STATE_KINDS = ("gaussian", "eigenstate", "superposition", "plane_wave")
INTERPOLATIONS = ("linear", "cubic")

# diagnostic name -> (default tolerance, extra parameters with defaults)
DIAGNOSTICS: dict[str, tuple[float, dict]] = {
    "norm": (1e-8, {}),
    "energy": (1e-6, {}),
    "chetaev": (1e-6, {}),
    "continuity": (1e-3, {}),
    "madelung": (1e-3, {}),
    "quantum_potential": (10.0, {"floor": 1e-9}),
    "uncertainty": (1e-5, {}),
    "perturbation_action": (1e-6, {}),
    "stationarity": (1e-4, {"center": None, "radius": None, "h": 1e-3}),
    "equivariance": (0.03, {"bins": 50}),
    "non_crossing": (0.0, {}),
    "fringes": (3.0, {"screen": None, "bins": 41, "prominence": 0.1}),
}
TRAJECTORY_DIAGNOSTICS = ("equivariance", "non_crossing", "fringes")


class ConfigError(ValueError):
    """Raised with every validation problem found, one per line."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario config:\n" + "\n".join(f"  - {e}" for e in self.errors))


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot, e.g. ``1e-5``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


# -- tiny schema language -------------------------------------------------

REQUIRED = object()


@dataclass(frozen=True)
class Key:
    check: Callable[[Any, str, list], Any]
    default: Any = None


def _suggest(key: str, valid) -> str:
    close = difflib.get_close_matches(str(key), list(valid), n=1, cutoff=0.5)
    return f"; did you mean '{close[0]}'?" if close else ""


def _walk(block: Any, schema: dict[str, Key], where: str, errors: list) -> dict:
    if block is None:
        block = {}
    if not isinstance(block, dict):
        errors.append(f"{where}: expected a mapping, got {type(block).__name__}")
        return {}
    out = {}
    for k in block:
        if k not in schema:
            errors.append(f"{where or 'config'}: unknown key '{k}'{_suggest(k, schema)}")
    for k, spec in schema.items():
        path = f"{where}.{k}" if where else k
        if k in block and block[k] is not None:
            out[k] = spec.check(block[k], path, errors)
        elif spec.default is REQUIRED:
            errors.append(f"{path}: required")
            out[k] = None
        else:
            out[k] = copy.deepcopy(spec.default)
    return out


def _number(positive=False, nonneg=False, integer=False):
    def check(v, path, errors):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            errors.append(f"{path}: expected a number, got {v!r}")
            return None
        if integer and (not float(v).is_integer()):
            errors.append(f"{path}: expected an integer, got {v!r}")
            return None
        if not math.isfinite(v):
            errors.append(f"{path}: must be finite")
            return None
        if positive and not v > 0:
            errors.append(f"{path}: must be > 0")
        if nonneg and v < 0:
            errors.append(f"{path}: must be >= 0")
        return int(v) if integer else float(v)
    return check


def _vector(length: Optional[int] = None):
    def check(v, path, errors):
        items = v if isinstance(v, list) else [v]
        num = _number()
        vals = [num(x, f"{path}[{i}]", errors) for i, x in enumerate(items)]
        if length is not None and len(vals) != length:
            errors.append(f"{path}: expected {length} values")
        return vals
    return check


def _choice(options):
    def check(v, path, errors):
        if v not in options:
            errors.append(f"{path}: '{v}' is not one of {list(options)}{_suggest(v, options)}")
        return v
    return check


def _string(v, path, errors):
    if not isinstance(v, str) or not v.strip():
        errors.append(f"{path}: expected a non-empty string")
        return None
    return v


def _flag(v, path, errors):
    if not isinstance(v, bool):
        errors.append(f"{path}: expected true or false")
        return None
    return v


def _bounds(v, path, errors):
    if not isinstance(v, list) or not v:
        errors.append(f"{path}: expected a list of [lower, upper] pairs")
        return None
    if all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v) and len(v) == 2:
        v = [v]
    out = []
    for i, pair in enumerate(v):
        pair = _vector(2)(pair, f"{path}[{i}]", errors)
        if len(pair) == 2 and None not in pair and not pair[0] < pair[1]:
            errors.append(f"{path}[{i}]: lower bound must be below upper bound")
        out.append(pair)
    return out


def _counts(v, path, errors):
    items = v if isinstance(v, list) else [v]
    num = _number(integer=True)
    out = [num(x, f"{path}[{i}]", errors) for i, x in enumerate(items)]
    if any(c is not None and c < 8 for c in out):
        errors.append(f"{path}: every axis needs at least 8 points")
    return out


def _block(schema):
    return lambda v, path, errors: _walk(v, schema, path, errors)


# -- schemas --------------------------------------------------------------

UNITS = {"hbar": Key(_number(positive=True), 1.0), "mass": Key(_number(positive=True), 1.0)}

GRID = {
    "bounds": Key(_bounds, REQUIRED),
    "counts": Key(_counts, REQUIRED),
    "boundary": Key(_choice(BOUNDARIES), PERIODIC),
}

POTENTIAL = {
    "kind": Key(_choice(KINDS), "free"),
    "omega": Key(_number(positive=True), 1.0),
    "kappa": Key(_number(positive=True), 1.0),
    "height": Key(_number(nonneg=True), 0.0),
    "center": Key(_vector(), [0.0]),
    "width": Key(_number(positive=True), 1.0),
    "wall": Key(_number(), 0.0),
    "thickness": Key(_number(positive=True), None),
    "slits": Key(_vector(), []),
}

STATE_KEYS = {
    "gaussian": {"center": Key(_vector(), [0.0]), "sigma": Key(_vector(), [1.0]),
                 "momentum": Key(_vector(), [0.0])},
    "eigenstate": {"n": Key(_number(integer=True, nonneg=True), 0)},
    "plane_wave": {"momentum": Key(_vector(), [0.0])},
}


def _weight(v, path, errors):
    if isinstance(v, list):
        vals = _vector(2)(v, path, errors)
        return vals if len(vals) == 2 else [0.0, 0.0]
    return [_number()(v, path, errors), 0.0]


def _state(v, path, errors, nested=False):
    if not isinstance(v, dict):
        errors.append(f"{path}: expected a mapping")
        return None
    kind = v.get("kind", "gaussian")
    kinds = STATE_KINDS if not nested else STATE_KINDS[:2] + STATE_KINDS[3:]
    if kind not in kinds:
        errors.append(f"{path}.kind: '{kind}' is not one of {list(kinds)}{_suggest(kind, kinds)}")
        return None
    rest = {k: x for k, x in v.items() if k != "kind"}
    if kind == "superposition":
        out = _walk(rest, {"components": Key(_components, REQUIRED)}, path, errors)
    else:
        out = _walk(rest, STATE_KEYS[kind], path, errors)
    return {"kind": kind, **out}


def _components(v, path, errors):
    if not isinstance(v, list) or not v:
        errors.append(f"{path}: expected a non-empty list of {{weight, state}} entries")
        return []
    schema = {"weight": Key(_weight, [1.0, 0.0]),
              "state": Key(lambda s, p, e: _state(s, p, e, nested=True), REQUIRED)}
    return [_walk(c, schema, f"{path}[{i}]", errors) for i, c in enumerate(v)]


EVOLUTION = {
    "dt": Key(_number(positive=True), REQUIRED),
    "steps": Key(_number(integer=True, positive=True), REQUIRED),
    "method": Key(_choice(METHODS), None),
    "stride": Key(_number(integer=True, positive=True), 1),
}

TRAJECTORIES = {
    "count": Key(_number(integer=True, positive=True), REQUIRED),
    "seed": Key(_number(integer=True, nonneg=True), None),
    "substeps": Key(_number(integer=True, positive=True), 4),
    "interpolation": Key(_choice(INTERPOLATIONS), "linear"),
    "samples": Key(_number(integer=True, positive=True), 5),
}

SPECTRUM = {
    "n_states": Key(_number(integer=True, positive=True), 4),
    "expected": Key(_vector(), None),
    "tolerance": Key(_number(positive=True), 1e-3),
    "relative": Key(_flag, False),
}

CLASSICAL = {
    "q0": Key(_vector(), REQUIRED),
    "p0": Key(_vector(), REQUIRED),
    "dt": Key(_number(positive=True), 0.01),
    "steps": Key(_number(integer=True, positive=True), 1000),
    "horizon": Key(_number(positive=True), 200.0),
    "renorm_interval": Key(_number(positive=True), 1.0),
    "lyapunov_dt": Key(_number(positive=True), 0.05),
    "offset": Key(_number(positive=True), 1e-8),
    "seed": Key(_number(integer=True, nonneg=True), 0),
    "invariant_tolerance": Key(_number(positive=True), 1e-8),
    "expect_lambda": Key(_number(), None),
    "lambda_tolerance": Key(_number(positive=True), 0.02),
    "expect_stable": Key(_flag, None),
    "stability_tolerance": Key(_number(positive=True), 0.02),
}

OUTPUT = {
    "directory": Key(_string, None),
    "snapshot_stride": Key(_number(integer=True, positive=True), 1),
}


def _diagnostics(v, path, errors):
    """List of names, {name: {tolerance, params...}} single-key mappings or parsed records."""
    if isinstance(v, dict):
        v = [{k: x} for k, x in v.items()]
    if not isinstance(v, list):
        errors.append(f"{path}: expected a list of diagnostic names")
        return []
    out = []
    for i, item in enumerate(v):
        where = f"{path}[{i}]"
        if isinstance(item, str):
            name, params = item, {}
        elif isinstance(item, dict) and isinstance(item.get("name"), str):
            # canonical (already parsed) form
            name, params = item["name"], {k: x for k, x in item.items() if k != "name"}
        elif isinstance(item, dict) and len(item) == 1:
            name, params = next(iter(item.items()))
            params = params or {}
        else:
            errors.append(f"{where}: expected a name or a single-key mapping")
            continue
        if name not in DIAGNOSTICS:
            errors.append(f"{where}: unknown diagnostic '{name}'{_suggest(name, DIAGNOSTICS)}")
            continue
        tol, extra = DIAGNOSTICS[name]
        schema = {"tolerance": Key(_number(nonneg=True), tol)}
        for k, d in extra.items():
            check = _vector() if k == "center" else _number(integer=True, positive=True) if k == "bins" else _number()
            schema[k] = Key(check, d)
        entry = _walk(params, schema, f"{where}.{name}", errors)
        if any(d["name"] == name for d in out):
            errors.append(f"{where}: diagnostic '{name}' listed twice")
        out.append({"name": name, **entry})
    return out


TOP = {
    "name": Key(_string, REQUIRED),
    "units": Key(_block(UNITS), {"hbar": 1.0, "mass": 1.0}),
    "grid": Key(_block(GRID), None),
    "potential": Key(_block(POTENTIAL), REQUIRED),
    "initial_state": Key(_state, None),
    "evolution": Key(_block(EVOLUTION), None),
    "trajectories": Key(_block(TRAJECTORIES), None),
    "spectrum": Key(_block(SPECTRUM), None),
    "classical": Key(_block(CLASSICAL), None),
    "diagnostics": Key(_diagnostics, []),
    "output": Key(_block(OUTPUT), {"directory": None, "snapshot_stride": 1}),
}


# -- cross-block checks ---------------------------------------------------

def _cross_checks(cfg: dict, errors: list):
    grid, state, evo = cfg["grid"], cfg["initial_state"], cfg["evolution"]
    needs_grid = [b for b in ("initial_state", "evolution", "spectrum", "trajectories") if cfg[b] is not None]
    if needs_grid and grid is None:
        errors.append(f"grid: required by {', '.join(needs_grid)}")
    if (state is None) != (evo is None):
        errors.append("initial_state and evolution must be given together")
    if cfg["trajectories"] is not None and state is None:
        errors.append("trajectories: requires initial_state and evolution")
    if cfg["classical"] is not None and cfg["potential"]["kind"] not in ("free", "harmonic", "inverted-harmonic",
                                                                       "gaussian-barrier"):
        errors.append(f"classical: potential kind '{cfg['potential']['kind']}' has no analytic force")
    ndim = None
    if grid is not None and grid["bounds"] and grid["counts"]:
        ndim = len(grid["bounds"])
        if len(grid["counts"]) == 1 and ndim > 1:
            grid["counts"] = grid["counts"] * ndim
        if len(grid["counts"]) != ndim:
            errors.append("grid.counts: one count per axis of grid.bounds")
        if ndim not in (1, 2):
            errors.append("grid.bounds: only 1D and 2D grids are supported")
    if evo is not None and evo["method"] is None and grid is not None:
        evo["method"] = SPLIT if grid["boundary"] == PERIODIC else CRANK
    if state is not None and ndim is not None:
        _check_state_dims(state, ndim, grid, "initial_state", errors)
    if cfg["spectrum"] is not None and grid is not None:
        if ndim != 1 or grid["boundary"] != DIRICHLET:
            errors.append("spectrum: needs a 1D dirichlet-zero grid")
    cl = cfg["classical"]
    if cl is not None and cl["q0"] and cl["p0"] and len(cl["q0"]) != len(cl["p0"]):
        errors.append("classical: q0 and p0 must have the same length")
    if cl is not None and cl["horizon"] <= cl["renorm_interval"]:
        errors.append("classical.horizon: must exceed renorm_interval")
    names = {d["name"] for d in cfg["diagnostics"]}
    for name in sorted(names & set(TRAJECTORY_DIAGNOSTICS)):
        if cfg["trajectories"] is None:
            errors.append(f"diagnostics: '{name}' requires a trajectories block")
    wave = names - set(TRAJECTORY_DIAGNOSTICS)
    if wave and state is None:
        errors.append(f"diagnostics: {sorted(wave)} require initial_state and evolution")
    if ndim is not None:
        if ndim != 1 and names & {"uncertainty", "non_crossing", "stationarity"}:
            errors.append("diagnostics: uncertainty, non_crossing and stationarity are 1D only")
        if ndim != 2 and "fringes" in names:
            errors.append("diagnostics: fringes needs a 2D grid")
    if "stationarity" in names:
        d = next(d for d in cfg["diagnostics"] if d["name"] == "stationarity")
        if d["center"] is None or d["radius"] is None:
            errors.append("diagnostics.stationarity: center and radius required")
    if "fringes" in names:
        d = next(d for d in cfg["diagnostics"] if d["name"] == "fringes")
        if d["screen"] is None:
            errors.append("diagnostics.fringes: screen (far-field x threshold) required")


def _check_state_dims(state: dict, ndim: int, grid: dict, where: str, errors: list):
    kind = state["kind"]
    if kind == "superposition":
        for i, c in enumerate(state.get("components") or []):
            if c.get("state"):
                _check_state_dims(c["state"], ndim, grid, f"{where}.components[{i}].state", errors)
        return
    for key in ("center", "sigma", "momentum"):
        if key in state and state[key] is not None:
            vals = state[key]
            if len(vals) == 1 and ndim > 1:
                state[key] = vals * ndim if key == "sigma" else vals + [0.0] * (ndim - 1)
            elif len(vals) != ndim:
                errors.append(f"{where}.{key}: expected {ndim} values")
    if kind == "gaussian" and any(s is not None and s <= 0 for s in state["sigma"]):
        errors.append(f"{where}.sigma: must be > 0")
    if kind == "eigenstate" and state["n"] and not (ndim == 1 and grid["boundary"] == DIRICHLET):
        errors.append(f"{where}: excited eigenstates need a 1D dirichlet-zero grid")


# -- public API -----------------------------------------------------------

def validate(raw: Any) -> dict:
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    cfg = _walk(raw, TOP, "", errors)
    if cfg.get("trajectories") is not None and cfg["trajectories"]["seed"] is None:
        errors.append("trajectories: seed required")
    if not errors:
        _cross_checks(cfg, errors)
    if errors:
        raise ConfigError(sorted(set(errors), key=errors.index))
    return cfg


def parse_config(text: str) -> dict:
    """Parse YAML scenario text into a validated config with every default filled."""
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"not valid YAML: {exc}"]) from None
    return validate(raw)


def override_seed(cfg: dict, seed: int) -> dict:
    """Copy of ``cfg`` with every random stream re-seeded."""
    cfg = copy.deepcopy(cfg)
    if cfg["trajectories"] is not None:
        cfg["trajectories"]["seed"] = int(seed)
    if cfg["classical"] is not None:
        cfg["classical"]["seed"] = int(seed)
    return cfg


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def config_hash(cfg: dict) -> str:
    """SHA-256 of the parsed config, ignoring where outputs are written."""
    body = copy.deepcopy(cfg)
    body["output"] = {k: v for k, v in body["output"].items() if k != "directory"}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def diagnostic(cfg: dict, name: str) -> Optional[dict]:
    return next((d for d in cfg["diagnostics"] if d["name"] == name), None)
