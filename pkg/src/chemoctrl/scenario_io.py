"""Scenario files: a YAML document describing one control problem.

Sections: ``grid`` (extent, cell counts, optional control/observe
rectangles), ``time`` (T, nt), ``model`` (p, scheme), ``initial`` (u0, v0),
``cost`` (weights, eps, desired states), ``control`` (bounds, initial
guess), and optional ``optimize``/``verify`` blocks with solver and check
settings.  Fields are either closed-form expression strings over (x, y),
numeric constants, or ``{csv: path}`` grids of shape ny rows x nx columns
(paths relative to the scenario file).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml

from .forward import Scenario
from .grid import Grid2D, build_grid


class ScenarioError(ValueError):
    """Scenario file failed to parse or validate."""


_EXPR_NAMES = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
    "abs": np.abs, "minimum": np.minimum, "maximum": np.maximum,
    "where": np.where, "pi": math.pi, "e": math.e,
}

VERIFY_DEFAULTS = {
    "mass_tol": 1e-10,
    "v_balance_tol": 1e-10,
    "duality_tol": 1e-12,
    "gradient_tol": 1e-6,
    "negativity_tol": 1e-12,
    "energy_tol": 1e-8,
    "seed": 0,
}

OPTIMIZE_DEFAULTS = {
    "tol": 1e-6,
    "max_iters": 200,
}


def _require(cfg: dict, section: str, key: str):
    if section not in cfg or not isinstance(cfg[section], dict):
        raise ScenarioError(f"missing section '{section}'")
    if key not in cfg[section]:
        raise ScenarioError(f"missing key '{section}.{key}'")
    return cfg[section][key]


def evaluate_field_expression(expr: str, grid: Grid2D) -> np.ndarray:
    """Evaluate an (x, y) expression at the cell centers."""
    X, Y = grid.cell_centers()
    ns = dict(_EXPR_NAMES, x=X, y=Y)
    try:
        val = eval(expr, {"__builtins__": {}}, ns)  # noqa: S307 - whitelisted names
        arr = np.asarray(val, dtype=float)
        return np.broadcast_to(arr, grid.shape).copy()
    except Exception as exc:
        raise ScenarioError(f"cannot evaluate field expression {expr!r}: {exc}") from exc


def parse_field(spec, grid: Grid2D, base_dir: Path, name: str) -> np.ndarray:
    """Resolve a field spec: expression string, constant, or {csv: path}."""
    if isinstance(spec, (int, float)):
        return np.full(grid.shape, float(spec))
    if isinstance(spec, str):
        return evaluate_field_expression(spec, grid)
    if isinstance(spec, dict) and "csv" in spec:
        path = base_dir / spec["csv"]
        if not path.exists():
            raise ScenarioError(f"field '{name}': CSV file {path} not found")
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
        if arr.shape != grid.shape:
            raise ScenarioError(
                f"field '{name}': CSV grid has {arr.shape[1]} columns x "
                f"{arr.shape[0]} rows; expected (nx, ny) = ({grid.nx}, {grid.ny})"
            )
        return arr
    raise ScenarioError(
        f"field '{name}' must be an expression string, a number, or "
        f"{{csv: path}}, got {type(spec).__name__}"
    )


def _rect(value, name):
    if value is None:
        return None
    if not (isinstance(value, (list, tuple)) and len(value) == 4):
        raise ScenarioError(f"'{name}' must be [xmin, xmax, ymin, ymax]")
    return tuple(float(v) for v in value)


def load_config(path) -> dict:
    """Parse the YAML document; no validation beyond well-formedness."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file {path} not found")
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ScenarioError(f"{path} does not contain a mapping")
    return cfg


def scenario_from_config(cfg: dict, base_dir: Path) -> Scenario:
    """Build and fully validate a Scenario from a parsed config."""
    Lx = float(_require(cfg, "grid", "Lx"))
    Ly = float(_require(cfg, "grid", "Ly"))
    nx = int(_require(cfg, "grid", "nx"))
    ny = int(_require(cfg, "grid", "ny"))
    gsec = cfg["grid"]
    try:
        grid = build_grid(Lx, Ly, nx, ny,
                          control_rect=_rect(gsec.get("control_rect"), "grid.control_rect"),
                          observe_rect=_rect(gsec.get("observe_rect"), "grid.observe_rect"))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    T = float(_require(cfg, "time", "T"))
    nt = int(_require(cfg, "time", "nt"))
    p = float(_require(cfg, "model", "p"))
    scheme = cfg["model"].get("scheme", "central")

    u0 = parse_field(_require(cfg, "initial", "u0"), grid, base_dir, "u0")
    v0 = parse_field(_require(cfg, "initial", "v0"), grid, base_dir, "v0")

    cost = cfg.get("cost", {})
    if not isinstance(cost, dict):
        raise ScenarioError("section 'cost' must be a mapping")
    ctrl = cfg.get("control", {})
    if not isinstance(ctrl, dict):
        raise ScenarioError("section 'control' must be a mapping")

    def opt_field(sec, key):
        if key not in sec or sec[key] is None:
            return None
        return parse_field(sec[key], grid, base_dir, key)

    try:
        return Scenario(
            grid=grid, p=p, T=T, nt=nt, u0=u0, v0=v0,
            gamma_u=float(cost.get("gamma_u", 0.0)),
            gamma_v=float(cost.get("gamma_v", 0.0)),
            gamma_f=float(cost.get("gamma_f", 0.0)),
            eps=float(cost.get("eps", 0.0)),
            f_min=float(ctrl.get("f_min", -np.inf)),
            f_max=float(ctrl.get("f_max", np.inf)),
            u_d=opt_field(cost, "u_d"),
            v_d=opt_field(cost, "v_d"),
            scheme=scheme,
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc


def initial_control(cfg: dict, sc: Scenario, base_dir: Path) -> np.ndarray:
    """Initial control from the config (time-constant field), default zero."""
    ctrl = cfg.get("control", {})
    spec = ctrl.get("f0")
    if spec is None:
        return np.zeros((sc.nt, *sc.grid.shape))
    field = parse_field(spec, sc.grid, base_dir, "f0")
    return np.broadcast_to(field, (sc.nt, *sc.grid.shape)).copy()


def load_scenario(path) -> Scenario:
    """Load and validate a scenario file."""
    path = Path(path)
    return scenario_from_config(load_config(path), path.parent)
