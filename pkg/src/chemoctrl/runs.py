"""Run orchestration: forward / optimize / verify with deterministic outputs.

Every run writes into its output directory

* ``series.csv``      per-level diagnostics of the (final) trajectory,
* ``iterations.csv``  per-iteration cost terms (optimize only),
* ``checks.csv``      the pass/fail table (verify only),
* ``snapshots/``      field grids ``u_<level>.csv`` etc. at the requested
  stride (ny rows x nx columns),
* ``manifest.yaml``   run kind, resolved scenario echo, every output file
  with its SHA-256 hash, an aggregate content hash, and a convergence
  summary.

Numbers are printed with 17 significant digits, so identical inputs
reproduce byte-identical numeric outputs; the aggregate ``content_hash``
covers every emitted file and is the determinism certificate (wall time
lives outside it).  The output directory is locked for the duration of a
run.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .adjoint import TangentSource, duality_residual, solve_adjoint
from .diagnostics import conservation_report
from .forward import Scenario, as_control, control_inner, control_norm, solve_forward
from .optimize import (
    control_gradient,
    evaluate_cost,
    optimize,
    project_control,
    stationarity_residual,
)
from .scenario_io import (
    OPTIMIZE_DEFAULTS,
    VERIFY_DEFAULTS,
    initial_control,
    load_config,
    scenario_from_config,
)

FMT = "%.17g"


@dataclass
class RunManifest:
    run: str
    scenario: dict
    outputs: list = field(default_factory=list)
    content_hash: str = ""
    convergence: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    exit_status: int = 0

    def to_dict(self) -> dict:
        return {
            "run": self.run,
            "scenario": self.scenario,
            "outputs": self.outputs,
            "content_hash": self.content_hash,
            "convergence": self.convergence,
            "wall_time_s": self.wall_time_s,
            "exit_status": self.exit_status,
        }


class _OutputDir:
    """Create/lock the output directory and record emitted files."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.lock = self.root / ".lock"
        self.files: list[tuple[str, str]] = []
        fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)

    def release(self):
        self.lock.unlink(missing_ok=True)

    def _register(self, path: Path):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.files.append((str(path.relative_to(self.root)), digest))

    def write_csv(self, name: str, header: list[str], columns: list[np.ndarray]):
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = np.column_stack([np.asarray(c, dtype=float) for c in columns])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(FMT % v for v in row) + "\n")
        self._register(path)

    def write_field(self, name: str, arr: np.ndarray):
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, np.asarray(arr, dtype=float), fmt=FMT, delimiter=",")
        self._register(path)

    def write_manifest(self, manifest: RunManifest):
        manifest.outputs = [
            {"path": p, "sha256": h} for p, h in sorted(self.files)
        ]
        agg = hashlib.sha256()
        for p, h in sorted(self.files):
            agg.update(f"{p}:{h}\n".encode())
        manifest.content_hash = agg.hexdigest()
        path = self.root / "manifest.yaml"
        with open(path, "w") as fh:
            yaml.safe_dump(manifest.to_dict(), fh, sort_keys=True)


def _field_echo(arr: np.ndarray) -> dict:
    return {
        "sha256": hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest(),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


def _scenario_echo(sc: Scenario, f0: np.ndarray) -> dict:
    g = sc.grid
    return {
        "grid": {"Lx": g.Lx, "Ly": g.Ly, "nx": g.nx, "ny": g.ny,
                 "hx": g.hx, "hy": g.hy,
                 "control_cells": int(g.control_mask.sum()),
                 "observe_cells": int(g.observe_mask.sum())},
        "time": {"T": sc.T, "nt": sc.nt, "dt": sc.dt},
        "model": {"p": sc.p, "scheme": sc.scheme},
        "cost": {"gamma_u": sc.gamma_u, "gamma_v": sc.gamma_v,
                 "gamma_f": sc.gamma_f, "eps": sc.eps},
        "control": {"f_min": float(sc.f_min), "f_max": float(sc.f_max),
                    "f0": _field_echo(f0)},
        "fields": {"u0": _field_echo(sc.u0), "v0": _field_echo(sc.v0),
                   "u_d": _field_echo(sc.u_d), "v_d": _field_echo(sc.v_d)},
    }


def _load(scenario_path, scheme=None):
    cfg = load_config(scenario_path)
    if scheme is not None:
        cfg.setdefault("model", {})["scheme"] = scheme
    base_dir = Path(scenario_path).parent
    sc = scenario_from_config(cfg, base_dir)
    f0 = as_control(sc, initial_control(cfg, sc, base_dir))
    return cfg, sc, f0


def _write_series(out: _OutputDir, sc: Scenario, traj, f):
    rep = conservation_report(traj, f, sc)
    levels = np.arange(sc.nt + 1)
    res = np.concatenate([[0.0], rep.v_balance_residuals])
    out.write_csv(
        "series.csv",
        ["level", "time", "mass_u", "mass_drift", "mass_v",
         "v_balance_residual", "min_u", "min_v", "energy"],
        [levels, levels * sc.dt, rep.mass_series,
         np.abs(rep.mass_series - rep.m0), rep.v_mass_series, res,
         rep.min_u_series, rep.min_v_series, rep.energy_series],
    )
    return rep


def _write_snapshots(out: _OutputDir, sc: Scenario, traj, f, stride: int):
    if not stride or stride <= 0:
        return
    levels = sorted(set(range(0, sc.nt + 1, stride)) | {sc.nt})
    for n in levels:
        out.write_field(f"snapshots/u_{n:06d}.csv", traj.u[n])
        out.write_field(f"snapshots/v_{n:06d}.csv", traj.v[n])
        if n > 0:
            out.write_field(f"snapshots/f_{n:06d}.csv", f[n - 1])


def run_forward(scenario_path, out_dir, snapshot_stride: int = 0,
                scheme: str | None = None) -> RunManifest:
    """Forward simulation with diagnostics series and snapshots."""
    cfg, sc, f0 = _load(scenario_path, scheme)
    out = _OutputDir(out_dir)
    t0 = time.perf_counter()
    try:
        traj = solve_forward(sc, f0)
        rep = _write_series(out, sc, traj, f0)
        _write_snapshots(out, sc, traj, f0, snapshot_stride)
        manifest = RunManifest(run="forward", scenario=_scenario_echo(sc, f0))
        manifest.convergence = {
            "mass_drift": float(rep.max_drift),
            "v_balance_max_rel": float(
                np.abs(rep.v_balance_residuals / rep.v_balance_scales).max()
                if sc.nt else 0.0),
            "min_u": float(rep.min_u_series.min()),
            "min_v": float(rep.min_v_series.min()),
            "mmatrix_margin": float(traj.mmatrix_margin),
        }
        manifest.wall_time_s = time.perf_counter() - t0
        out.write_manifest(manifest)
        return manifest
    finally:
        out.release()


def run_optimize(scenario_path, out_dir, snapshot_stride: int = 0,
                 scheme: str | None = None, tol: float | None = None,
                 max_iters: int | None = None) -> RunManifest:
    """Projected-gradient minimization of the tracking cost."""
    cfg, sc, f0 = _load(scenario_path, scheme)
    opts = dict(OPTIMIZE_DEFAULTS)
    opts.update(cfg.get("optimize") or {})
    if tol is not None:
        opts["tol"] = tol
    if max_iters is not None:
        opts["max_iters"] = max_iters
    out = _OutputDir(out_dir)
    t0 = time.perf_counter()
    try:
        report = optimize(sc, f0, tol=float(opts["tol"]),
                          max_iters=int(opts["max_iters"]))
        its = report.iterates
        out.write_csv(
            "iterations.csv",
            ["iteration", "j_total", "j_u", "j_v", "j_f",
             "stationarity_residual", "step_length", "linesearch_trials"],
            [[r.iteration for r in its], [r.j_total for r in its],
             [r.j_u for r in its], [r.j_v for r in its],
             [r.j_f for r in its], [r.stationarity for r in its],
             [r.step_length for r in its], [r.linesearch_trials for r in its]],
        )
        manifest = RunManifest(run="optimize", scenario=_scenario_echo(sc, f0))
        if report.final_state is not None:
            _write_series(out, sc, report.final_state, report.final_control)
            _write_snapshots(out, sc, report.final_state, report.final_control,
                             snapshot_stride)
        manifest.convergence = {
            "converged": bool(report.converged),
            "reason": report.reason,
            "iterations": report.iterations,
            "j_total": float(its[-1].j_total) if its else float("nan"),
            "stationarity_residual": float(its[-1].stationarity) if its else float("nan"),
        }
        manifest.exit_status = 0 if report.final_state is not None else 2
        manifest.wall_time_s = time.perf_counter() - t0
        out.write_manifest(manifest)
        return manifest
    finally:
        out.release()


def _verify_checks(sc: Scenario, f0: np.ndarray, thresholds: dict):
    """Run the verification battery; returns (rows, any_hard_failure)."""
    rows = []

    def add(name, value, threshold, status):
        rows.append({"check": name, "value": float(value),
                     "threshold": float(threshold), "status": status})

    traj = solve_forward(sc, f0)
    rep = conservation_report(traj, f0, sc)

    mass_tol = thresholds["mass_tol"] * max(1.0, abs(rep.m0))
    add("mass_conservation", rep.max_drift, mass_tol,
        "pass" if rep.max_drift <= mass_tol else "fail")

    vb = np.abs(rep.v_balance_residuals / rep.v_balance_scales).max() if sc.nt else 0.0
    add("v_balance", vb, thresholds["v_balance_tol"],
        "pass" if vb <= thresholds["v_balance_tol"] else "fail")

    rng = np.random.default_rng(int(thresholds["seed"]))
    df = as_control(sc, rng.standard_normal((sc.nt, *sc.grid.shape)))
    dres = duality_residual(traj, f0, df, None, sc,
                            w_u=rng.standard_normal((sc.nt + 1, *sc.grid.shape)),
                            w_v=rng.standard_normal((sc.nt + 1, *sc.grid.shape)))
    add("adjoint_duality", dres, thresholds["duality_tol"],
        "pass" if dres <= thresholds["duality_tol"] else "fail")

    adj = solve_adjoint(traj, f0, sc)
    grad = control_gradient(adj, traj, f0, sc)
    j0 = evaluate_cost(traj, f0, sc).j_total
    worst = 0.0
    for _ in range(2):
        d = as_control(sc, rng.standard_normal((sc.nt, *sc.grid.shape)))
        d /= max(control_norm(sc, d), 1e-300)
        h = 1e-5 * max(1.0, control_norm(sc, f0))
        jp = evaluate_cost(solve_forward(sc, f0 + h * d), f0 + h * d, sc).j_total
        jm = evaluate_cost(solve_forward(sc, f0 - h * d), f0 - h * d, sc).j_total
        fd = (jp - jm) / (2.0 * h)
        pair = control_inner(sc, grad, d)
        # the FD quotient cannot resolve derivatives below rounding in J
        noise = 64.0 * np.finfo(float).eps * max(1.0, abs(j0)) / h
        if max(abs(fd), abs(pair)) <= noise:
            continue
        worst = max(worst, abs(fd - pair) / max(abs(fd), abs(pair)))
    add("gradient_fd", worst, thresholds["gradient_tol"],
        "pass" if worst <= thresholds["gradient_tol"] else "fail")

    min_uv = min(rep.min_u_series.min(), rep.min_v_series.min())
    neg_ok = min_uv >= -thresholds["negativity_tol"]
    preconditions = (sc.scheme == "upwind" and f0.min() >= 0.0
                     and traj.mmatrix_margin > 0.0)
    if preconditions:
        add("nonnegativity", -min_uv, thresholds["negativity_tol"],
            "pass" if neg_ok else "fail")
    else:
        add("nonnegativity", -min_uv, thresholds["negativity_tol"],
            "pass" if neg_ok else "warn")

    if sc.p == 2.0 and np.all(f0 == 0.0):
        e = rep.energy_series
        rise = float(np.diff(e).max()) if sc.nt else 0.0
        etol = thresholds["energy_tol"] * max(e[0], 1e-300)
        add("energy_decay", rise, etol, "pass" if rise <= etol else "warn")

    hard_failure = any(r["status"] == "fail" for r in rows)
    return traj, rep, rows, hard_failure


def run_verify(scenario_path, out_dir, scheme: str | None = None,
               snapshot_stride: int = 0) -> RunManifest:
    """Diagnostics suite plus gradient/duality certificates; pass/fail table."""
    cfg, sc, f0 = _load(scenario_path, scheme)
    thresholds = dict(VERIFY_DEFAULTS)
    thresholds.update(cfg.get("verify") or {})
    out = _OutputDir(out_dir)
    t0 = time.perf_counter()
    try:
        traj, rep, rows, hard_failure = _verify_checks(sc, f0, thresholds)
        path = out.root / "checks.csv"
        with open(path, "w") as fh:
            fh.write("check,value,threshold,status\n")
            for r in rows:
                fh.write(f"{r['check']},{FMT % r['value']},"
                         f"{FMT % r['threshold']},{r['status']}\n")
        out._register(path)
        _write_series(out, sc, traj, f0)
        _write_snapshots(out, sc, traj, f0, snapshot_stride)
        manifest = RunManifest(run="verify", scenario=_scenario_echo(sc, f0))
        manifest.convergence = {
            "checks_passed": sum(r["status"] == "pass" for r in rows),
            "checks_failed": sum(r["status"] == "fail" for r in rows),
            "checks_warned": sum(r["status"] == "warn" for r in rows),
        }
        manifest.exit_status = 3 if hard_failure else 0
        manifest.wall_time_s = time.perf_counter() - t0
        out.write_manifest(manifest)
        return manifest
    finally:
        out.release()
