"""Verification instruments built on the scheme's structural identities.

All functions are read-only on their inputs.  `mass_series` tracks the
conserved grid integral of u; `v_balance_residuals` checks the per-step
integral identity of the v-equation (a whole-scheme integrity check that
vanishes to solver tolerance on every trajectory the forward solver
produces); `negativity_report` records per-level minima without altering
them; `energy_series` evaluates 1/2 ||u||^2 + 1/4 ||grad v||^2, a decay
diagnostic for quadratic production with zero control.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import Scenario, Trajectory, as_control, production
from .grid import gradient_sq_norm, integrate, masked_l2_sq


@dataclass
class ConservationReport:
    """Per-level conservation/positivity/energy series for one trajectory."""

    m0: float
    mass_series: np.ndarray
    max_drift: float
    v_mass_series: np.ndarray
    v_balance_residuals: np.ndarray
    v_balance_scales: np.ndarray
    min_u_series: np.ndarray
    min_v_series: np.ndarray
    energy_series: np.ndarray


def mass_series(traj: Trajectory) -> tuple[np.ndarray, float]:
    """Grid integral of u per level and the max drift from the initial mass."""
    series = np.array([integrate(traj.grid, traj.u[n]) for n in range(traj.nt + 1)])
    drift = float(np.abs(series - series[0]).max())
    return series, drift


def v_balance_residuals(traj: Trajectory, f, sc: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Residual of the integral v-balance per step, with its scale.

    Step n -> n+1 should satisfy

        (int v_{n+1} - int v_n)/dt + int v_{n+1}
            = int u_n^p + int_{Oc} f v_{n+1},

    which follows from summing the implicit v-update over all cells.
    Returns (residuals, scales), both of length nt; residuals of a
    consistent trajectory are rounding-level relative to their scale.
    """
    f = as_control(sc, f)
    grid, dt = traj.grid, traj.dt
    vmass = np.array([integrate(grid, traj.v[n]) for n in range(traj.nt + 1)])
    res = np.empty(traj.nt)
    scales = np.empty(traj.nt)
    for n in range(traj.nt):
        rate = (vmass[n + 1] - vmass[n]) / dt
        prod = integrate(grid, production(traj.u[n], sc.p))
        ctrl = integrate(grid, np.where(grid.control_mask, f[n] * traj.v[n + 1], 0.0))
        res[n] = rate + vmass[n + 1] - prod - ctrl
        scales[n] = max(1.0, (abs(vmass[n + 1]) + abs(vmass[n])) / dt,
                        abs(prod), abs(ctrl))
    return res, scales


def negativity_report(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-level minima of u and v; reported, never clipped."""
    min_u = traj.u.min(axis=(1, 2))
    min_v = traj.v.min(axis=(1, 2))
    return min_u, min_v


def energy_series(traj: Trajectory) -> np.ndarray:
    """E_n = 1/2 ||u_n||^2 + 1/4 ||grad_h v_n||^2 (face-difference gradient).

    Nonincreasing (up to a small per-step tolerance) for quadratic
    production with zero control; recorded for any run as a trend.
    """
    grid = traj.grid
    return np.array([
        0.5 * masked_l2_sq(grid, traj.u[n])
        + 0.25 * gradient_sq_norm(grid, traj.v[n])
        for n in range(traj.nt + 1)
    ])


def conservation_report(traj: Trajectory, f, sc: Scenario) -> ConservationReport:
    """Assemble every diagnostic series for one trajectory."""
    series, drift = mass_series(traj)
    res, scales = v_balance_residuals(traj, f, sc)
    min_u, min_v = negativity_report(traj)
    vmass = np.array([integrate(traj.grid, traj.v[n]) for n in range(traj.nt + 1)])
    return ConservationReport(
        m0=float(series[0]),
        mass_series=series,
        max_drift=drift,
        v_mass_series=vmass,
        v_balance_residuals=res,
        v_balance_scales=scales,
        min_u_series=min_u,
        min_v_series=min_v,
        energy_series=energy_series(traj),
    )
