"""Exact linearization of the discrete forward map and its transpose.

`solve_tangent` differentiates each splitting step of the forward solver
exactly: the v-substep carries the production linearization p*u^(p-1)*U,
the implicit bilinear f*V term and the control perturbation df*v; the
u-substep carries both halves of the chemotaxis linearization with the
same frozen face weights as the forward step.  `solve_adjoint` runs the
transposed one-step maps backward from zero terminal data, reusing each
forward factorization with trans='T', so the duality identity
<L df, w> = <df, L^T w> holds to rounding rather than to discretization
error.

Adjoint storage convention: level m of an `AdjointTrajectory` holds the
multiplier pair attached to the step m -> m+1; the terminal level nt,
which has no outgoing step, is identically zero (the discrete terminal
condition).  With this alignment the cost gradient of control slice k
pairs v[k+1] with eta[k] directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import (
    Scenario,
    Trajectory,
    _solve,
    _u_system,
    _v_system,
    as_control,
    production_derivative,
    state_fingerprint,
)
from .grid import chemo_matrix_v, inner, laplacian_matrix


@dataclass
class TangentSource:
    """Optional volumetric sources (g_u, g_v) for the linearized system.

    Arrays of shape (nt+1, ny, nx) on the same time grid as the base
    trajectory; the step to level m injects level m of each source.
    """

    g_u: np.ndarray | None = None
    g_v: np.ndarray | None = None


@dataclass(eq=False)
class AdjointTrajectory:
    """Multiplier fields (lam, eta), shape (nt+1, ny, nx) each."""

    lam: np.ndarray
    eta: np.ndarray
    dt: float
    grid: object

    @property
    def nt(self) -> int:
        return self.lam.shape[0] - 1


def _require_base(base: Trajectory, f: np.ndarray, sc: Scenario) -> None:
    if base.fingerprint != state_fingerprint(sc, f, base.u, base.v):
        raise ValueError(
            "base trajectory does not match (scenario, control); "
            "recompute it with solve_forward on the same inputs"
        )


def _source_arrays(src: TangentSource | None, sc: Scenario):
    shape = (sc.nt + 1, *sc.grid.shape)
    if src is None:
        return np.zeros(shape), np.zeros(shape)

    def check(g, name):
        if g is None:
            return np.zeros(shape)
        g = np.asarray(g, dtype=float)
        if g.shape != shape:
            raise ValueError(f"{name} has shape {g.shape}; expected {shape}")
        if not np.isfinite(g).all():
            raise ValueError(f"{name} contains non-finite values")
        return g

    return check(src.g_u, "g_u"), check(src.g_v, "g_v")


def solve_tangent(base: Trajectory, f, df, src: TangentSource | None,
                  sc: Scenario) -> Trajectory:
    """Directional derivative (U, V) of the state along (df, src).

    U(0) = V(0) = 0; each step solves the exact derivative of the forward
    splitting step at the base state.
    """
    f = as_control(sc, f)
    df = as_control(sc, df)
    _require_base(base, f, sc)
    g_u, g_v = _source_arrays(src, sc)

    grid, dt = sc.grid, sc.dt
    lap = laplacian_matrix(grid)
    U = np.zeros((sc.nt + 1, *grid.shape))
    V = np.zeros((sc.nt + 1, *grid.shape))
    mask = grid.control_mask
    for m in range(1, sc.nt + 1):
        rhs_v = V[m - 1] + dt * (
            production_derivative(base.u[m - 1], sc.p) * U[m - 1]
            + np.where(mask, df[m - 1] * base.v[m], 0.0)
            + g_v[m]
        )
        V[m] = _solve(_v_system(sc, lap, f[m - 1]), rhs_v, "tangent v-step", m)
        drift_v = chemo_matrix_v(grid, base.u[m], base.v[m], sc.scheme)
        rhs_u = U[m - 1] + dt * (
            (drift_v @ V[m].ravel()).reshape(grid.shape) + g_u[m]
        )
        U[m] = _solve(_u_system(sc, lap, base.v[m]), rhs_u, "tangent u-step", m)
    return Trajectory(u=U, v=V, dt=dt, grid=grid,
                      min_u=U.min(axis=(1, 2)), min_v=V.min(axis=(1, 2)))


def _adjoint_sweep(base: Trajectory, f: np.ndarray, sc: Scenario,
                   q_u: np.ndarray, q_v: np.ndarray) -> AdjointTrajectory:
    """Backward transpose sweep against cotangent sources (q_u, q_v).

    Solves, for m = nt..1 with zero data above level nt,

        Au_m^T lam[m-1] = dt q_u[m] + lam[m] + dt p u_m^(p-1) eta[m]
        Av_m^T eta[m-1] = dt q_v[m] + eta[m] + dt C_m^T lam[m-1]

    where Au_m, Av_m, C_m are the matrices of the tangent step to level m.
    """
    grid, dt = sc.grid, sc.dt
    lap = laplacian_matrix(grid)
    lam = np.zeros((sc.nt + 1, *grid.shape))
    eta = np.zeros((sc.nt + 1, *grid.shape))
    for m in range(sc.nt, 0, -1):
        rhs_lam = dt * q_u[m] + lam[m] + dt * production_derivative(base.u[m], sc.p) * eta[m]
        lam[m - 1] = _solve(_u_system(sc, lap, base.v[m]), rhs_lam,
                            "adjoint u-step", m, trans="T")
        drift_v = chemo_matrix_v(grid, base.u[m], base.v[m], sc.scheme)
        rhs_eta = dt * q_v[m] + eta[m] + dt * (
            drift_v.T @ lam[m - 1].ravel()
        ).reshape(grid.shape)
        eta[m - 1] = _solve(_v_system(sc, lap, f[m - 1]), rhs_eta,
                            "adjoint v-step", m, trans="T")
    return AdjointTrajectory(lam=lam, eta=eta, dt=dt, grid=grid)


def solve_adjoint(base: Trajectory, f, sc: Scenario) -> AdjointTrajectory:
    """Multipliers for the tracking cost: transpose sweep with sources
    gamma_u (u - u_d) and gamma_v (v - v_d) on the observation cells.
    """
    f = as_control(sc, f)
    _require_base(base, f, sc)
    obs = sc.grid.observe_mask
    q_u = np.zeros((sc.nt + 1, *sc.grid.shape))
    q_v = np.zeros((sc.nt + 1, *sc.grid.shape))
    for m in range(1, sc.nt + 1):
        if sc.gamma_u != 0.0:
            q_u[m] = np.where(obs, sc.gamma_u * (base.u[m] - sc.desired_u(m)), 0.0)
        if sc.gamma_v != 0.0:
            q_v[m] = np.where(obs, sc.gamma_v * (base.v[m] - sc.desired_v(m)), 0.0)
    return _adjoint_sweep(base, f, sc, q_u, q_v)


def control_pairing(sc: Scenario, base: Trajectory, adj: AdjointTrajectory) -> np.ndarray:
    """Sensitivity of the state part of the cost to the control: v*eta on
    the control cells, index-aligned with control slices."""
    out = np.empty((sc.nt, *sc.grid.shape))
    for k in range(sc.nt):
        out[k] = np.where(sc.grid.control_mask, base.v[k + 1] * adj.eta[k], 0.0)
    return out


def duality_residual(base: Trajectory, f, df, src: TangentSource | None,
                     sc: Scenario, w_u=None, w_v=None, rng=None) -> float:
    """Transpose-correctness certificate for the full space-time operator.

    Computes |<L(df,src), w> - <(df,src), L^T w>| / scale against a
    cotangent w (random when not supplied).  Exact transposition makes
    this rounding-level, <= 1e-12.
    """
    f = as_control(sc, f)
    df_arr = as_control(sc, df)
    shape = (sc.nt + 1, *sc.grid.shape)
    if w_u is None or w_v is None:
        rng = np.random.default_rng(rng)
        if w_u is None:
            w_u = rng.standard_normal(shape)
        if w_v is None:
            w_v = rng.standard_normal(shape)
    w_u = np.asarray(w_u, dtype=float)
    w_v = np.asarray(w_v, dtype=float)
    if w_u.shape != shape or w_v.shape != shape:
        raise ValueError(f"cotangent fields must have shape {shape}")

    tang = solve_tangent(base, f, df_arr, src, sc)
    lhs = sum(
        sc.dt * (inner(sc.grid, tang.u[m], w_u[m]) + inner(sc.grid, tang.v[m], w_v[m]))
        for m in range(1, sc.nt + 1)
    )

    adj = _adjoint_sweep(base, f, sc, w_u, w_v)
    g_u, g_v = _source_arrays(src, sc)
    rhs = sum(
        sc.dt * inner(sc.grid, df_arr[k], base.v[k + 1] * adj.eta[k]
                      * sc.grid.control_mask)
        for k in range(sc.nt)
    )
    rhs += sum(
        sc.dt * (inner(sc.grid, g_u[m], adj.lam[m - 1])
                 + inner(sc.grid, g_v[m], adj.eta[m - 1]))
        for m in range(1, sc.nt + 1)
    )
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale
