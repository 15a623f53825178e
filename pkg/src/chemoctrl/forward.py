"""Time integration of the chemo-repulsion state system.

The state is a cell-density field u and a chemical-concentration field v on
a `Grid2D`, advanced by a linearly implicit splitting: each step first
solves the v-equation (production explicit in the old u, bilinear control
term implicit) and then the u-equation (chemotaxis implicit with the new v
frozen).  Both substeps are sparse linear solves; the u-update telescopes,
so the grid integral of u is conserved to rounding at every step.

Controls are numpy arrays of shape ``(nt, ny, nx)``: slice ``k`` acts on
the step from level k to level k+1 and is zero off the control mask.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    Grid2D,
    _check_field,
    chemo_matrix_u,
    laplacian_matrix,
)


class SolverError(RuntimeError):
    """A linear solve failed; carries the stage, time level and residual."""

    def __init__(self, message, stage=None, level=None, residual=None):
        super().__init__(message)
        self.stage = stage
        self.level = level
        self.residual = residual


def production(u: np.ndarray, p: float) -> np.ndarray:
    """Signal production u^p; non-integer p uses the positive part of u."""
    if p == 2.0:
        return u * u
    return np.maximum(u, 0.0) ** p


def production_derivative(u: np.ndarray, p: float) -> np.ndarray:
    """Exact derivative of `production`: 2u, or p*max(u,0)^(p-1) (0 at u<=0)."""
    if p == 2.0:
        return 2.0 * u
    return p * np.maximum(u, 0.0) ** (p - 1.0)


@dataclass
class Scenario:
    """All problem data for one control problem.

    Parameters
    ----------
    grid : Grid2D
    p : float
        Production exponent, in (1, 2].
    T : float
        Final time.
    nt : int
        Number of time steps; dt = T/nt.
    u0, v0 : ndarray (ny, nx)
        Nonnegative initial data.
    u_d, v_d : ndarray, (ny, nx) or (nt+1, ny, nx), optional
        Desired states on the observation subdomain, constant in time or
        per level.  Default zero.
    gamma_u, gamma_v, gamma_f : float
        Nonnegative cost weights, not all zero.
    eps : float
        Control-cost exponent offset; the penalty exponent is 2 + eps.
    f_min, f_max : float
        Box bounds for the control (may be +-inf).
    scheme : str
        Face-value rule for the chemotaxis term, 'central' or 'upwind'.
    """

    grid: Grid2D
    p: float
    T: float
    nt: int
    u0: np.ndarray
    v0: np.ndarray
    gamma_u: float = 1.0
    gamma_v: float = 0.0
    gamma_f: float = 0.0
    eps: float = 0.0
    f_min: float = -np.inf
    f_max: float = np.inf
    u_d: np.ndarray | None = None
    v_d: np.ndarray | None = None
    scheme: str = "central"

    def __post_init__(self):
        if not 1.0 < self.p <= 2.0:
            raise ValueError(
                f"production exponent p={self.p} unsupported; need 1 < p <= 2 "
                "(the superquadratic regime is an open problem)"
            )
        if self.T <= 0.0 or self.nt < 1:
            raise ValueError(f"need T > 0 and nt >= 1, got T={self.T}, nt={self.nt}")
        self.u0 = _check_field(self.grid, self.u0, "u0")
        self.v0 = _check_field(self.grid, self.v0, "v0")
        if self.u0.min() < 0.0 or self.v0.min() < 0.0:
            raise ValueError("initial data must be nonnegative cellwise")
        if min(self.gamma_u, self.gamma_v, self.gamma_f) < 0.0:
            raise ValueError("cost weights must be nonnegative")
        if self.gamma_u == self.gamma_v == self.gamma_f == 0.0:
            raise ValueError("cost weights must not all be zero")
        if self.eps < 0.0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.f_min > self.f_max:
            raise ValueError(f"empty control box: f_min={self.f_min} > f_max={self.f_max}")
        if self.scheme not in ("central", "upwind"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        self.u_d = self._check_desired(self.u_d, "u_d")
        self.v_d = self._check_desired(self.v_d, "v_d")

    def _check_desired(self, w, name):
        if w is None:
            return np.zeros(self.grid.shape)
        w = np.asarray(w, dtype=float)
        if w.shape == self.grid.shape:
            return w
        if w.shape == (self.nt + 1, *self.grid.shape):
            return w
        raise ValueError(
            f"{name} has shape {w.shape}; expected {self.grid.shape} or "
            f"{(self.nt + 1, *self.grid.shape)}"
        )

    @property
    def dt(self) -> float:
        return self.T / self.nt

    def desired_u(self, level: int) -> np.ndarray:
        return self.u_d[level] if self.u_d.ndim == 3 else self.u_d

    def desired_v(self, level: int) -> np.ndarray:
        return self.v_d[level] if self.v_d.ndim == 3 else self.v_d


def zero_control(sc: Scenario) -> np.ndarray:
    """All-zero control, shape (nt, ny, nx)."""
    return np.zeros((sc.nt, *sc.grid.shape))


def as_control(sc: Scenario, f) -> np.ndarray:
    """Validate/coerce a control array; scalars and None are broadcast.

    Entries off the control mask are zeroed (controls live on the control
    subdomain only).
    """
    if f is None:
        return zero_control(sc)
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        f = np.full((sc.nt, *sc.grid.shape), float(f))
    if f.shape != (sc.nt, *sc.grid.shape):
        raise ValueError(
            f"control has shape {f.shape}; expected {(sc.nt, *sc.grid.shape)}"
        )
    if not np.isfinite(f).all():
        raise ValueError("control contains non-finite values")
    return np.where(sc.grid.control_mask, f, 0.0)


def control_inner(sc: Scenario, a: np.ndarray, b: np.ndarray) -> float:
    """Space-time L2 inner product on the control cylinder."""
    return float((a * b).sum() * sc.grid.cell_area * sc.dt)


def control_norm(sc: Scenario, a: np.ndarray) -> float:
    return float(np.sqrt(control_inner(sc, a, a)))


@dataclass(eq=False)
class Trajectory:
    """Time-indexed state (u, v): arrays of shape (nt+1, ny, nx).

    `min_u`/`min_v` record the per-level minima, `mmatrix_margin` the
    smallest diagonal margin 1/dt + 1 - f seen over control cells (the
    v-system loses the M-matrix property when it reaches zero), and
    `fingerprint` ties the trajectory to the inputs that produced it.
    """

    u: np.ndarray
    v: np.ndarray
    dt: float
    grid: Grid2D
    min_u: np.ndarray = field(default=None, repr=False)
    min_v: np.ndarray = field(default=None, repr=False)
    mmatrix_margin: float = np.inf
    fingerprint: str = ""

    @property
    def nt(self) -> int:
        return self.u.shape[0] - 1


def state_fingerprint(sc: Scenario, f: np.ndarray, u: np.ndarray, v: np.ndarray) -> str:
    """Checksum binding a trajectory to the scenario/control that made it."""
    h = hashlib.sha256()
    h.update(np.asarray([sc.p, sc.dt, sc.T], dtype=float).tobytes())
    h.update(sc.scheme.encode())
    h.update(np.ascontiguousarray(f).tobytes())
    h.update(np.ascontiguousarray(u).tobytes())
    h.update(np.ascontiguousarray(v).tobytes())
    return h.hexdigest()


def _solve(A: sp.spmatrix, rhs: np.ndarray, stage: str, level: int,
           trans: str = "N") -> np.ndarray:
    """Direct sparse LU solve with a residual check.

    trans='T' solves with the transpose of A using the same factorization,
    which keeps forward/adjoint solves exact transposes of each other.
    """
    b = rhs.ravel()
    try:
        lu = spla.splu(A.tocsc())
        x = lu.solve(b, trans=trans)
    except RuntimeError as exc:  # singular factorization
        raise SolverError(
            f"{stage} solve failed at level {level}: {exc}",
            stage=stage, level=level, residual=np.inf,
        ) from exc
    op = A.T if trans == "T" else A
    res = np.abs(op @ x - b).max()
    scale = max(np.abs(b).max(), np.abs(x).max(), 1.0)
    if not np.isfinite(x).all() or res > 1e-8 * scale:
        raise SolverError(
            f"{stage} solve at level {level} left residual {res:.3e} "
            f"(scale {scale:.3e})",
            stage=stage, level=level, residual=float(res),
        )
    return x.reshape(rhs.shape)


def _v_system(sc: Scenario, lap: sp.spmatrix, f_slice: np.ndarray) -> sp.csr_matrix:
    """(1+dt) I - dt*Lap - dt*diag(f) on the control cells."""
    n = sc.grid.n_cells
    fvec = np.where(sc.grid.control_mask, f_slice, 0.0).ravel()
    return (sp.identity(n, format="csr") * (1.0 + sc.dt)
            - sc.dt * lap
            - sp.diags(sc.dt * fvec, format="csr"))


def _u_system(sc: Scenario, lap: sp.spmatrix, v_next: np.ndarray) -> sp.csr_matrix:
    """I - dt*Lap - dt*Div[grad v_next] acting on u."""
    n = sc.grid.n_cells
    drift = chemo_matrix_u(sc.grid, v_next, sc.scheme)
    return sp.identity(n, format="csr") - sc.dt * lap - sc.dt * drift


def mmatrix_margin(sc: Scenario, f_slice: np.ndarray) -> float:
    """Diagonal margin 1/dt + 1 - f over control cells (v-system well-posedness)."""
    on = f_slice[sc.grid.control_mask]
    worst = on.max() if on.size else 0.0
    return float(1.0 / sc.dt + 1.0 - worst)


def step_state(u_n: np.ndarray, v_n: np.ndarray, f_slice: np.ndarray,
               sc: Scenario, lap: sp.spmatrix | None = None,
               level: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One splitting step: solve for v_next, then u_next with v_next frozen.

    v_next: ((1+dt) I - dt Lap - dt f) v_next = v_n + dt * u_n^p
    u_next: (I - dt Lap - dt Div[grad v_next]) u_next = u_n

    Returns (u_next, v_next).  Warns (and names the worst cell) when the
    bilinear term drives a v-system diagonal entry nonpositive; the solve
    still proceeds and fails loudly only if the system is singular.
    """
    u_n = _check_field(sc.grid, u_n, "u_n")
    v_n = _check_field(sc.grid, v_n, "v_n")
    f_slice = _check_field(sc.grid, f_slice, "f_slice")
    if lap is None:
        lap = laplacian_matrix(sc.grid)

    margin = mmatrix_margin(sc, f_slice)
    if margin <= 0.0:
        masked = np.where(sc.grid.control_mask, f_slice, -np.inf)
        j, i = np.unravel_index(int(np.argmax(masked)), sc.grid.shape)
        warnings.warn(
            f"v-system diagonal margin {margin:.3e} <= 0 at cell "
            f"(j={j}, i={i}) where f={f_slice[j, i]:.6g}; the implicit "
            "bilinear term makes the step ill-posed for this dt",
            RuntimeWarning,
        )

    rhs_v = v_n + sc.dt * production(u_n, sc.p)
    v_next = _solve(_v_system(sc, lap, f_slice), rhs_v, "v-step", level)
    u_next = _solve(_u_system(sc, lap, v_next), u_n, "u-step", level)
    return u_next, v_next


def solve_forward(sc: Scenario, f=None) -> Trajectory:
    """Integrate the state system over all nt steps.

    Parameters
    ----------
    sc : Scenario
    f : control array (nt, ny, nx), scalar, or None for zero control.

    Returns
    -------
    Trajectory with per-level minima and the worst v-system diagonal margin.
    """
    f = as_control(sc, f)
    grid = sc.grid
    lap = laplacian_matrix(grid)
    u = np.empty((sc.nt + 1, *grid.shape))
    v = np.empty((sc.nt + 1, *grid.shape))
    u[0], v[0] = sc.u0, sc.v0
    worst_margin = np.inf
    for n in range(sc.nt):
        worst_margin = min(worst_margin, mmatrix_margin(sc, f[n]))
        u[n + 1], v[n + 1] = step_state(u[n], v[n], f[n], sc, lap=lap, level=n + 1)
    traj = Trajectory(
        u=u, v=v, dt=sc.dt, grid=grid,
        min_u=u.min(axis=(1, 2)), min_v=v.min(axis=(1, 2)),
        mmatrix_margin=worst_margin,
        fingerprint=state_fingerprint(sc, f, u, v),
    )
    return traj


def analytic_constant_solution(c: float, d: float, p: float, t) -> tuple[float, np.ndarray]:
    """Exact spatially homogeneous solution with zero control.

    For constant data all spatial terms vanish: u stays c and v solves
    dv/dt + v = c^p, giving v(t) = c^p + (d - c^p) exp(-t).
    """
    if c < 0.0 or d < 0.0:
        raise ValueError("constant data must be nonnegative")
    cp = float(production(np.asarray(c, dtype=float), p))
    return c, cp + (d - cp) * np.exp(-np.asarray(t, dtype=float))
