"""Uniform cell-centered 2D grids and conservative finite-difference operators.

Fields are plain numpy arrays of shape ``(ny, nx)`` (one value per cell
center, row ``j`` = y index, column ``i`` = x index), matching the on-disk
CSV layout of ny rows by nx columns.  All differential operators are built
from face fluxes with homogeneous Neumann (zero-flux) boundary faces, so the
grid integral of every divergence is zero up to rounding: conservation is
structural, not approximate.

All functions here are pure; they never mutate their inputs and are safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(eq=False, frozen=True)
class Grid2D:
    """Uniform rectangular grid on [0, Lx] x [0, Ly] with subdomain masks.

    Attributes
    ----------
    nx, ny : int
        Number of cells in x and y.
    hx, hy : float
        Cell widths; nx*hx == Lx and ny*hy == Ly to rounding.
    Lx, Ly : float
        Domain extent.
    control_mask : ndarray of bool, shape (ny, nx)
        Cells whose centers lie in the control subdomain.
    observe_mask : ndarray of bool, shape (ny, nx)
        Cells whose centers lie in the observation subdomain.
    """

    nx: int
    ny: int
    hx: float
    hy: float
    Lx: float
    Ly: float
    control_mask: np.ndarray = field(repr=False)
    observe_mask: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (X, Y) arrays of cell-center coordinates, shape (ny, nx)."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y)


def build_grid(Lx, Ly, nx, ny, control_rect=None, observe_rect=None) -> Grid2D:
    """Build a uniform grid and rasterize the control/observation rectangles.

    Parameters
    ----------
    Lx, Ly : float
        Positive domain extent.
    nx, ny : int
        Cell counts, at least 2 each.
    control_rect, observe_rect : (xmin, xmax, ymin, ymax) or None
        Axis-aligned rectangle; a cell belongs to the mask when its center
        lies inside (closed).  None means the full domain.

    Raises
    ------
    ValueError
        On a zero-area domain, too few cells, or a rectangle that captures
        no cell center.
    """
    if Lx <= 0.0 or Ly <= 0.0:
        raise ValueError(f"domain must have positive area, got Lx={Lx}, Ly={Ly}")
    if nx < 2 or ny < 2:
        raise ValueError(f"need at least 2 cells per direction, got nx={nx}, ny={ny}")
    hx = Lx / nx
    hy = Ly / ny

    def rasterize(rect, name):
        if rect is None:
            return np.ones((ny, nx), dtype=bool)
        xmin, xmax, ymin, ymax = rect
        xc = (np.arange(nx) + 0.5) * hx
        yc = (np.arange(ny) + 0.5) * hy
        inside_x = (xc >= xmin) & (xc <= xmax)
        inside_y = (yc >= ymin) & (yc <= ymax)
        mask = np.outer(inside_y, inside_x)
        if not mask.any():
            raise ValueError(
                f"{name} rectangle {rect} contains no cell center on the "
                f"{nx}x{ny} grid"
            )
        return mask

    control_mask = rasterize(control_rect, "control")
    observe_mask = rasterize(observe_rect, "observe")
    control_mask.setflags(write=False)
    observe_mask.setflags(write=False)
    return Grid2D(nx=nx, ny=ny, hx=hx, hy=hy, Lx=Lx, Ly=Ly,
                  control_mask=control_mask, observe_mask=observe_mask)


def _check_field(grid: Grid2D, w: np.ndarray, name: str = "field") -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != grid.shape:
        raise ValueError(f"{name} has shape {w.shape}, grid expects {grid.shape}")
    if not np.isfinite(w).all():
        raise ValueError(f"{name} contains non-finite values")
    return w


def integrate(grid: Grid2D, w: np.ndarray) -> float:
    """Grid integral of a field: midpoint rule, sum(w) * hx * hy."""
    w = _check_field(grid, w)
    return float(w.sum() * grid.cell_area)


def masked_l2_sq(grid: Grid2D, w: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Squared L2 norm of a field restricted to a subdomain mask.

    ``mask=None`` integrates over the full domain.
    """
    w = _check_field(grid, w)
    if mask is None:
        return float((w * w).sum() * grid.cell_area)
    if mask.shape != grid.shape:
        raise ValueError(f"mask has shape {mask.shape}, grid expects {grid.shape}")
    if not mask.any():
        raise ValueError("mask selects no cells")
    vals = w[mask]
    return float((vals * vals).sum() * grid.cell_area)


def inner(grid: Grid2D, a: np.ndarray, b: np.ndarray) -> float:
    """Discrete L2(Omega) inner product, sum(a*b) * hx * hy."""
    return float((np.asarray(a) * np.asarray(b)).sum() * grid.cell_area)


def gradient_sq_norm(grid: Grid2D, w: np.ndarray) -> float:
    """Squared discrete H1 seminorm from interior face differences.

    Each interior face contributes ((w_R - w_L)/h)^2 * hx * hy; boundary
    faces carry zero gradient (Neumann), consistent with the flux operators.
    """
    w = _check_field(grid, w)
    gx = np.diff(w, axis=1) / grid.hx
    gy = np.diff(w, axis=0) / grid.hy
    return float(((gx * gx).sum() + (gy * gy).sum()) * grid.cell_area)


def _div_from_fluxes(grid: Grid2D, flux_x: np.ndarray, flux_y: np.ndarray) -> np.ndarray:
    """Divergence of interior face fluxes; boundary faces are zero-flux."""
    div = np.zeros(grid.shape)
    div[:, :-1] += flux_x / grid.hx   # east face of cell (j, i), i < nx-1
    div[:, 1:] -= flux_x / grid.hx    # west face of cell (j, i), i > 0
    div[:-1, :] += flux_y / grid.hy
    div[1:, :] -= flux_y / grid.hy
    return div


def laplacian_neumann(grid: Grid2D, w: np.ndarray) -> np.ndarray:
    """Five-point Laplacian with zero-flux boundary faces (ghost mirroring)."""
    w = _check_field(grid, w)
    flux_x = np.diff(w, axis=1) / grid.hx
    flux_y = np.diff(w, axis=0) / grid.hy
    return _div_from_fluxes(grid, flux_x, flux_y)


def _face_weights(grid: Grid2D, v: np.ndarray, scheme: str):
    """Per-face weights (wL, wR) selecting the face value of u in u*grad(v).

    central: arithmetic mean.  upwind: take u from the cell with the larger
    v (the upwind side of the drift -grad(v)); ties fall back to the mean.
    Returns (wLx, wRx, wLy, wRy) for x- and y-interior faces.
    """
    if scheme == "central":
        wLx = np.full((grid.ny, grid.nx - 1), 0.5)
        wRx = wLx
        wLy = np.full((grid.ny - 1, grid.nx), 0.5)
        wRy = wLy
        return wLx, wRx, wLy, wRy
    if scheme == "upwind":
        dvx = np.diff(v, axis=1)
        dvy = np.diff(v, axis=0)
        wRx = np.where(dvx > 0, 1.0, np.where(dvx < 0, 0.0, 0.5))
        wLx = 1.0 - wRx
        wRy = np.where(dvy > 0, 1.0, np.where(dvy < 0, 0.0, 0.5))
        wLy = 1.0 - wRy
        return wLx, wRx, wLy, wRy
    raise ValueError(f"unknown scheme {scheme!r}, expected 'central' or 'upwind'")


def chemotactic_divergence(grid: Grid2D, u: np.ndarray, v: np.ndarray,
                           scheme: str = "central") -> np.ndarray:
    """Conservative drift term div(u * grad(v)) in face-flux form.

    Per interior face the flux is u_face * (v_across - v_here)/h with u_face
    chosen by `scheme`; boundary faces carry zero flux, so the grid integral
    of the result telescopes to zero.
    """
    u = _check_field(grid, u, "u")
    v = _check_field(grid, v, "v")
    wLx, wRx, wLy, wRy = _face_weights(grid, v, scheme)
    u_face_x = wLx * u[:, :-1] + wRx * u[:, 1:]
    u_face_y = wLy * u[:-1, :] + wRy * u[1:, :]
    flux_x = u_face_x * np.diff(v, axis=1) / grid.hx
    flux_y = u_face_y * np.diff(v, axis=0) / grid.hy
    return _div_from_fluxes(grid, flux_x, flux_y)


# ---------------------------------------------------------------------------
# Sparse operator assembly.  Cell (j, i) maps to unknown k = j*nx + i, the
# row-major ravel of the (ny, nx) field arrays.  Both assemblers scatter
# each face as a (+row_L, -row_R) pair, so matrix columns sum to zero
# exactly and mass conservation survives in floating point.
# ---------------------------------------------------------------------------

def _face_index_pairs(grid: Grid2D):
    """Unknown indices (left, right) for interior x-faces and (low, high) y-faces."""
    k = np.arange(grid.n_cells).reshape(grid.shape)
    left_x = k[:, :-1].ravel()
    right_x = k[:, 1:].ravel()
    low_y = k[:-1, :].ravel()
    high_y = k[1:, :].ravel()
    return left_x, right_x, low_y, high_y


def _assemble_div(grid: Grid2D, cL_x, cR_x, cL_y, cR_y) -> sp.csr_matrix:
    """Matrix of w -> div(F) with face flux F = cL*w_L + cR*w_R.

    The divergence adds +F/h to the left/low cell and -F/h to the
    right/high cell of each interior face.
    """
    lx, rx, ly, hy_idx = _face_index_pairs(grid)
    rows, cols, vals = [], [], []

    def scatter(low, high, cL, cR, h):
        cL = np.broadcast_to(np.asarray(cL, dtype=float).ravel(), low.shape)
        cR = np.broadcast_to(np.asarray(cR, dtype=float).ravel(), low.shape)
        rows.extend([low, low, high, high])
        cols.extend([low, high, low, high])
        vals.extend([cL / h, cR / h, -cL / h, -cR / h])

    scatter(lx, rx, cL_x, cR_x, grid.hx)
    scatter(ly, hy_idx, cL_y, cR_y, grid.hy)
    n = grid.n_cells
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsr()


def laplacian_matrix(grid: Grid2D) -> sp.csr_matrix:
    """Sparse matrix of `laplacian_neumann` (symmetric, columns sum to zero)."""
    shape_x = (grid.ny, grid.nx - 1)
    shape_y = (grid.ny - 1, grid.nx)
    cx = np.full(shape_x, 1.0 / grid.hx)
    cy = np.full(shape_y, 1.0 / grid.hy)
    return _assemble_div(grid, -cx, cx, -cy, cy)


def chemo_matrix_u(grid: Grid2D, v: np.ndarray, scheme: str = "central") -> sp.csr_matrix:
    """Sparse matrix of u -> div(u * grad(v)) with v (and its upwind switches) frozen."""
    v = _check_field(grid, v, "v")
    wLx, wRx, wLy, wRy = _face_weights(grid, v, scheme)
    gx = np.diff(v, axis=1) / grid.hx
    gy = np.diff(v, axis=0) / grid.hy
    return _assemble_div(grid, wLx * gx, wRx * gx, wLy * gy, wRy * gy)


def chemo_matrix_v(grid: Grid2D, u: np.ndarray, v_switch: np.ndarray,
                   scheme: str = "central") -> sp.csr_matrix:
    """Sparse matrix of V -> div(u_face * grad(V)).

    The face value u_face uses the same selection rule (and, for upwind,
    the same switches frozen at `v_switch`) as the forward step, so this is
    the exact partial derivative of `chemotactic_divergence` in v.
    """
    u = _check_field(grid, u, "u")
    wLx, wRx, wLy, wRy = _face_weights(grid, v_switch, scheme)
    uf_x = (wLx * u[:, :-1] + wRx * u[:, 1:]) / grid.hx
    uf_y = (wLy * u[:-1, :] + wRy * u[1:, :]) / grid.hy
    return _assemble_div(grid, -uf_x, uf_x, -uf_y, uf_y)
