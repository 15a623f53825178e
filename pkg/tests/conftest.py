import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from chemoctrl import Scenario, build_grid


def smooth_random_field(grid, rng, sigma=2.0, floor=0.0):
    """Nonnegative smoothed random field (mirror boundary matches Neumann)."""
    w = gaussian_filter(rng.random(grid.shape), sigma=sigma, mode="nearest")
    return w - w.min() + floor


def small_scenario(nx=6, ny=6, nt=6, p=2.0, T=0.4, seed=0, scheme="central",
                   control_rect=(0.0, 0.7, 0.0, 1.0),
                   observe_rect=(0.3, 1.0, 0.0, 1.0),
                   gamma_u=1.0, gamma_v=0.7, gamma_f=0.3, eps=0.0,
                   f_min=-np.inf, f_max=np.inf):
    """Nondegenerate little problem: random positive data, offset targets."""
    rng = np.random.default_rng(seed)
    grid = build_grid(1.0, 1.0, nx, ny, control_rect=control_rect,
                      observe_rect=observe_rect)
    return Scenario(
        grid=grid, p=p, T=T, nt=nt,
        u0=rng.random(grid.shape) + 0.5,
        v0=rng.random(grid.shape) + 0.2,
        gamma_u=gamma_u, gamma_v=gamma_v, gamma_f=gamma_f, eps=eps,
        f_min=f_min, f_max=f_max,
        u_d=rng.random(grid.shape),
        v_d=rng.random(grid.shape),
        scheme=scheme,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
