import numpy as np
import pytest
from scipy.integrate import solve_ivp

from chemoctrl import (
    Scenario,
    analytic_constant_solution,
    as_control,
    build_grid,
    integrate,
    solve_forward,
    step_state,
)
from chemoctrl.diagnostics import energy_series
from chemoctrl.forward import SolverError, mmatrix_margin

from conftest import small_scenario, smooth_random_field


# ---------------------------------------------------------------------------
# Dense brute-force oracle for one splitting step, assembled with plain
# loops and solved with numpy.linalg.solve; shares no code with the solver.
# ---------------------------------------------------------------------------

def dense_neumann_laplacian(ny, nx, hx, hy):
    N = nx * ny
    L = np.zeros((N, N))

    def k(j, i):
        return j * nx + i

    for j in range(ny):
        for i in range(nx):
            K = k(j, i)
            for jj, ii, h in ((j, i - 1, hx), (j, i + 1, hx),
                              (j - 1, i, hy), (j + 1, i, hy)):
                if 0 <= jj < ny and 0 <= ii < nx:
                    L[K, k(jj, ii)] += 1.0 / h ** 2
                    L[K, K] -= 1.0 / h ** 2
    return L


def dense_drift_matrix(v, hx, hy, scheme):
    ny, nx = v.shape
    N = nx * ny
    D = np.zeros((N, N))

    def k(j, i):
        return j * nx + i

    def face(K_lo, K_hi, g, h):
        if scheme == "central":
            wL = wR = 0.5
        elif g > 0:
            wL, wR = 0.0, 1.0
        elif g < 0:
            wL, wR = 1.0, 0.0
        else:
            wL = wR = 0.5
        D[K_lo, K_lo] += wL * g / h
        D[K_lo, K_hi] += wR * g / h
        D[K_hi, K_lo] -= wL * g / h
        D[K_hi, K_hi] -= wR * g / h

    for j in range(ny):
        for i in range(nx - 1):
            face(k(j, i), k(j, i + 1), (v[j, i + 1] - v[j, i]) / hx, hx)
    for j in range(ny - 1):
        for i in range(nx):
            face(k(j, i), k(j + 1, i), (v[j + 1, i] - v[j, i]) / hy, hy)
    return D


def dense_step_oracle(u_n, v_n, f_slice, p, dt, hx, hy, scheme):
    ny, nx = u_n.shape
    N = nx * ny
    L = dense_neumann_laplacian(ny, nx, hx, hy)
    I = np.eye(N)
    A_v = (1.0 + dt) * I - dt * L - dt * np.diag(f_slice.ravel())
    prod = u_n ** 2 if p == 2.0 else np.maximum(u_n, 0.0) ** p
    v_next = np.linalg.solve(A_v, (v_n + dt * prod).ravel()).reshape(ny, nx)
    A_u = I - dt * L - dt * dense_drift_matrix(v_next, hx, hy, scheme)
    u_next = np.linalg.solve(A_u, u_n.ravel()).reshape(ny, nx)
    return u_next, v_next


class TestStepState:
    def test_constant_data_zero_control(self):
        g = build_grid(1.0, 1.0, 5, 5)
        c, d = 1.3, 0.7
        sc = Scenario(grid=g, p=2.0, T=1.0, nt=10, u0=np.full(g.shape, c),
                      v0=np.full(g.shape, d), gamma_u=1.0)
        u1, v1 = step_state(sc.u0, sc.v0, np.zeros(g.shape), sc)
        np.testing.assert_allclose(u1, c, rtol=1e-13)
        expected_v = (d + sc.dt * c ** 2) / (1.0 + sc.dt)
        np.testing.assert_allclose(v1, expected_v, rtol=1e-13)

    @pytest.mark.parametrize("p,scheme", [(2.0, "central"), (1.5, "central"),
                                          (2.0, "upwind"), (1.5, "upwind")])
    def test_matches_dense_oracle(self, p, scheme, rng):
        g = build_grid(1.0, 1.0, 6, 6)
        sc = Scenario(grid=g, p=p, T=1e-3 * 8, nt=8, u0=rng.random(g.shape),
                      v0=rng.random(g.shape), gamma_u=1.0, scheme=scheme)
        f = np.where(g.control_mask, rng.standard_normal(g.shape), 0.0)
        u1, v1 = step_state(sc.u0, sc.v0, f, sc)
        u1_ref, v1_ref = dense_step_oracle(sc.u0, sc.v0, f, p, sc.dt,
                                           g.hx, g.hy, scheme)
        np.testing.assert_allclose(v1, v1_ref, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(u1, u1_ref, rtol=1e-10, atol=1e-12)

    def test_mmatrix_warning_names_cell(self):
        g = build_grid(1.0, 1.0, 4, 4)
        sc = Scenario(grid=g, p=2.0, T=1.0, nt=10, u0=np.ones(g.shape),
                      v0=np.ones(g.shape), gamma_u=1.0)
        f = np.zeros(g.shape)
        f[2, 1] = 20.0  # margin 1/dt + 1 - 20 = -9
        assert mmatrix_margin(sc, f) == pytest.approx(-9.0)
        with pytest.warns(RuntimeWarning, match=r"\(j=2, i=1\)"):
            step_state(sc.u0, sc.v0, f, sc)

    def test_singular_system_raises(self):
        # f = (1+dt)/dt on the whole domain makes the v-system -dt*Lap,
        # which is singular; the failure must surface as SolverError
        g = build_grid(1.0, 1.0, 6, 6)
        sc = Scenario(grid=g, p=2.0, T=0.5, nt=5, u0=np.ones(g.shape),
                      v0=np.ones(g.shape), gamma_u=1.0)
        with pytest.warns(RuntimeWarning):
            with pytest.raises(SolverError):
                solve_forward(sc, (1.0 + sc.dt) / sc.dt)


class TestSolveForward:
    def test_constant_data_analytic(self):
        g = build_grid(1.0, 1.0, 8, 8)
        sc = Scenario(grid=g, p=2.0, T=1.0, nt=50, u0=np.full(g.shape, 2.0),
                      v0=np.zeros(g.shape), gamma_u=1.0)
        traj = solve_forward(sc)
        assert np.abs(traj.u - 2.0).max() <= 1e-12
        t = np.arange(sc.nt + 1) * sc.dt
        _, v_exact = analytic_constant_solution(2.0, 0.0, 2.0, t)
        err = np.abs(traj.v - v_exact[:, None, None]).max(axis=(1, 2))
        assert (err <= 2.0 * sc.dt).all()

    def test_halving_dt_halves_error(self):
        g = build_grid(1.0, 1.0, 4, 4)
        errs = []
        for nt in (25, 50):
            sc = Scenario(grid=g, p=2.0, T=1.0, nt=nt, u0=np.full(g.shape, 2.0),
                          v0=np.zeros(g.shape), gamma_u=1.0)
            traj = solve_forward(sc)
            t = np.arange(nt + 1) * sc.dt
            _, v_exact = analytic_constant_solution(2.0, 0.0, 2.0, t)
            errs.append(np.abs(traj.v - v_exact[:, None, None]).max())
        order = np.log2(errs[0] / errs[1])
        assert order >= 0.9

    @pytest.mark.parametrize("p", [2.0, 1.5])
    def test_mass_conserved_any_control(self, p, rng):
        sc = small_scenario(p=p, nt=12, seed=5)
        f = as_control(sc, rng.uniform(-2.0, 2.0, (sc.nt, *sc.grid.shape)))
        traj = solve_forward(sc, f)
        m = np.array([integrate(sc.grid, traj.u[n]) for n in range(sc.nt + 1)])
        assert np.abs(m - m[0]).max() <= 1e-11 * max(1.0, abs(m[0]))

    def test_nonneg_upwind_nonneg_control(self, rng):
        g = build_grid(1.0, 1.0, 12, 12)
        u0 = smooth_random_field(g, rng)
        v0 = smooth_random_field(g, rng)
        sc = Scenario(grid=g, p=1.5, T=0.5, nt=25, u0=u0, v0=v0,
                      gamma_u=1.0, scheme="upwind")
        f = as_control(sc, rng.uniform(0.0, 1.5, (sc.nt, *g.shape)))
        assert mmatrix_margin(sc, f.max(axis=0)) > 0.0
        traj = solve_forward(sc, f)
        assert traj.min_u.min() >= -1e-12
        assert traj.min_v.min() >= -1e-12

    def test_energy_monotone_quadratic_no_control(self, rng):
        g = build_grid(1.0, 1.0, 16, 16)
        sc = Scenario(grid=g, p=2.0, T=0.5, nt=50,
                      u0=smooth_random_field(g, rng),
                      v0=smooth_random_field(g, rng), gamma_u=1.0)
        traj = solve_forward(sc)
        E = energy_series(traj)
        assert np.diff(E).max() <= 1e-8 * E[0]

    def test_deterministic_bit_identical(self, rng):
        sc = small_scenario(seed=9)
        f = as_control(sc, rng.standard_normal((sc.nt, *sc.grid.shape)))
        t1 = solve_forward(sc, f)
        t2 = solve_forward(sc, f)
        assert np.array_equal(t1.u, t2.u) and np.array_equal(t1.v, t2.v)
        assert t1.fingerprint == t2.fingerprint

    def test_inline_minima_match_fields(self, rng):
        sc = small_scenario(seed=3)
        traj = solve_forward(sc, None)
        np.testing.assert_array_equal(traj.min_u, traj.u.min(axis=(1, 2)))
        np.testing.assert_array_equal(traj.min_v, traj.v.min(axis=(1, 2)))


class TestAnalyticConstantSolution:
    def test_initial_condition(self):
        assert analytic_constant_solution(1.7, 0.3, 1.5, 0.0) == (1.7, pytest.approx(0.3))

    def test_fixed_point(self):
        for t in (0.0, 1.0, 10.0):
            u, v = analytic_constant_solution(1.0, 1.0, 2.0, t)
            assert (u, v) == (1.0, pytest.approx(1.0))

    def test_long_time_limit_against_ode(self):
        # independent oracle: integrate dv/dt = c^p - v numerically
        sol = solve_ivp(lambda t, v: 4.0 - v, (0.0, 12.0), [0.0],
                        rtol=1e-12, atol=1e-14)
        _, v = analytic_constant_solution(2.0, 0.0, 2.0, 12.0)
        assert v == pytest.approx(sol.y[0, -1], abs=1e-9)
        assert v == pytest.approx(4.0, abs=1e-4)

    def test_negative_data_rejected(self):
        with pytest.raises(ValueError):
            analytic_constant_solution(-1.0, 0.0, 2.0, 1.0)


class TestScenarioValidation:
    def _kwargs(self):
        g = build_grid(1.0, 1.0, 4, 4)
        return dict(grid=g, p=2.0, T=1.0, nt=4, u0=np.ones(g.shape),
                    v0=np.ones(g.shape), gamma_u=1.0)

    def test_p_out_of_range(self):
        for bad_p in (2.5, 1.0, 0.5):
            kw = self._kwargs()
            kw["p"] = bad_p
            with pytest.raises(ValueError, match="1 < p <= 2"):
                Scenario(**kw)

    def test_negative_initial_data(self):
        kw = self._kwargs()
        kw["u0"] = kw["u0"].copy()
        kw["u0"][0, 0] = -0.1
        with pytest.raises(ValueError, match="nonnegative"):
            Scenario(**kw)

    def test_all_zero_weights(self):
        kw = self._kwargs()
        kw["gamma_u"] = 0.0
        with pytest.raises(ValueError, match="not all be zero"):
            Scenario(**kw)

    def test_empty_box(self):
        kw = self._kwargs()
        kw.update(f_min=1.0, f_max=0.0)
        with pytest.raises(ValueError, match="empty control box"):
            Scenario(**kw)
