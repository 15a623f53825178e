"""Tracking cost, control gradient, and projected-gradient descent.

The cost is

    J = gamma_u/2 * int_0^T int_Od |u - u_d|^2
      + gamma_v/2 * int_0^T int_Od |v - v_d|^2
      + gamma_f/(2+eps) * int_0^T int_Oc |f|^(2+eps)

discretized with the rectangle rule over levels 1..nt.  Its gradient in
the space-time L2 control metric is gamma_f sgn(f)|f|^(1+eps) + v*eta on
the control cells, with eta from the exact discrete adjoint.  The
minimizer is projected gradient with Armijo backtracking and a
Barzilai-Borwein step proposal; every accepted iterate strictly decreases
the cost and satisfies the box constraints exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointTrajectory, control_pairing, solve_adjoint
from .forward import (
    Scenario,
    SolverError,
    Trajectory,
    as_control,
    control_inner,
    control_norm,
    solve_forward,
)
from .grid import masked_l2_sq


@dataclass
class CostBreakdown:
    """The three terms of the tracking cost and their sum."""

    j_u: float
    j_v: float
    j_f: float

    @property
    def j_total(self) -> float:
        return self.j_u + self.j_v + self.j_f


@dataclass
class IterationRecord:
    iteration: int
    j_total: float
    j_u: float
    j_v: float
    j_f: float
    stationarity: float
    step_length: float
    linesearch_trials: int


@dataclass
class OptimizationReport:
    """Outcome of `optimize`: the accepted iterates and the final point.

    `converged` is True only when the stationarity residual reached the
    tolerance; `reason` is one of 'stationary', 'max_iterations',
    'line_search_failure', 'solver_failure'.
    """

    iterates: list[IterationRecord] = field(default_factory=list)
    final_control: np.ndarray | None = None
    final_state: Trajectory | None = None
    final_cost: CostBreakdown | None = None
    converged: bool = False
    reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1 if self.iterates else 0


def evaluate_cost(traj: Trajectory, f, sc: Scenario) -> CostBreakdown:
    """Rectangle-rule discretization of the tracking cost at (traj, f)."""
    f = as_control(sc, f)
    if traj.u.shape != (sc.nt + 1, *sc.grid.shape):
        raise ValueError(
            f"trajectory shape {traj.u.shape} does not match scenario "
            f"{(sc.nt + 1, *sc.grid.shape)}"
        )
    grid, dt = sc.grid, sc.dt
    j_u = 0.0
    j_v = 0.0
    for m in range(1, sc.nt + 1):
        if sc.gamma_u != 0.0:
            j_u += dt * masked_l2_sq(grid, traj.u[m] - sc.desired_u(m), grid.observe_mask)
        if sc.gamma_v != 0.0:
            j_v += dt * masked_l2_sq(grid, traj.v[m] - sc.desired_v(m), grid.observe_mask)
    expo = 2.0 + sc.eps
    j_f = sc.gamma_f / expo * float(
        (np.abs(f) ** expo).sum() * grid.cell_area * dt
    )
    return CostBreakdown(j_u=0.5 * sc.gamma_u * j_u, j_v=0.5 * sc.gamma_v * j_v, j_f=j_f)


def penalty_derivative(f: np.ndarray, sc: Scenario) -> np.ndarray:
    """d/df of |f|^(2+eps)/(2+eps): sgn(f)|f|^(1+eps); reduces to f at eps=0."""
    if sc.eps == 0.0:
        return f
    return np.sign(f) * np.abs(f) ** (1.0 + sc.eps)


def control_gradient(adjoint: AdjointTrajectory, traj: Trajectory, f,
                     sc: Scenario) -> np.ndarray:
    """L2(Q_c) gradient of the cost: gamma_f sgn(f)|f|^(1+eps) + v*eta,
    zero off the control cells."""
    f = as_control(sc, f)
    grad = sc.gamma_f * penalty_derivative(f, sc) + control_pairing(sc, traj, adjoint)
    return np.where(sc.grid.control_mask, grad, 0.0)


def project_control(f, sc: Scenario) -> np.ndarray:
    """Clamp to the box [f_min, f_max] on the control cells (zero elsewhere).

    Idempotent and nonexpansive in the control-space L2 norm.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (sc.nt, *sc.grid.shape):
        raise ValueError(
            f"control has shape {f.shape}; expected {(sc.nt, *sc.grid.shape)}"
        )
    return np.where(sc.grid.control_mask, np.clip(f, sc.f_min, sc.f_max), 0.0)


def stationarity_residual(f, grad, sc: Scenario) -> float:
    """Projected-gradient residual ||f - P(f - grad)|| in L2(Q_c).

    Zero exactly when the discrete first-order optimality condition holds
    over the box.
    """
    f = as_control(sc, f)
    return control_norm(sc, f - project_control(f - grad, sc))


def _cost_of(sc: Scenario, f: np.ndarray) -> tuple[Trajectory, CostBreakdown]:
    traj = solve_forward(sc, f)
    return traj, evaluate_cost(traj, f, sc)


def optimize(sc: Scenario, f0=None, tol: float = 1e-6, max_iters: int = 200,
             armijo: float = 1e-4, bb_clip: tuple[float, float] = (1e-10, 1e10),
             max_backtracks: int = 60, callback=None) -> OptimizationReport:
    """Projected-gradient descent with Armijo backtracking and BB steps.

    Parameters
    ----------
    sc : Scenario
    f0 : initial control (projected onto the box if infeasible).
    tol : stationarity tolerance on ||f - P(f - grad)||.
    max_iters : iteration cap.
    armijo : sufficient-decrease parameter.
    bb_clip : safeguard interval for the Barzilai-Borwein step.
    callback : optional callable(report) invoked after each accepted iterate.
    """
    report = OptimizationReport()
    f = project_control(as_control(sc, f0), sc)
    try:
        traj, cost = _cost_of(sc, f)
        adj = solve_adjoint(traj, f, sc)
        grad = control_gradient(adj, traj, f, sc)
    except SolverError as exc:
        report.reason = f"solver_failure: {exc}"
        return report
    resid = stationarity_residual(f, grad, sc)
    report.iterates.append(IterationRecord(0, cost.j_total, cost.j_u, cost.j_v,
                                           cost.j_f, resid, 0.0, 0))
    step = 1.0 / max(control_norm(sc, grad), 1.0)

    for it in range(1, max_iters + 1):
        if resid <= tol:
            report.converged = True
            report.reason = "stationary"
            break

        accepted = False
        trials = 0
        alpha = step
        for _ in range(max_backtracks):
            trials += 1
            f_trial = project_control(f - alpha * grad, sc)
            direction = f_trial - f
            slope = control_inner(sc, grad, direction)
            if slope >= 0.0:
                # projection returned no descent direction at this step size
                alpha *= 0.5
                continue
            try:
                traj_trial, cost_trial = _cost_of(sc, f_trial)
            except SolverError as exc:
                report.reason = f"solver_failure: {exc}"
                report.final_control = f
                report.final_state = traj
                report.final_cost = cost
                return report
            if cost_trial.j_total <= cost.j_total + armijo * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            report.reason = "line_search_failure"
            break

        grad_prev, f_prev = grad, f
        f, traj, cost = f_trial, traj_trial, cost_trial
        try:
            adj = solve_adjoint(traj, f, sc)
        except SolverError as exc:
            report.reason = f"solver_failure: {exc}"
            break
        grad = control_gradient(adj, traj, f, sc)
        resid = stationarity_residual(f, grad, sc)
        report.iterates.append(IterationRecord(it, cost.j_total, cost.j_u,
                                               cost.j_v, cost.j_f, resid,
                                               alpha, trials))
        if callback is not None:
            callback(report)

        s = f - f_prev
        y = grad - grad_prev
        sy = control_inner(sc, s, y)
        if sy > 0.0:
            step = float(np.clip(control_inner(sc, s, s) / sy, *bb_clip))
        else:
            step = alpha

    if not report.converged and not report.reason:
        if resid <= tol:
            report.converged = True
            report.reason = "stationary"
        else:
            report.reason = "max_iterations"

    report.final_control = f
    report.final_state = traj
    report.final_cost = cost
    return report
