"""SCA design of the C-UAV waypoint for one CPI.

With the beamformers fixed, the leakage rate does not depend on the C-UAV
position, so the subproblem maximizes the legitimate rate over the reachable
set.  Each SCA iteration freezes the steering vector at the previous iterate
(the channel amplitude keeps its exact 1/r dependence, moved into the noise
term as ||q - q_b||^2 sigma_c^2) and linearizes both the rate and the
collision constraint.  The linearized rate is a constant minus an increasing
function of ||q - q_b||^2, so each subproblem reduces to minimizing the
squared distance to the GBS over ball * box * half-space; the collision
half-space implies the true quadratic separation, so every iterate is
feasible for the original constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from ..geometry import UpaGeometry, steering_vectors_cart
from .solver import InfeasibleProblemError, solve_conic


@dataclass(frozen=True)
class TrajectoryProblem:
    geom: UpaGeometry
    prev_pos: np.ndarray
    e_pred: np.ndarray
    w_c_mat: np.ndarray
    w_e_mat: np.ndarray
    box: tuple[np.ndarray, np.ndarray]
    v_max: float
    dt: float
    d_min: float
    sigma2_c: float
    beta0: float
    q_b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # Safety margin above d_min used as the design setpoint.  The collision
    # target is a noisy prediction that can jump between CPIs by more than
    # one CPI of C-UAV travel; designing against d_min + d_margin keeps the
    # hard d_min constraint reachable through such jumps.
    d_margin: float = 0.0

    def __post_init__(self):
        lo, hi = self.box
        if np.any(np.asarray(lo) > np.asarray(hi)):
            raise ValueError("box must be nonempty")
        if self.v_max <= 0 or self.d_min <= 0 or self.dt <= 0:
            raise ValueError("v_max, d_min, dt must be positive")

    @property
    def radius(self) -> float:
        return self.v_max * self.dt


@dataclass(frozen=True)
class TrajectorySettings:
    mu2: float = 1e-3
    max_iters: int = 30


@dataclass(frozen=True)
class TrajectoryResult:
    q: np.ndarray
    rate: float
    iterations: int
    converged: bool
    restored: bool


def _quad_forms(problem: TrajectoryProblem, at: np.ndarray) -> tuple[float, float]:
    """A = tr(H_tilde W_c), B = tr(H_tilde W_e) with steering frozen at
    ``at`` and the range-free channel h_tilde = beta0 * alpha."""
    alpha = steering_vectors_cart(problem.geom, np.asarray(at)[None, :])[0]
    a_val = float(np.real(np.vdot(alpha, problem.w_c_mat @ alpha)))
    b_val = float(np.real(np.vdot(alpha, problem.w_e_mat @ alpha)))
    return problem.beta0**2 * a_val, problem.beta0**2 * b_val


def trajectory_rate(problem: TrajectoryProblem, q: np.ndarray,
                    frozen_at: np.ndarray | None = None) -> float:
    """Legitimate rate at q, optionally with the steering frozen elsewhere."""
    a_val, b_val = _quad_forms(problem, q if frozen_at is None else frozen_at)
    r2 = float(np.sum((np.asarray(q) - problem.q_b)**2))
    return float(np.log2(1.0 + a_val / (b_val + r2 * problem.sigma2_c)))


def collision_target(problem: TrajectoryProblem) -> float:
    """Separation the subproblem half-space enforces this CPI.

    The setpoint d_min + d_margin, shrunk to what one CPI of full-speed
    retreat can certify through the linearized constraint (the linearization
    at the previous position reaches at most dist^2 + 2 radius dist).  Always
    at least d_min; below that the instance is genuinely infeasible.
    """
    dist = float(np.linalg.norm(problem.prev_pos - problem.e_pred))
    reachable_sq = dist**2 + 2.0 * problem.radius * dist * (1.0 - 1e-12)
    target = min(problem.d_min + problem.d_margin, np.sqrt(reachable_sq))
    if target < problem.d_min:
        raise InfeasibleProblemError(
            f"cannot restore collision feasibility: predicted separation "
            f"{dist:.3g} m cannot reach {problem.d_min:.3g} m within the "
            f"reachable radius {problem.radius:.3g} m")
    return float(target)


def restore_feasible_start(problem: TrajectoryProblem) -> tuple[np.ndarray, bool]:
    """Project the previous position onto the collision half-space (cut at
    the previous position itself) intersected with the speed ball."""
    u0 = problem.prev_pos - problem.e_pred
    dist = float(np.linalg.norm(u0))
    if dist == 0.0:
        raise InfeasibleProblemError(
            "previous C-UAV position coincides with the predicted E-UAV")
    target = collision_target(problem)
    if dist >= target:
        return np.array(problem.prev_pos, dtype=float), False
    step = (target**2 - dist**2) / (2.0 * dist)
    if step > problem.radius + 1e-12:
        raise InfeasibleProblemError(
            f"cannot restore collision feasibility: required move {step:.3g} m"
            f" exceeds the reachable radius {problem.radius:.3g} m")
    q0 = problem.prev_pos + step * (u0 / dist)
    lo, hi = problem.box
    q0 = np.clip(q0, lo, hi)
    if dist**2 + 2.0 * float(u0 @ (q0 - problem.prev_pos)) < target**2 - 1e-9:
        raise InfeasibleProblemError(
            "box clipping broke the restored collision half-space")
    return q0, True


# one compiled parametric subproblem shared by every solve in the process
_SUB = None


def _subproblem():
    global _SUB
    if _SUB is None:
        q = cp.Variable(3)
        p = {name: cp.Parameter(3) for name in
             ("q_b", "prev", "lo", "hi", "a_cut")}
        p["radius"] = cp.Parameter(nonneg=True)
        p["b_cut"] = cp.Parameter()
        cons = [cp.norm(q - p["prev"]) <= p["radius"],
                q >= p["lo"], q <= p["hi"],
                p["a_cut"] @ q >= p["b_cut"]]
        prob = cp.Problem(cp.Minimize(cp.sum_squares(q - p["q_b"])), cons)
        _SUB = (prob, q, p)
    return _SUB


def _solve_step(problem: TrajectoryProblem, lin_q: np.ndarray,
                target: float) -> np.ndarray:
    """One convex subproblem: nearest-to-GBS point of the reachable set cut
    by the collision half-space linearized at lin_q."""
    prob, q, p = _subproblem()
    u_k = lin_q - problem.e_pred
    p["q_b"].value = problem.q_b
    p["prev"].value = np.asarray(problem.prev_pos, dtype=float)
    p["lo"].value, p["hi"].value = (np.asarray(b, dtype=float)
                                    for b in problem.box)
    p["radius"].value = problem.radius
    p["a_cut"].value = 2.0 * u_k
    p["b_cut"].value = (target**2 - float(u_k @ u_k)
                        + 2.0 * float(u_k @ lin_q))
    solve_conic(prob)
    return np.asarray(q.value, dtype=float)


def solve_trajectory(problem: TrajectoryProblem,
                     settings: TrajectorySettings = TrajectorySettings(),
                     ) -> TrajectoryResult:
    q_k, restored = restore_feasible_start(problem)
    target = collision_target(problem)
    rate_prev = None
    iterations = 0
    converged = False
    for iterations in range(1, settings.max_iters + 1):
        q_next = _solve_step(problem, q_k, target)
        rate_k = trajectory_rate(problem, q_next, frozen_at=q_k)
        moved = float(np.linalg.norm(q_next - q_k))
        q_k = q_next
        if moved < 1e-9:
            converged = True
            break
        if rate_prev is not None:
            if abs(rate_k - rate_prev) / max(abs(rate_prev), 1e-12) < settings.mu2:
                converged = True
                break
        rate_prev = rate_k
    return TrajectoryResult(q=q_k, rate=trajectory_rate(problem, q_k),
                            iterations=iterations, converged=converged,
                            restored=restored)
