"""Alternating optimization of the beamformers and the C-UAV waypoint.

One AO iteration runs the beamforming solve at the current C-UAV position,
then the trajectory solve with the resulting covariances.  Both subproblem
solvers maximize surrogate bounds, so a step can in rare numerical cases
lower the exact predicted secrecy rate; such steps are rejected (the previous
iterate is kept), which makes the reported secrecy trace nondecreasing by
construction while keeping every reported value an honestly evaluated rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..channel import LosChannel
from ..geometry import UpaGeometry, steering_vectors_cart
from .beamforming import (BeamformingProblem, BeamformingSettings,
                          BeamformingSolution, predicted_secrecy,
                          solve_beamforming)
from .trajectory import (TrajectoryProblem, TrajectoryResult,
                         TrajectorySettings, restore_feasible_start,
                         solve_trajectory)


@dataclass(frozen=True)
class AoProblem:
    """All per-CPI data the joint design needs, at the predicted E state."""

    geom: UpaGeometry
    beta0: float
    q_c_prev: np.ndarray
    e_pred: np.ndarray
    p_max: float
    gamma: float
    sigma2_c: float
    sigma2_e: float
    box: tuple[np.ndarray, np.ndarray]
    v_max: float
    dt: float
    d_min: float
    d_margin: float = 0.0
    prior_cov: np.ndarray | None = None
    jacobian_pred: np.ndarray | None = None
    scale_factors: np.ndarray | None = None
    snr_matrix: np.ndarray | None = None
    q_b: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class AoSettings:
    mu4: float = 1e-3
    max_iters: int = 10
    beamforming: BeamformingSettings = BeamformingSettings()
    trajectory: TrajectorySettings = TrajectorySettings()


@dataclass(frozen=True)
class AoResult:
    beamforming: BeamformingSolution
    q_c: np.ndarray
    secrecy_trace: list[float]
    iterations: int
    converged: bool
    trajectory: TrajectoryResult | None


def channel_at(geom: UpaGeometry, beta0: float, q: np.ndarray) -> LosChannel:
    """LoS channel at an arbitrary Cartesian point (z-axis safe)."""
    q = np.asarray(q, dtype=float)
    r = float(np.linalg.norm(q))
    if r <= 0:
        raise ValueError("point coincides with the GBS")
    alpha = steering_vectors_cart(geom, q[None, :])[0]
    return LosChannel(gain_reference=beta0, range_m=r,
                      coeffs=(beta0 / r) * alpha)


def _beamforming_problem(ao: AoProblem, h_c: LosChannel) -> BeamformingProblem:
    return BeamformingProblem(
        h_c=h_c, h_e_pred=channel_at(ao.geom, ao.beta0, ao.e_pred),
        p_max=ao.p_max, gamma=ao.gamma, sigma2_c=ao.sigma2_c,
        sigma2_e=ao.sigma2_e, prior_cov=ao.prior_cov,
        jacobian_pred=ao.jacobian_pred, scale_factors=ao.scale_factors,
        snr_matrix=ao.snr_matrix)


def alternating_optimize(ao: AoProblem,
                         settings: AoSettings = AoSettings(),
                         optimize_trajectory: bool = True) -> AoResult:
    """Algorithm: alternate the two subproblems until the predicted secrecy
    rate stalls (fractional increment < mu4) or the cap is hit.

    With ``optimize_trajectory`` False (the static C-UAV baseline) only the
    beamforming solve runs and the position stays at ``q_c_prev``.
    """
    q_c = np.array(ao.q_c_prev, dtype=float)
    if optimize_trajectory:
        # Feasibility outranks the monotone-secrecy safeguard.  When the
        # previous position has drifted inside the collision setpoint, start
        # AO from the restored point so that a rejected trajectory step still
        # leaves a waypoint that retreats from the predicted E-UAV.
        n = ao.geom.n_elements
        q_c, _ = restore_feasible_start(TrajectoryProblem(
            geom=ao.geom, prev_pos=ao.q_c_prev, e_pred=ao.e_pred,
            w_c_mat=np.zeros((n, n)), w_e_mat=np.zeros((n, n)),
            box=ao.box, v_max=ao.v_max, dt=ao.dt, d_min=ao.d_min,
            d_margin=ao.d_margin, sigma2_c=ao.sigma2_c, beta0=ao.beta0,
            q_b=ao.q_b))
    cur_sol: BeamformingSolution | None = None
    cur_traj: TrajectoryResult | None = None
    cur_secrecy = -np.inf
    warm = None
    trace: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, settings.max_iters + 1):
        bf_prob = _beamforming_problem(ao, channel_at(ao.geom, ao.beta0, q_c))
        sol = solve_beamforming(bf_prob, settings.beamforming, warm_start=warm)
        secrecy = predicted_secrecy(bf_prob, sol.w_c_mat, sol.w_e_mat)
        if cur_sol is None or secrecy >= cur_secrecy:
            cur_sol, cur_secrecy = sol, secrecy
            warm = (sol.w_c_mat, sol.w_e_mat)

        if optimize_trajectory:
            traj = solve_trajectory(TrajectoryProblem(
                geom=ao.geom, prev_pos=ao.q_c_prev, e_pred=ao.e_pred,
                w_c_mat=cur_sol.w_c_mat, w_e_mat=cur_sol.w_e_mat,
                box=ao.box, v_max=ao.v_max, dt=ao.dt, d_min=ao.d_min,
                d_margin=ao.d_margin,
                sigma2_c=ao.sigma2_c, beta0=ao.beta0, q_b=ao.q_b),
                settings.trajectory)
            cand_prob = _beamforming_problem(
                ao, channel_at(ao.geom, ao.beta0, traj.q))
            cand_secrecy = predicted_secrecy(
                cand_prob, cur_sol.w_c_mat, cur_sol.w_e_mat)
            if cand_secrecy >= cur_secrecy:
                cur_secrecy, cur_traj = cand_secrecy, traj
                q_c = traj.q
        trace.append(cur_secrecy)
        if (len(trace) >= 2
                and trace[-1] - trace[-2]
                < settings.mu4 * max(abs(trace[-1]), 1.0)):
            converged = True
            break
    return AoResult(beamforming=cur_sol, q_c=np.array(q_c, dtype=float),
                    secrecy_trace=trace, iterations=iterations,
                    converged=converged, trajectory=cur_traj)
