import os

import cvxpy as cp
import numpy as np
import pytest

from nfisac.channel import LosChannel
from nfisac.geometry import UpaGeometry, cart_to_sph, steering_vectors_cart
from nfisac.optimize import (AoProblem, AoSettings, BeamformingProblem,
                             BeamformingSettings, InfeasibleProblemError,
                             TrajectoryProblem, TrajectorySettings,
                             UnboundedProblemError, alternating_optimize,
                             rank_defect, rank_one_gap, restore_feasible_start,
                             solve_beamforming, solve_beamforming_inner,
                             solve_conic, solve_trajectory, trajectory_rate)
from nfisac.optimize.beamforming import (minimal_snr_for_gamma,
                                         mse_posterior_trace,
                                         predicted_secrecy)
from nfisac.signals import echo_snr, echo_snr_matrix
from nfisac.tracking import measurement_jacobian

GEOM = UpaGeometry(4, 4, 0.1, 0.2)
BETA0 = 10 ** (-30 / 20)
SIGMA2 = 1e-11            # -80 dBm in watts
SIGMA2_B = 1e-9           # boosted echo SNR for the constrained tests
SCALES = np.array([1.0, 1e-2, 1e-2, 1.0, 1.0, 1.0])
Q_C = np.array([10.0, 2.0, 30.0])
Q_E = np.array([7.8, 8.0, 28.5])


def channel_at(q):
    q = np.asarray(q, dtype=float)
    r = np.linalg.norm(q)
    alpha = steering_vectors_cart(GEOM, q[None, :])[0]
    return LosChannel(gain_reference=BETA0, range_m=r,
                      coeffs=(BETA0 / r) * alpha)


def make_problem(gamma=np.inf, p_max=1.0, prior=None):
    kwargs = dict(h_c=channel_at(Q_C), h_e_pred=channel_at(Q_E),
                  p_max=p_max, gamma=gamma, sigma2_c=SIGMA2, sigma2_e=SIGMA2)
    if np.isfinite(gamma):
        state = np.concatenate([Q_E, [0.0, 1.0, 0.0]])
        kwargs.update(
            prior_cov=prior if prior is not None
            else np.diag([0.5, 0.5, 0.5, 1.0, 1.0, 1.0]),
            jacobian_pred=measurement_jacobian(state),
            scale_factors=SCALES,
            snr_matrix=echo_snr_matrix(GEOM, cart_to_sph(Q_E), 0.03, BETA0,
                                       SIGMA2_B, 64, transpose_inner=True))
    return BeamformingProblem(**kwargs)


class TestConicSolver:
    def test_min_trace_with_pinned_entry(self):
        w = cp.Variable((3, 3), PSD=True)
        res = solve_conic(cp.Problem(cp.Minimize(cp.trace(w)),
                                     [w[0, 0] == 1]))
        assert res.value == pytest.approx(1.0, abs=1e-7)
        expected = np.zeros((3, 3))
        expected[0, 0] = 1.0
        np.testing.assert_allclose(w.value, expected, atol=1e-6)

    def test_max_lambda_min(self):
        a = np.diag([2.0, 5.0])
        t = cp.Variable()
        res = solve_conic(cp.Problem(cp.Maximize(t),
                                     [a - t * np.eye(2) >> 0]))
        assert res.value == pytest.approx(2.0, abs=1e-7)

    def test_grid_oracle_two_parameter_family(self):
        # min (x-1)^2 + (y-2)^2 s.t. x + y <= 2, x, y >= 0
        x = cp.Variable(2)
        res = solve_conic(cp.Problem(
            cp.Minimize(cp.sum_squares(x - np.array([1.0, 2.0]))),
            [cp.sum(x) <= 2, x >= 0]))
        grid = np.linspace(0, 2, 201)
        best = min((gx - 1)**2 + (gy - 2)**2
                   for gx in grid for gy in grid if gx + gy <= 2 + 1e-12)
        assert res.value == pytest.approx(best, abs=1e-4)

    def test_infeasible_certificate(self):
        x = cp.Variable()
        with pytest.raises(InfeasibleProblemError):
            solve_conic(cp.Problem(cp.Minimize(x), [x >= 1, x <= 0]))

    def test_unbounded_certificate(self):
        x = cp.Variable()
        with pytest.raises(UnboundedProblemError):
            solve_conic(cp.Problem(cp.Minimize(x), [x <= 0]))

    def test_dump_file(self, tmp_path):
        x = cp.Variable()
        path = os.path.join(tmp_path, "prob.txt")
        solve_conic(cp.Problem(cp.Minimize(cp.square(x)), [x >= 1]),
                    dump_path=path)
        text = open(path).read()
        assert "objective" in text and "constraint[0]" in text


class TestPenaltyProperties:
    def test_gap_nonnegative_random_psd(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            a = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
            w = a @ a.conj().T
            assert rank_one_gap(w) >= -1e-12

    def test_gap_zero_iff_rank_one(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        assert rank_one_gap(np.outer(v, np.conj(v))) <= 1e-10
        w = np.outer(v, np.conj(v)) + 0.1 * np.eye(5)
        assert rank_one_gap(w) > 0.1

    def test_taylor_cut_is_global_overestimator(self):
        # e^x >= e^{x0}(x - x0 + 1) for all x (tangent of a convex function)
        rng = np.random.default_rng(2)
        for _ in range(1000):
            x0 = rng.uniform(-30, 5)
            x = rng.uniform(-30, 5)
            assert np.exp(x) >= np.exp(x0) * (x - x0 + 1.0) - 1e-12


class TestMseConstraint:
    def test_trace_decreasing_in_snr(self):
        prob = make_problem(gamma=0.5)
        traces = [mse_posterior_trace(prob, s) for s in [0.0, 1.0, 5.0, 50.0]]
        assert all(b < a for a, b in zip(traces, traces[1:]))

    def test_zero_beam_limit(self):
        prob = make_problem(gamma=0.5)
        assert mse_posterior_trace(prob, 0.0) == pytest.approx(
            np.trace(prob.prior_cov))

    def test_minimal_snr_zero_when_prior_inside(self):
        prob = make_problem(gamma=0.5, prior=np.diag([0.01] * 6))
        assert minimal_snr_for_gamma(prob) == 0.0

    def test_minimal_snr_bisection(self):
        prob = make_problem(gamma=0.5)
        t = minimal_snr_for_gamma(prob)
        assert t > 0
        assert mse_posterior_trace(prob, t) == pytest.approx(0.5, rel=1e-6)
        assert mse_posterior_trace(prob, 0.99 * t) > 0.5

    def test_unreachable_gamma_raises(self):
        with pytest.raises(InfeasibleProblemError):
            make_problem(gamma=0.5, p_max=1e-9)
            minimal_snr_for_gamma(make_problem(gamma=0.5, p_max=1e-9))


class TestInnerSolve:
    def lin_point(self, prob, w_c0, w_e0):
        from nfisac.optimize.beamforming import _log_point
        eps_j, delta_j = _log_point(prob, w_c0, w_e0)
        return (eps_j, delta_j, w_c0, w_e0)

    def test_single_antenna_closed_form(self):
        # no leakage channel, no MSE constraint: all power to the data beam
        h_c = LosChannel(BETA0, 30.0, np.array([BETA0 / 30.0 + 0.0j]))
        h_e = LosChannel(BETA0, 30.0, np.array([0.0 + 0.0j]))
        prob = BeamformingProblem(h_c=h_c, h_e_pred=h_e, p_max=1.0,
                                  gamma=np.inf, sigma2_c=SIGMA2,
                                  sigma2_e=SIGMA2)
        w_c0 = np.array([[0.5 + 0j]])
        w_e0 = np.array([[0.5 + 0j]])
        it = None
        lin = self.lin_point(prob, w_c0, w_e0)
        for _ in range(10):
            it = solve_beamforming_inner(prob, lin, omega=0.0)
            lin = self.lin_point(prob, it.w_c_mat, it.w_e_mat)
        assert float(np.real(it.w_c_mat[0, 0])) == pytest.approx(1.0, rel=1e-4)
        assert float(np.real(it.w_e_mat[0, 0])) == pytest.approx(0.0, abs=1e-5)
        got = predicted_secrecy(prob, it.w_c_mat, it.w_e_mat)
        expected = np.log2(1 + abs(h_c.coeffs[0])**2 / SIGMA2)
        assert got == pytest.approx(expected, rel=1e-4)

    def test_orthogonal_channels_no_overlap(self):
        h_c = LosChannel(BETA0, 30.0, np.array([1e-3, 0.0], dtype=complex))
        h_e = LosChannel(BETA0, 30.0, np.array([0.0, 1e-3], dtype=complex))
        prob = BeamformingProblem(h_c=h_c, h_e_pred=h_e, p_max=1.0,
                                  gamma=np.inf, sigma2_c=SIGMA2,
                                  sigma2_e=SIGMA2)
        w0 = 0.25 * np.eye(2, dtype=complex)
        lin = self.lin_point(prob, w0, w0)
        it = None
        for _ in range(8):
            it = solve_beamforming_inner(prob, lin, omega=0.0)
            lin = self.lin_point(prob, it.w_c_mat, it.w_e_mat)
        he_mat = np.outer(h_e.coeffs, np.conj(h_e.coeffs))
        overlap = abs(np.trace(he_mat @ it.w_c_mat))
        assert overlap <= 1e-6 * np.trace(it.w_c_mat).real * 1e-6 + 1e-12

    def test_power_constraint_active(self):
        prob = make_problem(gamma=np.inf)
        from nfisac.optimize.beamforming import _initial_matrices
        w_c0, w_e0 = _initial_matrices(prob)
        it = solve_beamforming_inner(prob, self.lin_point(prob, w_c0, w_e0),
                                     omega=0.0)
        total = float(np.real(np.trace(it.w_c_mat) + np.trace(it.w_e_mat)))
        assert total == pytest.approx(prob.p_max, abs=1e-6)


class TestSolveBeamforming:
    def test_unconstrained_rank_one_and_power(self):
        sol = solve_beamforming(make_problem(gamma=np.inf))
        assert sol.converged
        assert max(sol.rank_defect) <= 1e-3
        assert sol.power <= 1.0 + 1e-8
        total = np.real(np.trace(sol.w_c_mat) + np.trace(sol.w_e_mat))
        assert total <= 1.0 + 1e-8
        assert sol.secrecy_pred > 0

    def test_mse_certified(self):
        prob = make_problem(gamma=0.5)
        sol = solve_beamforming(prob)
        assert sol.mse_trace <= 0.5 + 1e-6
        # independent recomputation from the extracted beam
        snr = echo_snr(GEOM, cart_to_sph(Q_E), sol.w_e, 0.03, BETA0,
                       SIGMA2_B, 64, transpose_inner=True)
        assert mse_posterior_trace(prob, snr) <= 0.5 + 1e-6
        assert sol.power <= 1.0 + 1e-8

    def test_reduction_matches_full_solve(self):
        prob = make_problem(gamma=np.inf)
        red = solve_beamforming(prob, BeamformingSettings(reduce=True))
        full = solve_beamforming(prob, BeamformingSettings(reduce=False))
        # both are SCA local solutions; they agree to a small fraction of
        # a bit, and the subspace never loses ground to the full solve
        assert red.secrecy_pred == pytest.approx(full.secrecy_pred, abs=0.05)
        assert red.secrecy_pred >= full.secrecy_pred - 5e-3

    def test_infeasible_gamma(self):
        with pytest.raises(InfeasibleProblemError):
            solve_beamforming(make_problem(gamma=0.5, p_max=1e-9))

    def test_extraction_matches_matrix_secrecy(self):
        prob = make_problem(gamma=0.5)
        sol = solve_beamforming(prob)
        assert sol.secrecy_pred == pytest.approx(sol.secrecy_pred_mat,
                                                 abs=2e-2)


def make_traj_problem(w_c_mat, w_e_mat, prev=Q_C, e_pred=None, d_min=7.0):
    return TrajectoryProblem(
        geom=GEOM, prev_pos=np.asarray(prev, dtype=float),
        e_pred=np.asarray(Q_E if e_pred is None else e_pred, dtype=float),
        w_c_mat=w_c_mat, w_e_mat=w_e_mat,
        box=(np.array([-30.0, -30.0, 25.0]), np.array([30.0, 30.0, 40.0])),
        v_max=5.0, dt=0.05, d_min=d_min, sigma2_c=SIGMA2, beta0=BETA0)


def matched_covariances(q_c):
    alpha = steering_vectors_cart(GEOM, np.asarray(q_c, dtype=float)[None])[0]
    w = alpha / np.linalg.norm(alpha)
    return 0.8 * np.outer(w, np.conj(w)), 0.2 * np.eye(GEOM.n_elements) / 16


class TestTrajectory:
    def test_moves_full_step_toward_gbs(self):
        w_c, w_e = matched_covariances(Q_C)
        prob = make_traj_problem(w_c, w_e, e_pred=[-25.0, -25.0, 39.0])
        res = solve_trajectory(prob)
        step = np.linalg.norm(res.q - prob.prev_pos)
        assert step == pytest.approx(0.25, abs=1e-6)
        # moved toward the GBS (origin)
        assert np.linalg.norm(res.q) < np.linalg.norm(prob.prev_pos)
        direction = (res.q - prob.prev_pos) / step
        toward = -prob.prev_pos / np.linalg.norm(prob.prev_pos)
        np.testing.assert_allclose(direction, toward, atol=1e-4)

    def test_stationary_at_box_floor_above_gbs(self):
        q0 = np.array([0.0, 0.0, 25.0])
        w_c, w_e = matched_covariances(q0)
        prob = make_traj_problem(w_c, w_e, prev=q0,
                                 e_pred=[-25.0, -25.0, 39.0])
        res = solve_trajectory(prob)
        np.testing.assert_allclose(res.q, q0, atol=1e-6)

    def test_beats_sampled_reachable_set(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            prev = np.array([rng.uniform(-20, 20), rng.uniform(-20, 20),
                             rng.uniform(26, 39)])
            e_pred = prev + rng.uniform(8, 15) * _unit_vec(rng)
            w_c, w_e = matched_covariances(prev)
            prob = make_traj_problem(w_c, w_e, prev=prev, e_pred=e_pred)
            res = solve_trajectory(prob)
            # dense sampling of the reachable ball, filtered by constraints
            samples = prev + 0.25 * rng.uniform(-1, 1, (1000, 3))
            ok = (np.linalg.norm(samples - prev, axis=1) <= 0.25)
            ok &= np.all(samples >= prob.box[0], axis=1)
            ok &= np.all(samples <= prob.box[1], axis=1)
            ok &= np.linalg.norm(samples - e_pred, axis=1) >= prob.d_min
            best = max((trajectory_rate(prob, s) for s in samples[ok]),
                       default=-np.inf)
            assert trajectory_rate(prob, res.q) >= best - 1e-4

    def test_collision_constraint_holds(self):
        w_c, w_e = matched_covariances(Q_C)
        e_near = Q_C + np.array([7.05, 0.0, 0.0])
        prob = make_traj_problem(w_c, w_e, e_pred=e_near)
        res = solve_trajectory(prob)
        assert np.linalg.norm(res.q - prob.e_pred) >= prob.d_min - 1e-6

    def test_restoration_projects_out(self):
        w_c, w_e = matched_covariances(Q_C)
        e_near = Q_C + np.array([6.9, 0.0, 0.0])
        prob = make_traj_problem(w_c, w_e, e_pred=e_near)
        q0, restored = restore_feasible_start(prob)
        assert restored
        assert np.linalg.norm(q0 - prob.e_pred) >= prob.d_min - 1e-9
        res = solve_trajectory(prob)
        assert res.restored
        assert np.linalg.norm(res.q - prob.e_pred) >= prob.d_min - 1e-6

    def test_restoration_impossible(self):
        w_c, w_e = matched_covariances(Q_C)
        e_near = Q_C + np.array([5.0, 0.0, 0.0])
        prob = make_traj_problem(w_c, w_e, e_pred=e_near)
        with pytest.raises(InfeasibleProblemError):
            restore_feasible_start(prob)


def _unit_vec(rng):
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


Q_C_FAR = np.array([12.0, 16.0, 30.0])   # > d_min away from Q_E


def make_ao_problem(p_max=1.0, gamma=0.5):
    state = np.concatenate([Q_E, [0.0, 1.0, 0.0]])
    return AoProblem(
        geom=GEOM, beta0=BETA0, q_c_prev=Q_C_FAR, e_pred=Q_E, p_max=p_max,
        gamma=gamma, sigma2_c=SIGMA2, sigma2_e=SIGMA2,
        box=(np.array([-30.0, -30.0, 25.0]), np.array([30.0, 30.0, 40.0])),
        v_max=5.0, dt=0.05, d_min=7.0,
        prior_cov=np.diag([0.5, 0.5, 0.5, 1.0, 1.0, 1.0]),
        jacobian_pred=measurement_jacobian(state), scale_factors=SCALES,
        snr_matrix=echo_snr_matrix(GEOM, cart_to_sph(Q_E), 0.03, BETA0,
                                   SIGMA2_B, 64, transpose_inner=True))


class TestAlternatingOptimize:
    def test_monotone_and_converges(self):
        res = alternating_optimize(make_ao_problem())
        diffs = np.diff(res.secrecy_trace)
        assert np.all(diffs >= -1e-8)
        assert res.converged
        assert res.iterations <= 10
        assert max(res.beamforming.rank_defect) <= 1e-3
        assert res.beamforming.power <= 1.0 + 1e-8
        assert res.beamforming.mse_trace <= 0.5 + 1e-6
        # joint solution respects the kinematic constraints
        assert np.linalg.norm(res.q_c - Q_C_FAR) <= 0.25 + 1e-6
        assert np.linalg.norm(res.q_c - Q_E) >= 7.0 - 1e-6

    def test_power_monotone(self):
        rates = []
        for p_dbm in (20.0, 25.0, 30.0):
            p = 10 ** (p_dbm / 10) / 1000.0
            # gamma loose enough to stay reachable at the lowest power
            res = alternating_optimize(make_ao_problem(p_max=p, gamma=1.5))
            rates.append(res.secrecy_trace[-1])
        assert rates[0] <= rates[1] <= rates[2]
        assert rates[2] > rates[0]

    def test_beamforming_only_baseline(self):
        res = alternating_optimize(make_ao_problem(),
                                   optimize_trajectory=False)
        np.testing.assert_allclose(res.q_c, Q_C_FAR)
        assert res.trajectory is None
        assert np.all(np.diff(res.secrecy_trace) >= -1e-8)
