import numpy as np
import pytest

from nfisac.geometry import cart_to_sph, spherical_basis
from nfisac.tracking import (INFINITE_COV, NoiseModel, TrackState, ZenithError,
                             ekf_predict, ekf_update, measurement_cov,
                             measurement_function, measurement_jacobian,
                             posterior_covariance, transition_matrix)

SCALES = np.array([1.0, 1e-2, 1e-2, 1.0, 1.0, 1.0])


def random_state(rng):
    q = rng.standard_normal(3)
    q[1] = abs(q[1]) + 0.3
    q[2] = abs(q[2]) + 0.3
    q *= rng.uniform(20, 45) / np.linalg.norm(q)
    v = rng.uniform(-5, 5, 3)
    return np.concatenate([q, v])


class TestMeasurementFunction:
    def test_hand_values(self):
        u = measurement_function(np.array([3.0, 4.0, 12.0, 0.0, 0.0, 0.0]))
        assert u[0] == pytest.approx(13.0)
        assert u[1] == pytest.approx(np.arcsin(3 / 5))
        assert u[2] == pytest.approx(np.arcsin(12 / 13))
        np.testing.assert_allclose(u[3:], 0.0, atol=1e-15)

    def test_radial_motion(self):
        q = np.array([3.0, 4.0, 12.0])
        s = np.concatenate([q, 2.0 * q / 13.0])
        u = measurement_function(s)
        assert u[3] == pytest.approx(2.0)
        assert u[4] == pytest.approx(0.0, abs=1e-14)
        assert u[5] == pytest.approx(0.0, abs=1e-14)

    def test_velocity_rows_are_basis_projections(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            s = random_state(rng)
            basis = np.stack(spherical_basis(cart_to_sph(s[:3])), axis=0)
            np.testing.assert_allclose(measurement_function(s)[3:],
                                       basis @ s[3:], rtol=1e-10, atol=1e-12)

    def test_zenith_raises(self):
        with pytest.raises(ZenithError):
            measurement_function(np.array([0.0, 0.0, 30.0, 1.0, 0.0, 0.0]))


class TestMeasurementJacobian:
    def finite_difference(self, s, h=1e-7):
        jac = np.zeros((6, 6))
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            jac[:, j] = (measurement_function(s + e)
                         - measurement_function(s - e)) / (2 * h)
        return jac

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            s = random_state(rng)
            jac = measurement_jacobian(s)
            fd = self.finite_difference(s)
            np.testing.assert_allclose(jac, fd, rtol=2e-5, atol=1e-7)

    def test_negative_y_branch(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            s = random_state(rng)
            s[1] = -s[1]
            np.testing.assert_allclose(measurement_jacobian(s),
                                       self.finite_difference(s),
                                       rtol=2e-5, atol=1e-7)

    def test_velocity_block_structure(self):
        # the velocity measurements are linear in v: du[3:]/dv is the basis
        rng = np.random.default_rng(14)
        s = random_state(rng)
        jac = measurement_jacobian(s)
        basis = np.stack(spherical_basis(cart_to_sph(s[:3])), axis=0)
        np.testing.assert_allclose(jac[3:, 3:], basis, rtol=1e-12)
        np.testing.assert_allclose(jac[:3, 3:], 0.0, atol=1e-15)


class TestMeasurementCov:
    def test_scaling(self):
        noise = NoiseModel(scale_factors=SCALES, process_cov=np.eye(6))
        cov = measurement_cov(4.0, noise)
        np.testing.assert_allclose(np.diag(cov), SCALES / 4.0)
        assert np.count_nonzero(cov - np.diag(np.diag(cov))) == 0

    def test_zero_snr_sentinel(self):
        noise = NoiseModel(scale_factors=SCALES, process_cov=np.eye(6))
        assert measurement_cov(0.0, noise) is INFINITE_COV

    def test_negative_snr_raises(self):
        noise = NoiseModel(scale_factors=SCALES, process_cov=np.eye(6))
        with pytest.raises(ValueError):
            measurement_cov(-1.0, noise)

    def test_nonpositive_scales_raise(self):
        with pytest.raises(ValueError):
            NoiseModel(scale_factors=np.zeros(6), process_cov=np.eye(6))


class TestPredict:
    def test_constant_velocity_propagation(self):
        s = np.array([1.0, 2.0, 3.0, 0.5, -0.5, 1.0])
        state = TrackState(s_hat=s, cov=np.eye(6))
        pred = ekf_predict(state, 2.0, np.zeros((6, 6)))
        np.testing.assert_allclose(pred.s_hat[:3], s[:3] + 2.0 * s[3:])
        np.testing.assert_allclose(pred.s_hat[3:], s[3:])

    def test_transition_matrix(self):
        f = transition_matrix(0.05)
        np.testing.assert_allclose(f[:3, 3:], 0.05 * np.eye(3))
        np.testing.assert_allclose(f[:3, :3], np.eye(3))

    def test_covariance_grows(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 6))
        cov = a @ a.T + np.eye(6)
        state = TrackState(s_hat=random_state(rng), cov=cov)
        pred = ekf_predict(state, 0.05, 1e-3 * np.eye(6))
        assert np.trace(pred.cov) > np.trace(cov @ np.zeros((6, 6)))
        np.testing.assert_allclose(pred.cov, pred.cov.T)
        # with Q > 0 the predicted covariance dominates F C F^T
        f = transition_matrix(0.05)
        evals = np.linalg.eigvalsh(pred.cov - f @ cov @ f.T)
        assert evals.min() >= -1e-12

    def test_bad_dt_raises(self):
        state = TrackState(s_hat=np.zeros(6) + 1.0, cov=np.eye(6))
        with pytest.raises(ValueError):
            ekf_predict(state, 0.0, np.eye(6))


class TestUpdate:
    def make_pred(self, seed=21):
        rng = np.random.default_rng(seed)
        s = random_state(rng)
        a = 0.3 * rng.standard_normal((6, 6))
        cov = a @ a.T + 0.5 * np.eye(6)
        return TrackState(s_hat=s, cov=cov), rng

    def test_sentinel_passthrough(self):
        pred, _ = self.make_pred()
        out = ekf_update(pred, np.zeros(6), INFINITE_COV)
        assert out is pred

    def test_information_form_matches_standard_form(self):
        pred, _ = self.make_pred()
        meas_cov = np.diag(SCALES / 10.0)
        u = measurement_function(pred.s_hat) + 0.01
        out = ekf_update(pred, u, meas_cov)
        jac = measurement_jacobian(pred.s_hat)
        innov_cov = jac @ pred.cov @ jac.T + meas_cov
        gain = pred.cov @ jac.T @ np.linalg.inv(innov_cov)
        standard = (np.eye(6) - gain @ jac) @ pred.cov
        np.testing.assert_allclose(out.cov, standard, rtol=1e-8, atol=1e-12)

    def test_update_shrinks_covariance(self):
        pred, _ = self.make_pred(22)
        meas_cov = np.diag(SCALES / 5.0)
        u = measurement_function(pred.s_hat)
        out = ekf_update(pred, u, meas_cov)
        evals = np.linalg.eigvalsh(pred.cov - out.cov)
        assert evals.min() >= -1e-10
        assert np.trace(out.cov) < np.trace(pred.cov)

    def test_exact_measurement_zero_innovation(self):
        pred, _ = self.make_pred(23)
        u = measurement_function(pred.s_hat)
        out = ekf_update(pred, u, np.diag(SCALES))
        np.testing.assert_allclose(out.s_hat, pred.s_hat, atol=1e-10)

    def test_tiny_noise_pins_estimate(self):
        pred, rng = self.make_pred(24)
        s_true = pred.s_hat + 0.2 * rng.standard_normal(6)
        u = measurement_function(s_true)
        out = ekf_update(pred, u, np.diag(SCALES * 1e-10))
        # near-exact measurement of a nearby state pulls the linearized
        # estimate most of the way there
        assert np.linalg.norm(out.s_hat - s_true) < \
            0.1 * np.linalg.norm(pred.s_hat - s_true)

    def test_posterior_covariance_matches_update(self):
        pred, _ = self.make_pred(25)
        diag = SCALES / 3.0
        u = measurement_function(pred.s_hat)
        out = ekf_update(pred, u, np.diag(diag))
        jac = measurement_jacobian(pred.s_hat)
        np.testing.assert_allclose(
            posterior_covariance(pred.cov, jac, diag), out.cov, rtol=1e-10)


class TestFilterConvergence:
    def test_tracks_constant_velocity_target(self):
        dt = 0.05
        s_true = np.array([10.0, 2.0, 30.0, 0.5, 1.0, -0.3])
        s0 = s_true + np.array([1.0, -1.0, 0.8, 0.5, -0.5, 0.5])
        state = TrackState(s_hat=s0, cov=np.diag([1, 1, 1, 4, 4, 4.0]))
        noise = NoiseModel(scale_factors=SCALES,
                           process_cov=1e-6 * np.eye(6))
        meas_cov = measurement_cov(1e4, noise)
        f = transition_matrix(dt)
        for _ in range(20):
            s_true = f @ s_true
            state = ekf_predict(state, dt, noise.process_cov)
            state = ekf_update(state, measurement_function(s_true), meas_cov)
        assert np.linalg.norm(state.s_hat[:3] - s_true[:3]) < 0.02
        assert np.linalg.norm(state.s_hat[3:] - s_true[3:]) < 0.02
        np.testing.assert_allclose(state.cov, state.cov.T)
        assert np.linalg.eigvalsh(state.cov).min() > 0

    def test_covariance_stays_psd_with_noisy_measurements(self):
        rng = np.random.default_rng(31)
        dt = 0.05
        s_true = np.array([12.0, 16.0, 30.0, -1.0, 0.5, 0.2])
        state = TrackState(s_hat=s_true + 0.5, cov=np.diag([1, 1, 1, 4, 4, 4.0]))
        noise = NoiseModel(scale_factors=SCALES, process_cov=1e-5 * np.eye(6))
        f = transition_matrix(dt)
        for _ in range(50):
            s_true = f @ s_true
            state = ekf_predict(state, dt, noise.process_cov)
            snr = rng.uniform(50, 5000)
            cov = measurement_cov(snr, noise)
            u = measurement_function(s_true) + \
                rng.standard_normal(6) * np.sqrt(np.diag(cov))
            state = ekf_update(state, u, cov)
            assert np.linalg.eigvalsh(state.cov).min() > 0
