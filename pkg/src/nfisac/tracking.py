"""EKF tracking of the eavesdropping UAV in Cartesian state space.

State s = [x, y, z, vx, vy, vz]; measurements live in spherical coordinates
u = [r, theta, phi, v_r, v_theta, v_phi].  The velocity entries are the
projections of the Cartesian velocity onto the orthonormal spherical basis at
the target (tangential speeds in m/s, not angular rates):

    v_r     = (v . q) / r
    v_theta = (vx y - vy x) / sqrt(x^2 + y^2)
    v_phi   = vz rho / r  -  (vx x + vy y) z / (rho r),   rho = sqrt(x^2 + y^2)

The second v_phi term carries a minus sign: phi_hat = (-St Sp, -Ct Sp, Cp),
so horizontal motion away from the zenith lowers the elevation rate.  This is
also the convention the Doppler-based velocity estimator measures, which keeps
the measurement model and the sensing front end consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ZenithError(ValueError):
    """Measurement model undefined on the z-axis."""


@dataclass(frozen=True)
class TrackState:
    """State estimate and error covariance of one track."""

    s_hat: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        if self.s_hat.shape != (6,) or self.cov.shape != (6, 6):
            raise ValueError("state must be a 6-vector with 6x6 covariance")


@dataclass(frozen=True)
class NoiseModel:
    """Measurement scale factors (variance = c_i / SNR) and process noise."""

    scale_factors: np.ndarray
    process_cov: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.scale_factors) <= 0):
            raise ValueError("scale factors must be positive")


#: Sentinel covariance for a zero-information measurement (SNR = 0).
INFINITE_COV = None


def measurement_function(s: np.ndarray) -> np.ndarray:
    """Noiseless spherical measurement u = chi(s)."""
    x, y, z, vx, vy, vz = np.asarray(s, dtype=float)
    rho2 = x * x + y * y
    if rho2 == 0.0:
        raise ZenithError("azimuth undefined for x = y = 0")
    rho = np.sqrt(rho2)
    r = np.sqrt(rho2 + z * z)
    return np.array([
        r,
        np.arcsin(np.clip(x / rho, -1.0, 1.0)),
        np.arcsin(np.clip(z / r, -1.0, 1.0)),
        (vx * x + vy * y + vz * z) / r,
        (vx * y - vy * x) / rho,
        vz * rho / r - (vx * x + vy * y) * z / (rho * r),
    ])


def measurement_jacobian(s: np.ndarray) -> np.ndarray:
    """Analytic 6x6 Jacobian of the measurement function at s."""
    x, y, z, vx, vy, vz = np.asarray(s, dtype=float)
    rho2 = x * x + y * y
    if rho2 == 0.0:
        raise ZenithError("azimuth undefined for x = y = 0")
    rho = np.sqrt(rho2)
    r2 = rho2 + z * z
    r = np.sqrt(r2)
    r3 = r * r2
    q = np.array([x, y, z])
    v = np.array([vx, vy, vz])
    jac = np.zeros((6, 6))
    # r
    jac[0, :3] = q / r
    # theta = arcsin(x / rho); cos(theta) = |y| / rho on the arcsine branch
    sgn_y = 1.0 if y >= 0 else -1.0
    jac[1, 0] = abs(y) / rho2
    jac[1, 1] = -x * sgn_y / rho2
    # phi = arcsin(z / r)
    jac[2, 0] = -z * x / (rho * r2)
    jac[2, 1] = -z * y / (rho * r2)
    jac[2, 2] = rho / r2
    # v_r = (v . q) / r
    vq = float(v @ q)
    jac[3, :3] = v / r - vq * q / r3
    jac[3, 3:] = q / r
    # v_theta = (vx y - vy x) / rho
    vth = vx * y - vy * x
    jac[4, 0] = -vy / rho - vth * x / (rho * rho2)
    jac[4, 1] = vx / rho - vth * y / (rho * rho2)
    jac[4, 3] = y / rho
    jac[4, 4] = -x / rho
    # v_phi = vz rho / r - w z / (rho r), w = vx x + vy y
    w = vx * x + vy * y
    jac[5, 0] = (vz * x * z * z / (rho * r3)
                 - z * (vx / (rho * r) - w * x * (r2 + rho2) / (rho * rho2 * r3)))
    jac[5, 1] = (vz * y * z * z / (rho * r3)
                 - z * (vy / (rho * r) - w * y * (r2 + rho2) / (rho * rho2 * r3)))
    jac[5, 2] = -rho * (vz * z + w) / r3
    jac[5, 3] = -x * z / (rho * r)
    jac[5, 4] = -y * z / (rho * r)
    jac[5, 5] = rho / r
    return jac


def measurement_cov(snr: float, noise: NoiseModel):
    """Diagonal measurement covariance c_i / SNR; sentinel None when SNR = 0."""
    if snr < 0:
        raise ValueError("SNR must be nonnegative")
    if snr == 0.0:
        return INFINITE_COV
    return np.diag(np.asarray(noise.scale_factors, dtype=float) / snr)


def transition_matrix(dt: float) -> np.ndarray:
    f = np.eye(6)
    f[:3, 3:] = dt * np.eye(3)
    return f


def ekf_predict(prev: TrackState, dt: float, process_cov: np.ndarray) -> TrackState:
    """Constant-velocity prediction: s -> F s, C -> F C F^T + Q."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = transition_matrix(dt)
    cov = f @ prev.cov @ f.T + process_cov
    return TrackState(s_hat=f @ prev.s_hat, cov=_symmetrize(cov))


def _symmetrize(c: np.ndarray) -> np.ndarray:
    return (c + c.T) / 2.0


def _wrap_angle(a: float) -> float:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def ekf_update(pred: TrackState, u: np.ndarray, meas_cov) -> TrackState:
    """Fuse a spherical measurement into the predicted state.

    Covariance uses the information form (C^-1 + Sigma^T P^-1 Sigma)^-1, which
    coincides with the standard Kalman form for consistent gain/Jacobian.
    With the infinite-covariance sentinel the prediction is returned unchanged.
    """
    if meas_cov is INFINITE_COV:
        return pred
    meas_cov = np.asarray(meas_cov, dtype=float)
    jac = measurement_jacobian(pred.s_hat)
    innov_cov = jac @ pred.cov @ jac.T + meas_cov
    try:
        gain = np.linalg.solve(innov_cov.T, (pred.cov @ jac.T).T).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"singular innovation covariance (cond issue): diag="
            f"{np.diag(innov_cov)}") from exc
    innovation = np.asarray(u, dtype=float) - measurement_function(pred.s_hat)
    innovation[1] = _wrap_angle(innovation[1])
    innovation[2] = _wrap_angle(innovation[2])
    s_new = pred.s_hat + gain @ innovation
    p_inv = np.diag(1.0 / np.diag(meas_cov))
    info = np.linalg.inv(pred.cov) + jac.T @ p_inv @ jac
    cov_new = _symmetrize(np.linalg.inv(info))
    return TrackState(s_hat=s_new, cov=cov_new)


def posterior_covariance(prior_cov: np.ndarray, jac: np.ndarray,
                         meas_cov_diag: np.ndarray) -> np.ndarray:
    """Information-form posterior covariance for given prior and measurement.

    Used both by the filter and to certify the tracking-MSE constraint after
    the beamforming design (the constraint bounds tr of this matrix).
    """
    p_inv = np.diag(1.0 / np.asarray(meas_cov_diag, dtype=float))
    info = np.linalg.inv(prior_cov) + jac.T @ p_inv @ jac
    return _symmetrize(np.linalg.inv(info))
