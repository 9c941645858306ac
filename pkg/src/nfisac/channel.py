"""Near-field line-of-sight channels and rate formulas."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SphericalCoord, UpaGeometry, steering_vector


@dataclass(frozen=True)
class LosChannel:
    """LoS channel coefficients: (beta0 / r) times the steering vector."""

    gain_reference: float
    range_m: float
    coeffs: np.ndarray


@dataclass(frozen=True)
class RatePair:
    rate_c: float
    rate_e: float

    @property
    def secrecy(self) -> float:
        return max(self.rate_c - self.rate_e, 0.0)


def los_channel(geom: UpaGeometry, target: SphericalCoord, beta0: float) -> LosChannel:
    if target.r <= 0:
        raise ValueError("target range must be positive")
    coeffs = (beta0 / target.r) * steering_vector(geom, target)
    return LosChannel(gain_reference=beta0, range_m=target.r, coeffs=coeffs)


def achievable_rate(h_c: LosChannel, w_c: np.ndarray, w_e: np.ndarray,
                    sigma2_c: float) -> float:
    """Data rate at the legitimate receiver, bits/s/Hz."""
    if sigma2_c <= 0:
        raise ValueError("noise power must be positive")
    sig = np.abs(np.vdot(h_c.coeffs, w_c))**2
    interf = np.abs(np.vdot(h_c.coeffs, w_e))**2
    return float(np.log2(1.0 + sig / (interf + sigma2_c)))


def leakage_rate(h_e: LosChannel, w_c: np.ndarray, w_e: np.ndarray,
                 sigma2_e: float) -> float:
    """Information rate leaked to the eavesdropper, bits/s/Hz."""
    return achievable_rate(h_e, w_c, w_e, sigma2_e)


def secrecy_rate(rate_c: float, rate_e: float) -> float:
    return max(rate_c - rate_e, 0.0)
