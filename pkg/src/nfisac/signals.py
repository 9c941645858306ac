"""Transmit-symbol synthesis, per-antenna Doppler profiles, and echo blocks.

Within one CPI the target position is frozen at the first symbol; only the
linear Doppler phase evolves across symbols.  Doppler is positive for a
receding target, matching the e^{-j 2 pi r(t)/lambda} phase convention with
r(t) = r_bar + v t.  The echo uses the outer product alpha alpha^T (plain
transpose): the round-trip phase to element pair (m, i) is the sum of the two
one-way phases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (SphericalCoord, UpaGeometry, exact_distances,
                       spherical_basis, sph_to_cart, steering_vector)


@dataclass(frozen=True)
class KinematicState:
    """Cartesian position and velocity of a UAV."""

    position: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True)
class SymbolBlock:
    """One CPI of unit-variance information (s) and artificial-noise (a) symbols."""

    s: np.ndarray
    a: np.ndarray
    symbol_duration: float

    @property
    def n_symbols(self) -> int:
        return self.s.size


@dataclass(frozen=True)
class DopplerProfile:
    """Per-antenna Doppler shifts (Hz) seen across the array."""

    f: np.ndarray


@dataclass(frozen=True)
class EchoBlock:
    """M x N received echo matrix plus the ground truth that generated it."""

    y: np.ndarray
    truth: KinematicState
    noise_power: float


def make_symbol_block(n_symbols: int, bandwidth: float,
                      rng: np.random.Generator) -> SymbolBlock:
    """Draw s(n), a(n) ~ CN(0, 1) for one CPI; T_s = 1/B."""
    scale = np.sqrt(0.5)
    s = scale * (rng.standard_normal(n_symbols) + 1j * rng.standard_normal(n_symbols))
    a = scale * (rng.standard_normal(n_symbols) + 1j * rng.standard_normal(n_symbols))
    return SymbolBlock(s=s, a=a, symbol_duration=1.0 / bandwidth)


def doppler_profile_cartesian(geom: UpaGeometry, q_e: np.ndarray,
                              v_e: np.ndarray) -> DopplerProfile:
    """Ground-truth Doppler: radial velocity toward each element over lambda."""
    pos = geom.element_positions()
    diff = np.asarray(q_e, dtype=float)[None, :] - pos
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist == 0.0):
        raise ValueError("target coincides with an array element")
    radial = diff @ np.asarray(v_e, dtype=float) / dist
    return DopplerProfile(f=radial / geom.carrier_wavelength)


def projection_cosines(geom: UpaGeometry, target: SphericalCoord) -> np.ndarray:
    """(M, 3) direction cosines of each element-to-target unit vector against
    the spherical basis (r_hat, theta_hat, phi_hat) at the target."""
    q = sph_to_cart(target)
    pos = geom.element_positions()
    diff = q[None, :] - pos
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist == 0.0):
        raise ValueError("target coincides with an array element")
    units = diff / dist[:, None]
    basis = np.stack(spherical_basis(target), axis=1)
    return units @ basis


def doppler_profile_spherical(geom: UpaGeometry, target: SphericalCoord,
                              v_sph: np.ndarray) -> DopplerProfile:
    """Doppler from spherical velocity components (v_r, v_theta, v_phi)."""
    cos = projection_cosines(geom, target)
    f = cos @ np.asarray(v_sph, dtype=float) / geom.carrier_wavelength
    return DopplerProfile(f=f)


def echo_amplitude(beta0: float, rcs: float) -> float:
    """Reflection factor beta = beta0 sqrt(rcs / 4 pi)."""
    return beta0 * np.sqrt(rcs / (4.0 * np.pi))


def _transmit_matrix(symbols: SymbolBlock, w_c: np.ndarray,
                     w_e: np.ndarray) -> np.ndarray:
    """x(n) = w_c s(n) + w_e a(n), stacked as M x N."""
    return np.outer(w_c, symbols.s) + np.outer(w_e, symbols.a)


def echo_model_matrix(geom: UpaGeometry, target: SphericalCoord,
                      doppler: DopplerProfile, symbols: SymbolBlock,
                      w_c: np.ndarray, w_e: np.ndarray) -> np.ndarray:
    """Noise-free unit-amplitude model X with X(:, n) = (A.D_n) x(n).

    Uses the rank-one factorization (A.D_n) = b_n b_n^T with
    b_n = alpha . d_n, so each column costs O(M).
    """
    alpha = steering_vector(geom, target)
    n_idx = np.arange(1, symbols.n_symbols + 1)
    phase = np.exp(-2j * np.pi * np.outer(doppler.f, n_idx) * symbols.symbol_duration)
    b = alpha[:, None] * phase
    x = _transmit_matrix(symbols, w_c, w_e)
    c = np.sum(b * x, axis=0)
    return b * c[None, :]


def simulate_echo(geom: UpaGeometry, truth: KinematicState, w_c: np.ndarray,
                  w_e: np.ndarray, symbols: SymbolBlock, rcs: float,
                  beta0: float, sigma2_b: float,
                  rng: np.random.Generator) -> EchoBlock:
    """One CPI of received echo from the ground-truth target state."""
    from .geometry import cart_to_sph

    target = cart_to_sph(truth.position)
    doppler = doppler_profile_cartesian(geom, truth.position, truth.velocity)
    x_model = echo_model_matrix(geom, target, doppler, symbols, w_c, w_e)
    amp = echo_amplitude(beta0, rcs) / target.r**2
    shape = x_model.shape
    noise = np.sqrt(sigma2_b / 2.0) * (rng.standard_normal(shape)
                                       + 1j * rng.standard_normal(shape))
    return EchoBlock(y=amp * x_model + noise, truth=truth, noise_power=sigma2_b)


def echo_snr(geom: UpaGeometry, target: SphericalCoord, w_e: np.ndarray,
             rcs: float, beta0: float, sigma2_b: float, n_symbols: int,
             transpose_inner: bool = False) -> float:
    """Post-integration echo SNR (linear).

    rcs * beta0^2 * M * N * |alpha^H w_e|^2 / (4 pi sigma_b^2 r^4).
    With ``transpose_inner`` the inner product is alpha^T w_e, which matches
    the gain the simulated echo actually sees.
    """
    alpha = steering_vector(geom, target)
    inner = alpha @ w_e if transpose_inner else np.vdot(alpha, w_e)
    m = geom.n_elements
    return float(rcs * beta0**2 * m * n_symbols * np.abs(inner)**2
                 / (4.0 * np.pi * sigma2_b * target.r**4))


def echo_snr_matrix(geom: UpaGeometry, target: SphericalCoord, rcs: float,
                    beta0: float, sigma2_b: float, n_symbols: int,
                    transpose_inner: bool = False) -> np.ndarray:
    """Hermitian PSD matrix S of the affine map W_e -> echo SNR.

    Re tr(S w w^H) equals echo_snr(..., w) for any beam w, which lets the
    SNR enter convex programs as an affine function of W_e.
    """
    alpha = steering_vector(geom, target)
    v = np.conj(alpha) if transpose_inner else alpha
    kappa = (rcs * beta0**2 * geom.n_elements * n_symbols
             / (4.0 * np.pi * sigma2_b * target.r**4))
    return kappa * np.outer(v, np.conj(v))
