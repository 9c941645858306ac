"""Matched-filter localization and ML 3D velocity estimation from one echo block.

Localization correlates the echo against candidate steering vectors and the
known AN sequence on a coarse grid, then refines around the coarse peak.
Velocity estimation maximizes the matched-energy objective

    g(v) = |tr(Y X^H(v))|^2 / ||X(v)||_F^2

by gradient ascent with Armijo backtracking, where X(v) is the noise-free echo
model at the frozen coarse location with the Doppler profile implied by v.

The analytic gradient applies the full product rule to X(:, n) = b_n (b_n^T x_n)
(both the b_n and the b_n^T x_n factors depend on v).  The one-sided
"factor two" shortcut differs from the true derivative whenever the echo is
noisy; we keep the exact form so the gradient matches finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SphericalCoord, UpaGeometry, steering_vector
from .signals import EchoBlock, SymbolBlock, projection_cosines


@dataclass(frozen=True)
class LocalizationGrid:
    """Search grid over (r, theta, phi): inclusive ranges plus step sizes."""

    r_range: tuple[float, float]
    theta_range: tuple[float, float]
    phi_range: tuple[float, float]
    r_step: float
    theta_step: float
    phi_step: float

    def __post_init__(self):
        if min(self.r_step, self.theta_step, self.phi_step) <= 0:
            raise ValueError("grid steps must be positive")
        if any(hi < lo for lo, hi in (self.r_range, self.theta_range, self.phi_range)):
            raise ValueError("grid ranges must be nonempty")

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        def axis(lo, hi, step):
            n = max(int(np.floor((hi - lo) / step + 1e-9)) + 1, 1)
            return lo + step * np.arange(n)
        return (axis(*self.r_range, self.r_step),
                axis(*self.theta_range, self.theta_step),
                axis(*self.phi_range, self.phi_step))


@dataclass(frozen=True)
class GradientSettings:
    max_iters: int = 120
    mu1: float = 1e-8
    armijo_c: float = 1e-4
    initial_step_mps: float = 2.0
    max_backtracks: int = 45
    grad_tol: float = 1e-14


@dataclass(frozen=True)
class VelocityEstimate:
    v_sph: np.ndarray
    beta_hat: complex
    objective: float
    iterations: int
    converged: bool


def _grid_objective(geom: UpaGeometry, c_vec: np.ndarray, r: np.ndarray,
                    theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """|alpha^H c| for every (r, theta, phi) lattice point; flattened C-order."""
    pos = geom.element_positions()
    xm, ym = pos[:, 0], pos[:, 1]
    k = 2.0 * np.pi / geom.carrier_wavelength
    rr, tt, pp = np.meshgrid(r, theta, phi, indexing="ij")
    cand = np.stack([rr.ravel(), tt.ravel(), pp.ravel()], axis=1)
    out = np.empty(cand.shape[0])
    chunk = 8192
    for lo in range(0, cand.shape[0], chunk):
        rs = cand[lo:lo + chunk, 0:1]
        st_cp = np.sin(cand[lo:lo + chunk, 1:2]) * np.cos(cand[lo:lo + chunk, 2:3])
        ct_cp = np.cos(cand[lo:lo + chunk, 1:2]) * np.cos(cand[lo:lo + chunk, 2:3])
        d2 = (rs**2 + xm[None, :]**2 + ym[None, :]**2
              - 2.0 * rs * xm[None, :] * st_cp - 2.0 * rs * ym[None, :] * ct_cp)
        # alpha^H c = sum_m exp(+j k dist_m) c_m
        out[lo:lo + chunk] = np.abs(np.exp(1j * k * np.sqrt(d2)) @ c_vec)
    return out


def matched_filter_localize(geom: UpaGeometry, echo: EchoBlock,
                            symbols: SymbolBlock,
                            grid: LocalizationGrid) -> SphericalCoord:
    """Grid point maximizing |(1/N) sum_n alpha^H y(n) a*(n)|.

    Ties break deterministically toward the lowest flat grid index.
    """
    r, theta, phi = grid.axes()
    c_vec = echo.y @ np.conj(symbols.a) / symbols.n_symbols
    obj = _grid_objective(geom, c_vec, r, theta, phi)
    best = int(np.argmax(obj))
    ir, rem = divmod(best, theta.size * phi.size)
    it, ip = divmod(rem, phi.size)
    return SphericalCoord(r=float(r[ir]), theta=float(theta[it]), phi=float(phi[ip]))


def localize_coarse_fine(geom: UpaGeometry, echo: EchoBlock, symbols: SymbolBlock,
                         coarse: LocalizationGrid,
                         fine_steps: tuple[float, float, float] = (0.1,
                                                                   np.deg2rad(0.2),
                                                                   np.deg2rad(0.2)),
                         ) -> SphericalCoord:
    """Coarse pass over the full grid, then one refinement pass around the peak."""
    peak = matched_filter_localize(geom, echo, symbols, coarse)
    fine = LocalizationGrid(
        r_range=(max(peak.r - coarse.r_step, fine_steps[0]), peak.r + coarse.r_step),
        theta_range=(peak.theta - coarse.theta_step, peak.theta + coarse.theta_step),
        phi_range=(max(peak.phi - coarse.phi_step, -np.pi / 2 + 1e-6),
                   min(peak.phi + coarse.phi_step, np.pi / 2 - 1e-6)),
        r_step=fine_steps[0], theta_step=fine_steps[1], phi_step=fine_steps[2])
    return matched_filter_localize(geom, echo, symbols, fine)


class VelocityProblem:
    """Precomputed quantities for evaluating g(v) and its gradient on one CPI."""

    def __init__(self, geom: UpaGeometry, echo: EchoBlock, symbols: SymbolBlock,
                 w_c: np.ndarray, w_e: np.ndarray, coarse_loc: SphericalCoord):
        self.geom = geom
        self.y = echo.y
        self.alpha = steering_vector(geom, coarse_loc)
        self.cos = projection_cosines(geom, coarse_loc)
        self.x_mat = np.outer(w_c, symbols.s) + np.outer(w_e, symbols.a)
        self.n_idx = np.arange(1, symbols.n_symbols + 1)
        self.ts = symbols.symbol_duration
        self.lam = geom.carrier_wavelength

    def _b_matrix(self, v_sph: np.ndarray) -> np.ndarray:
        f = self.cos @ np.asarray(v_sph, dtype=float) / self.lam
        return self.alpha[:, None] * np.exp(
            -2j * np.pi * np.outer(f, self.n_idx) * self.ts)

    def model(self, v_sph: np.ndarray) -> np.ndarray:
        b = self._b_matrix(v_sph)
        return b * np.sum(b * self.x_mat, axis=0)[None, :]

    def objective(self, v_sph: np.ndarray) -> tuple[float, complex]:
        """g(v) and the amplitude estimate beta_hat = tr(Y X^H)/||X||_F^2."""
        x = self.model(v_sph)
        fro2 = float(np.sum(np.abs(x)**2))
        if fro2 <= 0.0:
            raise ValueError("echo model has zero energy; check beamformers")
        t = complex(np.sum(self.y * np.conj(x)))
        return abs(t)**2 / fro2, t / fro2

    def gradient(self, v_sph: np.ndarray) -> np.ndarray:
        b = self._b_matrix(v_sph)
        c = np.sum(b * self.x_mat, axis=0)
        x = b * c[None, :]
        fro2 = float(np.sum(np.abs(x)**2))
        if fro2 <= 0.0:
            raise ValueError("echo model has zero energy; check beamformers")
        t = complex(np.sum(self.y * np.conj(x)))
        g = abs(t)**2 / fro2
        # P = dg/dX^T per the quotient rule; gradient_i = 2 Re tr(P dX/dv_i)
        p_t = (t * np.conj(self.y) - g * np.conj(x)) / fro2  # elementwise (M x N)
        base = (-2j * np.pi * self.ts / self.lam)
        grad = np.empty(3)
        for i in range(3):
            db = b * (base * self.cos[:, i])[:, None] * self.n_idx[None, :]
            dc = np.sum(db * self.x_mat, axis=0)
            dx = db * c[None, :] + b * dc[None, :]
            grad[i] = 2.0 * float(np.real(np.sum(p_t * dx)))
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite velocity gradient")
        return grad


def velocity_objective(geom: UpaGeometry, echo: EchoBlock, symbols: SymbolBlock,
                       w_c: np.ndarray, w_e: np.ndarray,
                       coarse_loc: SphericalCoord,
                       v_sph: np.ndarray) -> tuple[float, complex]:
    return VelocityProblem(geom, echo, symbols, w_c, w_e, coarse_loc).objective(v_sph)


def velocity_gradient(geom: UpaGeometry, echo: EchoBlock, symbols: SymbolBlock,
                      w_c: np.ndarray, w_e: np.ndarray,
                      coarse_loc: SphericalCoord, v_sph: np.ndarray) -> np.ndarray:
    return VelocityProblem(geom, echo, symbols, w_c, w_e, coarse_loc).gradient(v_sph)


def estimate_velocity(geom: UpaGeometry, echo: EchoBlock, symbols: SymbolBlock,
                      w_c: np.ndarray, w_e: np.ndarray,
                      coarse_loc: SphericalCoord, init: np.ndarray,
                      settings: GradientSettings = GradientSettings(),
                      ) -> VelocityEstimate:
    """Ascend g(v) from ``init`` with backtracking line search.

    Stops when the fractional increment of g drops below mu1 (the objective is
    the only scalar with a well-defined fractional increment here) or at the
    iteration cap.  Accepted steps never decrease g.
    """
    prob = VelocityProblem(geom, echo, symbols, w_c, w_e, coarse_loc)
    v = np.array(init, dtype=float)
    g, beta = prob.objective(v)
    if not np.isfinite(g):
        raise FloatingPointError("non-finite objective at the initial point")
    step = None
    iterations = 0
    converged = False
    for iterations in range(1, settings.max_iters + 1):
        grad = prob.gradient(v)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= settings.grad_tol * max(g, 1.0):
            converged = True
            break
        if step is None:
            step = settings.initial_step_mps / gnorm
        else:
            step = min(step * 2.0, 10.0 * settings.initial_step_mps / gnorm)
        accepted = False
        eta = step
        for _ in range(settings.max_backtracks):
            v_new = v + eta * grad
            g_new, beta_new = prob.objective(v_new)
            if g_new >= g + settings.armijo_c * eta * gnorm**2:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            converged = True  # no ascent direction at line-search resolution
            break
        step = eta
        frac = (g_new - g) / max(g, np.finfo(float).tiny)
        v, g, beta = v_new, g_new, beta_new
        if frac < settings.mu1:
            converged = True
            break
    return VelocityEstimate(v_sph=v, beta_hat=beta, objective=g,
                            iterations=iterations, converged=converged)
