"""SDR beamforming with penalty-driven rank-one recovery and the MSE LMI.

The per-CPI beamforming subproblem maximizes the predicted secrecy rate over
covariance matrices W_c (information) and W_e (artificial noise) subject to a
total power budget, PSD constraints, and a bound Gamma on the trace of the
EKF posterior covariance.  The log ratios are handled through the auxiliary
exponentials (tau, eps, delta, eps2): the concave sides stay exact scalar
exponential-cone constraints and the convex sides are replaced by first-order
Taylor cuts that are refreshed each SCA iteration.  Rank one is recovered by
a difference-of-convex penalty omega * (||W||_* - ||W||_2), linearized at the
current principal eigenvector and driven by an increasing omega schedule.

The optimal covariances are supported on span{h_c, h_e_pred, s_dir} (every
constraint and objective term sees W only through inner products with those
vectors, and projecting onto the span can only lower the trace), so the solve
runs in that <= 3-dimensional subspace and lifts the result back.  This is
exact, not an approximation, and is what keeps full scenario runs cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from ..channel import LosChannel
from ..tracking import posterior_covariance
from .solver import (ConicResult, InfeasibleProblemError, SolverFailure,
                     solve_conic)

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class BeamformingProblem:
    """One CPI's beamforming data, all at the predicted E-UAV state.

    ``snr_matrix`` is the Hermitian PSD matrix S of the affine map
    SNR = Re tr(S W_e); it already collects the constant
    rcs * beta0^2 * M * N / (4 pi sigma_b^2 r^4).  ``gamma`` may be inf,
    which drops the tracking-MSE constraint entirely.
    """

    h_c: LosChannel
    h_e_pred: LosChannel
    p_max: float
    gamma: float
    sigma2_c: float
    sigma2_e: float
    prior_cov: np.ndarray | None = None
    jacobian_pred: np.ndarray | None = None
    scale_factors: np.ndarray | None = None
    snr_matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if np.isfinite(self.gamma):
            for name in ("prior_cov", "jacobian_pred", "scale_factors",
                         "snr_matrix"):
                if getattr(self, name) is None:
                    raise ValueError(f"{name} required for a finite gamma")
            if np.linalg.eigvalsh(self.prior_cov).min() < -1e-10:
                raise ValueError("prior covariance must be PSD")

    @property
    def n_antennas(self) -> int:
        return self.h_c.coeffs.size


@dataclass(frozen=True)
class BeamformingSettings:
    omega0: float | None = None
    c: float = 5.0
    mu2: float = 1e-3
    mu3: float = 1e-3
    max_outer: int = 8
    max_inner: int = 30
    reduce: bool = True


@dataclass(frozen=True)
class InnerIterate:
    w_c_mat: np.ndarray
    w_e_mat: np.ndarray
    aux: tuple[float, float, float, float]
    slack: np.ndarray | None
    surrogate: float
    psi_lin: tuple[float, float]
    result: ConicResult


@dataclass(frozen=True)
class BeamformingSolution:
    w_c_mat: np.ndarray
    w_e_mat: np.ndarray
    w_c: np.ndarray
    w_e: np.ndarray
    aux: tuple[float, float, float, float]
    slack: np.ndarray | None
    penalty: float
    secrecy_pred: float
    secrecy_pred_mat: float
    rank_defect: tuple[float, float]
    iterations: int
    converged: bool
    mse_trace: float
    power: float


def rank_one_gap(w: np.ndarray) -> float:
    """Nuclear minus spectral norm; >= 0 always, = 0 iff rank one."""
    evals = np.linalg.eigvalsh(w)
    return float(np.sum(np.abs(evals)) - np.max(np.abs(evals)))


def rank_defect(w: np.ndarray) -> float:
    """sigma_2 / sigma_1 of a Hermitian PSD matrix, in [0, 1]."""
    sv = np.sort(np.abs(np.linalg.eigvalsh(w)))[::-1]
    return float(sv[1] / sv[0]) if sv[0] > 0 else 0.0


def _outer(h: np.ndarray) -> np.ndarray:
    return np.outer(h, np.conj(h))


def _tr(h_mat: np.ndarray, w) -> cp.Expression:
    return cp.real(cp.trace(h_mat @ w))


def mse_posterior_trace(problem: BeamformingProblem, snr: float) -> float:
    """tr(C_l) recomputed from the information form at the given echo SNR."""
    if snr <= 0.0:
        return float(np.trace(problem.prior_cov))
    diag = np.asarray(problem.scale_factors, dtype=float) / snr
    return float(np.trace(posterior_covariance(
        problem.prior_cov, problem.jacobian_pred, diag)))


def assemble_mse_lmi(problem: BeamformingProblem, w_e) -> list:
    """Schur-complement LMIs bounding the posterior-covariance diagonal.

    C_l^{-1} = C_prior^{-1} + SNR * (Sigma^T diag(1/c) Sigma) is affine in
    W_e through SNR = Re tr(S W_e); each slack u_m caps one diagonal entry of
    C_l via [[C_l^{-1}, e_m], [e_m^T, u_m]] >= 0, and sum u_m <= Gamma.
    Returns (constraints, u) with u the 6-vector of slack variables.
    """
    try:
        prior_inv = np.linalg.inv(problem.prior_cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular prior covariance") from exc
    jac = np.asarray(problem.jacobian_pred, dtype=float)
    k_mat = jac.T @ np.diag(1.0 / np.asarray(problem.scale_factors)) @ jac
    k_mat = (k_mat + k_mat.T) / 2.0
    # congruence-rescale each LMI block to O(1) entries: with D = diag(d),
    # [[D C^{-1} D, D e_m], [e_m^T D, u_m]] >= 0 has the identical Schur
    # complement u_m >= (C)_mm but far better conditioning
    snr_cap = problem.p_max * float(
        np.linalg.eigvalsh(problem.snr_matrix)[-1].real)
    ref = np.diag(prior_inv + 0.5 * snr_cap * k_mat)
    d = 1.0 / np.sqrt(np.clip(ref, 1e-30, None))
    dd = np.outer(d, d)
    prior_inv_s = dd * prior_inv
    k_s = dd * k_mat
    snr = cp.real(cp.trace(problem.snr_matrix @ w_e))
    cinv_s = prior_inv_s + snr * k_s
    u = cp.Variable(6, nonneg=True)
    cons = []
    for m in range(6):
        e_m = np.zeros((6, 1))
        e_m[m, 0] = d[m]
        cons.append(cp.bmat([[cinv_s, e_m],
                             [e_m.T, cp.reshape(u[m], (1, 1), order="C")]]) >> 0)
    cons.append(cp.sum(u) <= problem.gamma)
    return cons, u


def predicted_secrecy(problem: BeamformingProblem, w_c_mat: np.ndarray,
                      w_e_mat: np.ndarray) -> float:
    """R_hat^s in bits/s/Hz from covariance matrices (no rank-one needed)."""
    hc = _outer(problem.h_c.coeffs)
    he = _outer(problem.h_e_pred.coeffs)

    def tr(h, w):
        return float(np.real(np.trace(h @ w)))

    r_c = np.log2(1.0 + tr(hc, w_c_mat) / (tr(hc, w_e_mat) + problem.sigma2_c))
    r_e = np.log2(1.0 + tr(he, w_c_mat) / (tr(he, w_e_mat) + problem.sigma2_e))
    return max(r_c - r_e, 0.0)


def solve_beamforming_inner(problem: BeamformingProblem,
                            lin_point: tuple[float, float, np.ndarray, np.ndarray],
                            omega: float,
                            dump_path: str | None = None) -> InnerIterate:
    """One convex SDP of the inner SCA loop.

    ``lin_point`` is (eps_j, delta_j, W_c_j, W_e_j): the Taylor-cut expansion
    points and the matrices whose principal eigenvectors linearize the
    rank-one penalty.  The channels and noise powers are jointly rescaled by
    1/sigma2_c inside the solve (the objective is a difference of logs of
    ratios, invariant under that scaling), which keeps the exponential-cone
    arguments well conditioned.
    """
    eps_j, delta_j, w_c_j, w_e_j = lin_point
    m = problem.n_antennas
    scale = _chan_scale(problem)
    hc = _outer(problem.h_c.coeffs) * scale
    he = _outer(problem.h_e_pred.coeffs) * scale
    s2c = problem.sigma2_c * scale
    s2e = problem.sigma2_e * scale

    w_c = cp.Variable((m, m), hermitian=True)
    w_e = cp.Variable((m, m), hermitian=True)
    tau = cp.Variable()
    eps = cp.Variable()
    delta = cp.Variable()
    eps2 = cp.Variable()

    cons = [w_c >> 0, w_e >> 0,
            cp.real(cp.trace(w_c)) + cp.real(cp.trace(w_e)) <= problem.p_max,
            cp.exp(tau) <= _tr(hc, w_c) + _tr(hc, w_e) + s2c,
            _tr(hc, w_e) + s2c <= np.exp(eps_j) * (eps - eps_j + 1.0),
            _tr(he, w_c) + _tr(he, w_e) + s2e
            <= np.exp(delta_j) * (delta - delta_j + 1.0),
            cp.exp(eps2) <= _tr(he, w_e) + s2e,
            # the traces inside the eps/delta cuts never drop below the
            # noise floors, so these bounds are exact; without them a cut
            # anchored at a near-zero trace (e^{anchor} ~ 0) leaves the
            # variable numerically unbounded below
            eps >= np.log(s2c), delta >= np.log(s2e)]
    u = None
    if np.isfinite(problem.gamma):
        # tr(C_l) is strictly decreasing in the echo SNR, so the LMI set of
        # assemble_mse_lmi is exactly equivalent to the scalar bound
        # SNR >= snr_min with snr_min from bisection; the scalar form is far
        # better conditioned for the interior point
        snr_min = minimal_snr_for_gamma(problem)
        if snr_min > 0.0:
            cons.append(cp.real(cp.trace(problem.snr_matrix @ w_e)) / snr_min
                        >= 1.0)

    def penalty_lin(w, w_j):
        evals, evecs = np.linalg.eigh(w_j)
        xi = evecs[:, -1:]
        return cp.real(cp.trace(w)) - cp.real(cp.trace((xi @ xi.conj().T) @ w))

    objective = cp.Minimize(-(tau - eps - delta + eps2)
                            + omega * (penalty_lin(w_c, w_c_j)
                                       + penalty_lin(w_e, w_e_j)))
    # intermediate SCA iterates tolerate a looser residual than the final
    # certification, which is recomputed from the extracted beams
    result = solve_conic(cp.Problem(objective, cons), dump_path=dump_path,
                         residual_tol=1e-5)

    w_c_v = _hermitize(w_c.value)
    w_e_v = _hermitize(w_e.value)
    if u is None and np.isfinite(problem.gamma):
        snr_val = float(np.real(np.trace(problem.snr_matrix @ w_e_v)))
        if snr_val > 0.0:
            u = np.diag(posterior_covariance(
                problem.prior_cov, problem.jacobian_pred,
                np.asarray(problem.scale_factors, dtype=float) / snr_val))
        else:
            u = np.diag(problem.prior_cov)

    def psi_lin_value(w_v, w_j):
        evals, evecs = np.linalg.eigh(w_j)
        xi = evecs[:, -1]
        spectral_j = float(evals[-1])
        return (float(np.real(np.trace(w_v))) - spectral_j
                - float(np.real(np.vdot(xi, (w_v - w_j) @ xi))))

    return InnerIterate(
        w_c_mat=w_c_v, w_e_mat=w_e_v,
        aux=(float(tau.value), float(eps.value), float(delta.value),
             float(eps2.value)),
        slack=None if u is None else np.asarray(u, dtype=float),
        surrogate=float(tau.value - eps.value - delta.value + eps2.value),
        psi_lin=(psi_lin_value(w_c_v, w_c_j), psi_lin_value(w_e_v, w_e_j)),
        result=result)


def _hermitize(w: np.ndarray) -> np.ndarray:
    w = (w + w.conj().T) / 2.0
    # clip tiny negative eigenvalues left by the interior point
    evals, evecs = np.linalg.eigh(w)
    return (evecs * np.clip(evals, 0.0, None)) @ evecs.conj().T


def minimal_snr_for_gamma(problem: BeamformingProblem) -> float:
    """Smallest echo SNR with tr(C_l) <= gamma (the trace is decreasing in
    SNR); raises if even the all-power AN beam cannot reach it."""
    if not np.isfinite(problem.gamma):
        return 0.0
    if mse_posterior_trace(problem, 0.0) <= problem.gamma:
        return 0.0
    snr_cap = problem.p_max * float(
        np.linalg.eigvalsh(problem.snr_matrix)[-1])
    if mse_posterior_trace(problem, snr_cap) > problem.gamma + 1e-12:
        raise InfeasibleProblemError(
            "MSE constraint unreachable: even full power on the sensing beam "
            f"gives tr(C) = {mse_posterior_trace(problem, snr_cap):.4g} "
            f"> gamma = {problem.gamma:.4g}")
    lo, hi = 0.0, snr_cap
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mse_posterior_trace(problem, mid) <= problem.gamma:
            hi = mid
        else:
            lo = mid
    return hi


def _reduction_basis(problem: BeamformingProblem) -> np.ndarray:
    """Orthonormal columns spanning every vector the problem touches."""
    vecs = [problem.h_c.coeffs, problem.h_e_pred.coeffs]
    if problem.snr_matrix is not None:
        evals, evecs = np.linalg.eigh(problem.snr_matrix)
        keep = evals > 1e-12 * max(evals[-1], 1e-300)
        vecs.extend(evecs[:, keep].T)
    basis = []
    for v in vecs:
        for b in basis:
            v = v - np.vdot(b, v) * b
        nrm = np.linalg.norm(v)
        if nrm > 1e-12:
            basis.append(v / nrm)
    if not basis:
        raise ValueError("all channel vectors are zero")
    return np.stack(basis, axis=1)


def _reduce_problem(problem: BeamformingProblem,
                    q: np.ndarray) -> BeamformingProblem:
    def proj_channel(h: LosChannel) -> LosChannel:
        return LosChannel(gain_reference=h.gain_reference, range_m=h.range_m,
                          coeffs=q.conj().T @ h.coeffs)

    snr_red = None
    if problem.snr_matrix is not None:
        snr_red = q.conj().T @ problem.snr_matrix @ q
        snr_red = (snr_red + snr_red.conj().T) / 2.0
    return BeamformingProblem(
        h_c=proj_channel(problem.h_c), h_e_pred=proj_channel(problem.h_e_pred),
        p_max=problem.p_max, gamma=problem.gamma, sigma2_c=problem.sigma2_c,
        sigma2_e=problem.sigma2_e, prior_cov=problem.prior_cov,
        jacobian_pred=problem.jacobian_pred,
        scale_factors=problem.scale_factors, snr_matrix=snr_red)


def _initial_matrices(problem: BeamformingProblem) -> tuple[np.ndarray, np.ndarray]:
    """Feasible starting covariances: matched information beam plus an AN
    beam along the SNR-maximizing direction, with enough AN power to meet
    the MSE constraint."""
    m = problem.n_antennas
    snr_min = minimal_snr_for_gamma(problem)
    if problem.snr_matrix is not None:
        evals, evecs = np.linalg.eigh(problem.snr_matrix)
        u_e, lam = evecs[:, -1], float(evals[-1])
    else:
        he = problem.h_e_pred.coeffs
        nrm = np.linalg.norm(he)
        u_e = he / nrm if nrm > 0 else _unit(m)
        lam = 1.0
    p_e = 0.5 * problem.p_max
    if snr_min > 0.0 and lam > 0.0:
        p_e = max(p_e, min(problem.p_max, 1.02 * snr_min / lam))
    p_c = problem.p_max - p_e
    hc = problem.h_c.coeffs
    nrm_c = np.linalg.norm(hc)
    u_c = hc / nrm_c if nrm_c > 0 else _unit(m)
    return p_c * _outer(u_c), p_e * _outer(u_e)


def _unit(m: int) -> np.ndarray:
    v = np.zeros(m, dtype=complex)
    v[0] = 1.0
    return v


def _chan_scale(problem: BeamformingProblem) -> float:
    """Joint rescaling of channels and noise powers (the secrecy objective
    is invariant) that keeps every trace term O(1) inside the conic solve."""
    top = max(np.linalg.norm(problem.h_c.coeffs)**2,
              np.linalg.norm(problem.h_e_pred.coeffs)**2) * problem.p_max
    top = max(top, problem.sigma2_c, problem.sigma2_e)
    return 1.0 / top


def _log_point(problem: BeamformingProblem, w_c: np.ndarray,
               w_e: np.ndarray) -> tuple[float, float]:
    """Taylor-cut expansion points (eps_j, delta_j) exact at (w_c, w_e),
    in the rescaled units used by the inner solve."""
    scale = _chan_scale(problem)
    hc = _outer(problem.h_c.coeffs) * scale
    he = _outer(problem.h_e_pred.coeffs) * scale
    eps_j = float(np.log(np.real(np.trace(hc @ w_e))
                         + problem.sigma2_c * scale))
    delta_j = float(np.log(np.real(np.trace(he @ (w_c + w_e)))
                           + problem.sigma2_e * scale))
    # floor the anchors: any anchor keeps the tangent cut a valid global
    # under-estimator of exp, but an anchor at the noise floor gives the cut
    # a slope of exp(+16) and destroys the interior point's conditioning
    floor = np.log(1e-5)
    return max(eps_j, floor), max(delta_j, floor)


def _extract(w: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(w)
    return np.sqrt(max(float(evals[-1]), 0.0)) * evecs[:, -1]


def _repair_extraction(problem: BeamformingProblem, w_c: np.ndarray,
                       w_e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale the extracted beams so the ORIGINAL power and MSE constraints
    hold exactly despite the (<= mu3) rank defect dropped in extraction."""
    snr_min = minimal_snr_for_gamma(problem)
    if snr_min > 0.0:
        snr_now = float(np.real(np.vdot(w_e, problem.snr_matrix @ w_e)))
        if snr_now < snr_min:
            if snr_now <= 0.0:
                raise InfeasibleProblemError(
                    "extracted AN beam carries no echo SNR")
            w_e = w_e * np.sqrt(snr_min / snr_now * (1.0 + 1e-9))
    p_e = float(np.linalg.norm(w_e)**2)
    if p_e > problem.p_max:
        raise InfeasibleProblemError(
            "MSE repair pushed AN power above the budget")
    p_c_budget = problem.p_max - p_e
    p_c = float(np.linalg.norm(w_c)**2)
    if p_c > p_c_budget:
        w_c = w_c * np.sqrt(max(p_c_budget, 0.0) / p_c)
    return w_c, w_e


def solve_beamforming(problem: BeamformingProblem,
                      settings: BeamformingSettings = BeamformingSettings(),
                      warm_start: tuple[np.ndarray, np.ndarray] | None = None,
                      ) -> BeamformingSolution:
    """Nested penalty / SCA loop; see module docstring.

    ``warm_start`` optionally provides (W_c, W_e) full-size covariances from
    the previous AO iteration; they are projected into the subspace and used
    as the initial point.
    """
    if settings.reduce:
        q = _reduction_basis(problem)
        red = _reduce_problem(problem, q)
    else:
        q = np.eye(problem.n_antennas, dtype=complex)
        red = problem

    if warm_start is not None:
        w_c_mat = _hermitize(q.conj().T @ warm_start[0] @ q)
        w_e_mat = _hermitize(q.conj().T @ warm_start[1] @ q)
        snr_min = minimal_snr_for_gamma(red)
        if red.snr_matrix is not None:
            snr_ws = float(np.real(np.trace(red.snr_matrix @ w_e_mat)))
            if snr_ws < snr_min:
                w_c_mat, w_e_mat = _initial_matrices(red)
    else:
        w_c_mat, w_e_mat = _initial_matrices(red)

    eps_j, delta_j = _log_point(red, w_c_mat, w_e_mat)
    surrogate_prev = None
    omega = settings.omega0
    if omega is None:
        init_obj = predicted_secrecy(red, w_c_mat, w_e_mat) * LN2
        omega = 0.1 * abs(init_obj) if init_obj != 0.0 else 0.1

    iterate = None
    iterations = 0
    converged = False
    stalled = False
    for _ in range(settings.max_outer):
        surrogate_prev = None
        for _ in range(settings.max_inner):
            # borderline-degenerate instances occasionally stall every
            # backend at one exact penalty weight; a tiny nudge of omega
            # restores solvability without changing the penalty semantics
            step = None
            for attempt in range(3):
                try:
                    step = solve_beamforming_inner(
                        red, (eps_j, delta_j, w_c_mat, w_e_mat),
                        omega * (1.0 + 0.013 * attempt))
                    break
                except SolverFailure:
                    continue
            if step is None:
                # the current iterate is feasible; failing to improve it is
                # a stall, not an error
                stalled = True
                break
            iterate = step
            iterations += 1
            w_c_mat, w_e_mat = iterate.w_c_mat, iterate.w_e_mat
            # re-anchor the Taylor cuts at the logs of the actual traces so
            # the cuts stay tight and valid at the new iterate
            eps_j, delta_j = _log_point(red, w_c_mat, w_e_mat)
            if surrogate_prev is not None:
                denom = max(abs(surrogate_prev), 1e-12)
                if abs(iterate.surrogate - surrogate_prev) / denom < settings.mu2:
                    break
            surrogate_prev = iterate.surrogate
        gap = sum(rank_one_gap(w) / max(float(np.real(np.trace(w))), 1e-300)
                  for w in (w_c_mat, w_e_mat))
        if gap <= settings.mu3:
            converged = True
            break
        if stalled:
            break
        omega *= settings.c

    w_c_full = _hermitize(q @ w_c_mat @ q.conj().T)
    w_e_full = _hermitize(q @ w_e_mat @ q.conj().T)
    total = float(np.real(np.trace(w_c_full) + np.trace(w_e_full)))
    if total > problem.p_max:
        shrink = problem.p_max / total
        w_c_full *= shrink
        w_e_full *= shrink
        w_c_mat *= shrink
        w_e_mat *= shrink
        total = problem.p_max

    w_c_vec = q @ _extract(w_c_mat)
    w_e_vec = q @ _extract(w_e_mat)
    w_c_vec, w_e_vec = _repair_extraction(problem, w_c_vec, w_e_vec)

    if problem.snr_matrix is not None:
        snr_vec = float(np.real(np.vdot(w_e_vec, problem.snr_matrix @ w_e_vec)))
        mse_trace = mse_posterior_trace(problem, snr_vec)
    else:
        mse_trace = float("nan")

    from ..channel import achievable_rate, secrecy_rate
    secrecy_vec = secrecy_rate(
        achievable_rate(problem.h_c, w_c_vec, w_e_vec, problem.sigma2_c),
        achievable_rate(problem.h_e_pred, w_c_vec, w_e_vec, problem.sigma2_e))

    return BeamformingSolution(
        w_c_mat=w_c_full, w_e_mat=w_e_full, w_c=w_c_vec, w_e=w_e_vec,
        aux=iterate.aux if iterate else (0.0, 0.0, 0.0, 0.0),
        slack=iterate.slack if iterate else None,
        penalty=omega, secrecy_pred=secrecy_vec,
        secrecy_pred_mat=predicted_secrecy(problem, w_c_full, w_e_full),
        rank_defect=(rank_defect(w_c_mat), rank_defect(w_e_mat)),
        iterations=iterations, converged=converged,
        mse_trace=mse_trace,
        power=float(np.linalg.norm(w_c_vec)**2 + np.linalg.norm(w_e_vec)**2))
