"""Thin deterministic wrapper around the conic solver backend.

All convex subproblems in this package go through :func:`solve_conic`, which
pins the backend (Clarabel, single-threaded interior point with PSD and
exponential cones), checks the returned status, measures the worst primal
constraint violation, and maps infeasibility/unboundedness to distinct
exceptions.  An optional plain-text dump of the problem (objective plus every
constraint, one per line with shapes) supports cross-validation against
external tools.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np


class InfeasibleProblemError(RuntimeError):
    """The subproblem has no feasible point (certificate from the solver)."""


class UnboundedProblemError(RuntimeError):
    """The subproblem is unbounded below (certificate from the solver)."""


class SolverFailure(RuntimeError):
    """The backend stopped without an optimal status."""


@dataclass(frozen=True)
class ConicResult:
    value: float
    status: str
    primal_residual: float


#: Residual budget every accepted solution must meet.
RESIDUAL_TOL = 1e-6

#: Primary backend plus a deterministic fallback for degenerate instances
#: where the interior point stalls (e.g. an exactly rank-deficient optimum).
_SOLVER_CHAIN = (dict(solver=cp.CLARABEL, max_iter=200),
                 dict(solver=cp.SCS, eps=1e-8, max_iters=50000),
                 dict(solver=cp.SCS, eps=1e-9, max_iters=100000,
                      acceleration_lookback=0))


def dump_problem(problem: cp.Problem, path: str) -> None:
    """Write a plain-text rendering of the problem for external checking."""
    lines = [f"sense: {problem.objective.NAME}",
             f"objective: {problem.objective.expr}"]
    for i, con in enumerate(problem.constraints):
        lines.append(f"constraint[{i}] shape={con.shape}: {con}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _max_violation(problem: cp.Problem) -> float:
    worst = 0.0
    for con in problem.constraints:
        v = con.violation()
        worst = max(worst, float(np.max(v)) if np.ndim(v) else float(v))
    return worst


def solve_conic(problem: cp.Problem, dump_path: str | None = None,
                residual_tol: float = RESIDUAL_TOL) -> ConicResult:
    """Solve a cvxpy problem with the pinned backend and verify the result."""
    if dump_path is not None:
        dump_problem(problem, dump_path)
    last_exc = None
    best = None
    for opts in _SOLVER_CHAIN:
        try:
            # warm_start off: cached parametric problems must not make the
            # result depend on what was solved earlier in the process.
            problem.solve(warm_start=False, **opts)
        except cp.error.SolverError as exc:
            last_exc = exc
            continue
        status = problem.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise InfeasibleProblemError("conic subproblem infeasible")
        if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            raise UnboundedProblemError("conic subproblem unbounded")
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            continue
        residual = _max_violation(problem)
        if residual <= residual_tol:
            return ConicResult(value=float(problem.value), status=status,
                               primal_residual=residual)
        if best is None or residual < best[0]:
            best = (residual, status)
    if best is not None:
        raise SolverFailure(
            f"primal residual {best[0]:.3e} exceeds {residual_tol:.1e} "
            f"(best status {best[1]})")
    raise SolverFailure(f"all backends failed: {last_exc}")
