"""FastAPI service wrapping the simulator library.

Endpoints mirror the library entry points: /run executes the closed-loop
scenario, /beamform one joint design, /health reports liveness.  Error
mapping follows the CLI exit codes: 422 for configuration errors, 409 for
infeasible optimization, 500 for other numerical failures.
"""

from __future__ import annotations

import math

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from ..config import ConfigError
from ..optimize import InfeasibleProblemError, SolverFailure, \
    UnboundedProblemError
from ..scenario import CpiRecord, ScenarioError, run_scenario
from .schemas import (BeamformRequest, BeamformResponse, CpiRecordOut,
                      RunRequest, RunResponse)

app = FastAPI(title="nfisac", description="Near-field ISAC secure-UAV "
              "simulator service")


def _finite(x: float) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _record_out(rec: CpiRecord) -> CpiRecordOut:
    return CpiRecordOut(
        cpi=rec.cpi,
        truth=[*map(float, rec.truth.position),
               *map(float, rec.truth.velocity)],
        predicted=[*map(float, rec.predicted)],
        measured_u=[*map(float, rec.measured_u)],
        fused=[*map(float, rec.fused)],
        trace_c=rec.trace_c, secrecy_true=rec.secrecy_true,
        secrecy_pred=rec.secrecy_pred, rate_c=rec.rate_c, rate_e=rec.rate_e,
        q_c=[*map(float, rec.q_c)], power_c=rec.power_c, power_e=rec.power_e,
        nsee=_finite(rec.nsee), ao_iterations=rec.ao_iterations,
        wall_time=rec.wall_time)


def _error(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"kind": kind, "message": message})


@app.exception_handler(ConfigError)
async def _config_error(request, exc: ConfigError):
    return _error(422, "config-error", str(exc))


@app.exception_handler(InfeasibleProblemError)
async def _infeasible(request, exc: InfeasibleProblemError):
    return _error(409, "infeasible", str(exc))


@app.exception_handler(ScenarioError)
async def _scenario_error(request, exc: ScenarioError):
    if isinstance(exc.cause, InfeasibleProblemError):
        return _error(409, "infeasible", str(exc))
    return _error(500, "numerical-failure", str(exc))


@app.exception_handler(SolverFailure)
@app.exception_handler(UnboundedProblemError)
async def _numerical(request, exc: Exception):
    return _error(500, "numerical-failure", str(exc))


@app.get("/health")
async def health() -> dict:
    return {"status": "ok"}


@app.post("/run", response_model=RunResponse, response_model_exclude_none=True)
def run(request: RunRequest) -> RunResponse:
    config = request.build()
    result = run_scenario(config)
    return RunResponse(
        summary=result.summary,
        records=[_record_out(r) for r in result.records]
        if request.include_records else None)


@app.post("/beamform", response_model=BeamformResponse)
def beamform(request: BeamformRequest) -> BeamformResponse:
    from ..scenario import _design, initial_track
    from ..tracking import ekf_predict

    config = request.build()
    track = ekf_predict(initial_track(config), config.signal.cpi_duration_s,
                        config.tracking.process_cov(
                            config.signal.cpi_duration_s))
    res = _design(config, track.s_hat[:3],
                  np.asarray(config.c_uav.initial_position, dtype=float),
                  prior=track)
    return BeamformResponse(
        iterations=res.iterations, converged=res.converged,
        secrecy_trace=[*map(float, res.secrecy_trace)],
        secrecy_rate=float(res.secrecy_trace[-1]),
        q_c=[*map(float, res.q_c)],
        power_c=float(np.real(np.trace(res.beamforming.w_c_mat))),
        power_e=float(np.real(np.trace(res.beamforming.w_e_mat))))
