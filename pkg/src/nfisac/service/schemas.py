"""Request/response schemas for the HTTP service.

Requests carry the same layered configuration the CLI accepts (profile,
config mapping, dotted overrides, seed); responses are plain JSON-safe
summaries of library results.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..config import ConfigError, ScenarioConfig, build_config


class ConfigRequest(BaseModel):
    """Layered scenario configuration: profile, then data, then overrides."""

    profile: str | None = None
    config: dict = Field(default_factory=dict)
    overrides: list[str] = Field(default_factory=list)
    seed: int | None = None

    def build(self) -> ScenarioConfig:
        return build_config(self.config, profile=self.profile,
                            overrides=self.overrides, seed=self.seed)


class RunRequest(ConfigRequest):
    include_records: bool = False


class CpiRecordOut(BaseModel):
    cpi: int
    truth: list[float]
    predicted: list[float]
    measured_u: list[float]
    fused: list[float]
    trace_c: float
    secrecy_true: float
    secrecy_pred: float
    rate_c: float
    rate_e: float
    q_c: list[float]
    power_c: float
    power_e: float
    # None when the scheme defines no estimation error (perfect knowledge).
    nsee: float | None
    ao_iterations: int
    wall_time: float


class RunResponse(BaseModel):
    summary: dict
    records: list[CpiRecordOut] | None = None


class BeamformRequest(ConfigRequest):
    pass


class BeamformResponse(BaseModel):
    iterations: int
    converged: bool
    secrecy_trace: list[float]
    secrecy_rate: float
    q_c: list[float]
    power_c: float
    power_e: float


class ErrorResponse(BaseModel):
    kind: str
    message: str


__all__ = ["ConfigRequest", "RunRequest", "RunResponse", "CpiRecordOut",
           "BeamformRequest", "BeamformResponse", "ErrorResponse",
           "ConfigError"]
