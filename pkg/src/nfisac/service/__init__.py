"""HTTP interface over the simulator library (FastAPI)."""

from .app import app
from .schemas import (BeamformRequest, BeamformResponse, ConfigRequest,
                      CpiRecordOut, RunRequest, RunResponse)

__all__ = ["app", "BeamformRequest", "BeamformResponse", "ConfigRequest",
           "CpiRecordOut", "RunRequest", "RunResponse"]
