"""Per-CPI joint design: SDR beamforming, SCA trajectory, and the AO driver."""

from .solver import (ConicResult, InfeasibleProblemError, SolverFailure,
                     UnboundedProblemError, solve_conic)
from .beamforming import (BeamformingProblem, BeamformingSettings,
                          BeamformingSolution, assemble_mse_lmi,
                          mse_posterior_trace, rank_defect, rank_one_gap,
                          solve_beamforming, solve_beamforming_inner)
from .trajectory import (TrajectoryProblem, TrajectorySettings,
                         TrajectoryResult, restore_feasible_start,
                         solve_trajectory, trajectory_rate)
from .ao import AoProblem, AoSettings, AoResult, alternating_optimize, channel_at

__all__ = [
    "ConicResult", "InfeasibleProblemError", "SolverFailure",
    "UnboundedProblemError", "solve_conic",
    "BeamformingProblem", "BeamformingSettings", "BeamformingSolution",
    "assemble_mse_lmi", "mse_posterior_trace", "rank_defect", "rank_one_gap",
    "solve_beamforming", "solve_beamforming_inner",
    "TrajectoryProblem", "TrajectorySettings", "TrajectoryResult",
    "restore_feasible_start", "solve_trajectory", "trajectory_rate",
    "AoProblem", "AoSettings", "AoResult", "alternating_optimize",
    "channel_at",
]
