"""Contact-implicit trajectory optimization for a planar hopping leg."""

from .model import LegModel, LinkParams, crouch_configuration, leg_ik
from .terrain import Terrain, contact_complementarity_residuals
from .transcription import (
    KnotTrajectory,
    NlpProblem,
    TaskSpec,
    transcribe_centroidal,
    transcribe_full,
)
from .solver import Multipliers, SolveReport, SolverOptions, kkt_residual, solve
from .pipeline import (
    PlanResult,
    interpolate,
    plan_full_only,
    plan_hierarchical,
    verify,
)
from .config import RunConfig, load_config

__all__ = [
    "KnotTrajectory", "LegModel", "LinkParams", "Multipliers", "NlpProblem",
    "PlanResult", "RunConfig", "SolveReport", "SolverOptions", "TaskSpec",
    "Terrain", "contact_complementarity_residuals", "crouch_configuration",
    "interpolate", "kkt_residual", "leg_ik", "load_config", "plan_full_only",
    "plan_hierarchical", "solve", "transcribe_centroidal", "transcribe_full",
    "verify",
]

__version__ = "0.1.0"
