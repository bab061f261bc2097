from .engine import (
    SettleOutcome,
    SettleParams,
    StepInfo,
    kinetic_energy,
    linear_momentum,
    potential_energy,
    settle,
    step,
    step_inplace,
    total_energy,
)
from .outcomes import (
    OutcomeDetail,
    OutcomeType,
    classify_outcome,
    classify_outcome_detail,
    gravity_stability,
    stability_label,
)
from .world import (
    ConvexPiece,
    HumanTrack,
    RigidBody,
    WorldState,
    quat_angle,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_mul,
    quat_to_matrix,
)

__all__ = [
    "ConvexPiece",
    "HumanTrack",
    "OutcomeDetail",
    "OutcomeType",
    "RigidBody",
    "SettleOutcome",
    "SettleParams",
    "StepInfo",
    "WorldState",
    "classify_outcome",
    "classify_outcome_detail",
    "gravity_stability",
    "kinetic_energy",
    "linear_momentum",
    "potential_energy",
    "quat_angle",
    "quat_from_axis_angle",
    "quat_from_matrix",
    "quat_mul",
    "quat_to_matrix",
    "settle",
    "stability_label",
    "step",
    "step_inplace",
    "total_energy",
]
