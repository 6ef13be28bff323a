"""Assembly MDP: state, rewards, symmetric substitution and the step function."""
from partforge.env.core import (
    AXES,
    ActionFull,
    ActionOC,
    Failure,
    StepResult,
    action_space_size,
    apply_reorientation,
    decode_action,
    encode_action,
    equivalence_set,
    grasp_feasible,
    gripper_sweep,
    is_fully_assembled,
    mating_target_pose,
    reset,
    step_full_abstract,
    step_oc,
    valid_action_mask,
    verify_selection,
)
from partforge.env.env import AssemblyEnv
from partforge.env.log import TrajectoryLog, read_log
from partforge.env.state import AssemblyState, UnionFind, tensor_violations

__all__ = [
    "AXES", "ActionFull", "ActionOC", "AssemblyEnv", "AssemblyState", "Failure", "StepResult",
    "TrajectoryLog", "UnionFind", "action_space_size", "apply_reorientation", "decode_action",
    "encode_action", "equivalence_set", "grasp_feasible", "gripper_sweep", "is_fully_assembled",
    "mating_target_pose", "read_log", "reset", "step_full_abstract", "step_oc", "tensor_violations",
    "valid_action_mask", "verify_selection",
]
