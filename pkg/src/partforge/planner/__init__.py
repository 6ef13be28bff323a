"""Sampling-based motion planning for mating queries and whole assemblies."""
from partforge.planner.rrt import (
    ConfigSpace,
    PlanOutcome,
    RRTParams,
    check_motion,
    interpolate,
    rrt_connect,
)
from partforge.planner.spaces import (
    assembled_goal,
    plan_full_assembly,
    plan_mating,
    rigid_body_space,
    write_planner_report,
)

__all__ = [
    "ConfigSpace", "PlanOutcome", "RRTParams", "assembled_goal", "check_motion", "interpolate",
    "plan_full_assembly", "plan_mating", "rigid_body_space", "rrt_connect", "write_planner_report",
]
