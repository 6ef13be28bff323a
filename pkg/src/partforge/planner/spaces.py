"""Rigid-body configuration spaces and the two planning queries built on them."""
from __future__ import annotations

import csv

import numpy as np
from numba import njit

from partforge.errors import InvalidQuery
from partforge.geom import CONTACT_TOL, Pose6D, hull_vertices, world_hull
from partforge.geom.collision import first_invalid_config
from partforge.geom.pose import relative
from partforge.planner.rrt import ConfigSpace, PlanOutcome, RRTParams, rrt_connect

WORKSPACE_LOWER = (-3.0, -3.0, 0.0)
WORKSPACE_UPPER = (3.0, 3.0, 2.0)


def _pack(arrays):
    arrays = [np.ascontiguousarray(a, float) for a in arrays]
    ptr = np.zeros(len(arrays) + 1, np.int64)
    ptr[1:] = np.cumsum([len(a) for a in arrays])
    verts = np.concatenate(arrays) if arrays else np.zeros((0, 3))
    return ptr, np.ascontiguousarray(verts)


@njit(cache=True)
def _transforms(configs, B):
    N = configs.shape[0]
    Rs = np.empty((N, B, 3, 3))
    ts = np.empty((N, B, 3))
    for n in range(N):
        for b in range(B):
            o = 6 * b
            cx, sx = np.cos(configs[n, o + 3]), np.sin(configs[n, o + 3])
            cy, sy = np.cos(configs[n, o + 4]), np.sin(configs[n, o + 4])
            cz, sz = np.cos(configs[n, o + 5]), np.sin(configs[n, o + 5])
            R = Rs[n, b]
            R[0, 0] = cy * cz
            R[0, 1] = -cy * sz
            R[0, 2] = sy
            R[1, 0] = cx * sz + sx * sy * cz
            R[1, 1] = cx * cz - sx * sy * sz
            R[1, 2] = -sx * cy
            R[2, 0] = sx * sz - cx * sy * cz
            R[2, 1] = sx * cz + cx * sy * sz
            R[2, 2] = cx * cy
            for c in range(3):
                ts[n, b, c] = configs[n, o + c]
    return Rs, ts


def rigid_body_space(bodies, statics=(), *, lower=WORKSPACE_LOWER, upper=WORKSPACE_UPPER,
                     check_ground: bool = True, tol: float = CONTACT_TOL) -> ConfigSpace:
    """Space of poses for ``len(bodies)`` rigid bodies.

    ``bodies[b]`` is a list of convex pieces (vertex arrays in body frame);
    ``statics`` are fixed convex pieces in world coordinates. A configuration
    is valid when no piece of one body meets a piece of another body or a
    static piece, and (optionally) nothing dips below z = 0.
    """
    piece_body = np.array([b for b, pieces in enumerate(bodies) for _ in pieces], np.int64)
    piece_ptr, local = _pack([p for pieces in bodies for p in pieces])
    static_ptr, static_verts = _pack(list(statics))
    B = len(bodies)
    pairs = B > 1

    def batch(configs: np.ndarray) -> int:
        Rs, ts = _transforms(np.ascontiguousarray(configs), B)
        return first_invalid_config(Rs, ts, piece_body, piece_ptr, local, static_ptr, static_verts,
                                    pairs, tol, check_ground)

    lo = np.tile(np.r_[lower, -np.pi, -np.pi, -np.pi], B)
    hi = np.tile(np.r_[upper, np.pi, np.pi, np.pi], B)
    return ConfigSpace(lo, hi, batch_validity=batch)


def _widen(space: ConfigSpace, *configs) -> ConfigSpace:
    """Grow translation bounds so that all given configurations lie inside."""
    pts = np.array(configs)
    space.lower = np.minimum(space.lower, pts.min(axis=0))
    space.upper = np.maximum(space.upper, pts.max(axis=0))
    return space


def plan_mating(state, moving_group, target: Pose6D, params: RRTParams | None = None,
                anchor: int | None = None) -> PlanOutcome:
    """Move a rigid group so that part ``anchor`` reaches ``target``.

    ``state`` needs ``chair`` and ``poses``; ``moving_group`` lists the part
    ids that move together. Every other part is a static obstacle. An
    unreachable or invalid goal yields NoPath with zero attempted states.
    """
    params = params or RRTParams()
    group = sorted(moving_group)
    anchor = group[0] if anchor is None else anchor
    chair, poses = state.chair, state.poses
    T_anchor = poses[anchor]
    pieces = [hull_vertices(chair.parts[x].mesh) @ relative(T_anchor, poses[x]).rotation.T
              + relative(T_anchor, poses[x]).translation for x in group]
    statics = [world_hull(chair.parts[x].mesh, poses[x]) for x in range(chair.n_parts) if x not in group]
    space = rigid_body_space([pieces], statics)
    start, goal = T_anchor.as_array(), target.as_array()
    _widen(space, start, goal)
    try:
        return rrt_connect(space, start, goal, params)
    except InvalidQuery:
        return PlanOutcome(None, 0)


def assembled_goal(chair, init_poses) -> list[Pose6D]:
    """Ground-truth poses moved to rest on the ground below the initial xy centroid."""
    lows = [world_hull(p.mesh, T)[:, 2].min() for p, T in zip(chair.parts, chair.gt_poses)]
    gt_xy = np.mean([T.translation[:2] for T in chair.gt_poses], axis=0)
    init_xy = np.mean([T.translation[:2] for T in init_poses], axis=0)
    shift = np.r_[init_xy - gt_xy, -min(lows)]
    return [Pose6D(*(T.translation + shift), T.rx, T.ry, T.rz) for T in chair.gt_poses]


def plan_full_assembly(chair, init_poses, params: RRTParams | None = None) -> PlanOutcome:
    """Single query in the joint 6M-dimensional space of all parts."""
    params = params or RRTParams()
    if chair.n_parts == 1:
        return PlanOutcome([np.asarray(init_poses[0].as_array())], 0)
    goal_poses = assembled_goal(chair, init_poses)
    bodies = [[hull_vertices(p.mesh)] for p in chair.parts]
    space = rigid_body_space(bodies)
    start = np.concatenate([T.as_array() for T in init_poses])
    goal = np.concatenate([T.as_array() for T in goal_poses])
    _widen(space, start, goal)
    try:
        return rrt_connect(space, start, goal, params)
    except InvalidQuery:
        return PlanOutcome(None, 0)


REPORT_FIELDS = ("chair_id", "query_kind", "result", "states_attempted", "wall_ms")


def write_planner_report(rows, path) -> None:
    """CSV with one row per query: chair_id, query_kind, result, states_attempted, wall_ms."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow([r["chair_id"], r["query_kind"], r["result"], r["states_attempted"], f"{r['wall_ms']:.3f}"])
