"""Step function of the assembly MDP.

Object-centric actions ``(u, v, k, l, w)`` ask to attach connection ``k``
of part ``u`` to connection ``l`` of part ``v`` after turning ``v``'s group
so its assembled-frame +z points along axis ``w``. Full-setting actions
replace ``w`` by grasp choices ``(g_a, g_b)`` checked with an abstract
swept gripper.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np

from partforge.assets.types import MAX_CONNECTIONS, MAX_PARTS, ChairAsset
from partforge.env.state import AssemblyState, write_connection
from partforge.errors import PlacementFailed
from partforge.geom import CONTACT_TOL, Pose6D, convex_hull, hull_distance, hull_vertices, world_hull
from partforge.geom.pose import compose, invert
from partforge.planner import RRTParams, plan_mating

AXES = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
N_ORIENTATIONS = 6
N_GRASPS = 8
HANDOFF_HEIGHT = 0.5
GRIPPER_WIDTH, GRIPPER_DEPTH, GRIPPER_LENGTH = 0.04, 0.02, 0.06
APPROACH_DISTANCE = 0.3
GRIPPER_CLEARANCE = 0.001
RESET_REGION = 2.0
RESET_GAP = 0.05
RESET_ATTEMPTS = 1000
SHIFT_RADIUS = 1.0
SHIFT_STEP = 0.05

REWARD_STEP = 1.0
REWARD_DONE = 5.0


class Failure(str, Enum):
    NONE = "None"
    INVALID_SELECTION = "InvalidSelection"
    NO_MATING_PATH = "NoMatingPath"
    GRASP_INFEASIBLE = "GraspInfeasible"


@dataclass(frozen=True)
class ActionOC:
    u: int
    v: int
    k: int
    l: int
    w: int

    def __post_init__(self):
        if not (0 <= self.u < MAX_PARTS and 0 <= self.v < MAX_PARTS):
            raise ValueError("part index out of range")
        if not (0 <= self.k < MAX_CONNECTIONS and 0 <= self.l < MAX_CONNECTIONS):
            raise ValueError("connection index out of range")
        if not 0 <= self.w < N_ORIENTATIONS:
            raise ValueError("orientation id out of range")

    def as_list(self) -> list[int]:
        return [self.u, self.v, self.k, self.l, self.w]


@dataclass(frozen=True)
class ActionFull:
    u: int
    v: int
    k: int
    l: int
    g_a: int
    g_b: int

    def __post_init__(self):
        if not (0 <= self.u < MAX_PARTS and 0 <= self.v < MAX_PARTS):
            raise ValueError("part index out of range")
        if not (0 <= self.k < MAX_CONNECTIONS and 0 <= self.l < MAX_CONNECTIONS):
            raise ValueError("connection index out of range")
        if not (0 <= self.g_a < N_GRASPS and 0 <= self.g_b < N_GRASPS):
            raise ValueError("grasp id out of range")

    def as_list(self) -> list[int]:
        return [self.u, self.v, self.k, self.l, self.g_a, self.g_b]


@dataclass
class StepResult:
    next_state: AssemblyState
    reward: float
    done: bool
    failure: Failure = Failure.NONE
    states_attempted: int = 0


# -- geometry helpers -------------------------------------------------------------------

def rotation_between(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, float) / np.linalg.norm(a)
    b = np.asarray(b, float) / np.linalg.norm(b)
    c = float(a @ b)
    if c > 1 - 1e-12:
        return np.eye(3)
    if c < -1 + 1e-12:
        e = next(e for e in np.eye(3) if abs(e @ a) < 0.9)
        axis = e - (e @ a) * a
        axis /= np.linalg.norm(axis)
        return 2 * np.outer(axis, axis) - np.eye(3)
    v = np.cross(a, b)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1 + c)


def _rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def rest_rotation(mesh) -> np.ndarray:
    """Rotation that sets ``mesh`` on its largest stable hull face."""
    cached = mesh.__dict__.get("_rest_rotation")
    if cached is not None:
        return cached
    from shapely.geometry import MultiPoint, Point

    hull = convex_hull(mesh)
    verts = hull.vertices
    com = mesh.centroid()
    best, best_R = -1.0, np.eye(3)
    seen = []
    for n in hull.normals:
        if any(np.allclose(n, m, atol=1e-9) for m in seen):
            continue
        seen.append(n)
        R = rotation_between(n, (0, 0, -1))
        rv = verts @ R.T
        low = rv[rv[:, 2] <= rv[:, 2].min() + 1e-9]
        if len(low) < 3:
            continue
        poly = MultiPoint([tuple(p) for p in low[:, :2]]).convex_hull
        c = R @ com
        if poly.area > best + 1e-12 and poly.buffer(1e-9).contains(Point(c[0], c[1])):
            best, best_R = poly.area, R
    object.__setattr__(mesh, "_rest_rotation", best_R)
    return best_R


def _clear(hull: np.ndarray, others, tol: float = CONTACT_TOL) -> bool:
    lo, hi = hull.min(axis=0), hull.max(axis=0)
    for o in others:
        if np.any(o.min(axis=0) > hi + tol) or np.any(lo > o.max(axis=0) + tol):
            continue
        if hull_distance(hull, o)[0] <= tol:
            return False
    return True


# -- reset ------------------------------------------------------------------------------

def reset(chair: ChairAsset, seed: int) -> AssemblyState:
    """Scatter the parts flat on the ground, at least 50 mm apart."""
    rng = np.random.default_rng(seed)
    placed, poses = [], []
    attempts = 0
    for part in chair.parts:
        local = hull_vertices(part.mesh)
        R0 = rest_rotation(part.mesh)
        while True:
            attempts += 1
            if attempts > RESET_ATTEMPTS:
                raise PlacementFailed(f"chair {chair.id}: no placement after {RESET_ATTEMPTS} attempts")
            R = _rot_z(rng.uniform(-np.pi, np.pi)) @ R0
            xy = rng.uniform(-RESET_REGION, RESET_REGION, 2)
            rv = local @ R.T
            t = np.r_[xy, -rv[:, 2].min()]
            world = rv + t
            if _clear(world, placed, RESET_GAP):
                break
        placed.append(world)
        poses.append(Pose6D.from_matrix(R, t))
    return AssemblyState.initial(chair, poses)


# -- selection ----------------------------------------------------------------------------

def equivalence_set(state: AssemblyState, u: int) -> set[int]:
    cls = state.chair.parts[u].equivalence_class
    return {p.id for p in state.chair.parts if p.equivalence_class == cls}


def _gt_mate(chair: ChairAsset, part: int, conn: int):
    conns = chair.parts[part].connections
    if conn >= len(conns):
        return None
    c = conns[conn]
    return c.mate_part, c.mate_connection


def verify_selection(state: AssemblyState, u: int, v: int, k: int, l: int) -> tuple[bool, int]:
    """Check a selection against the assembled chair; returns ``(valid, u_sub)``.

    ``u_sub`` is the ground-truth slot mated to connection ``l`` of ``v``'s
    slot. The selection is valid when that slot is geometrically
    equivalent to ``u``, its connection ``k`` mates back to ``v``'s slot,
    both connection slots are still free, and (for a substitution) the
    part swap leaves no assembled group inconsistent.
    """
    chair = state.chair
    M = chair.n_parts
    if not (0 <= u < M and 0 <= v < M) or u == v:
        return False, -1
    if state.groups.find(u) == state.groups.find(v):
        return False, -1
    if k >= len(chair.parts[u].connections) or l >= len(chair.parts[v].connections):
        return False, -1
    if (u, k) in state.used or (v, l) in state.used:
        return False, -1
    rv = state.roles[v]
    u_sub, _ = _gt_mate(chair, rv, l)
    if u_sub not in equivalence_set(state, u):
        return False, -1
    back = _gt_mate(chair, u_sub, k)
    if back is None or back[0] != rv:
        return False, -1
    if u_sub != state.roles[u]:
        p = state.holder(u_sub)
        if len(state.group_of(u)) > 1 or len(state.group_of(p)) > 1:
            return False, -1
    return True, u_sub


def mating_target_pose(state: AssemblyState, u_sub: int, v: int) -> Pose6D:
    """Pose putting the moving part where slot ``u_sub`` sits relative to ``v``."""
    gt = state.chair.gt_poses
    return compose(state.poses[v], compose(invert(gt[state.roles[v]]), gt[u_sub]))


# -- moving groups ------------------------------------------------------------------------

def _others(state: AssemblyState, group) -> list[np.ndarray]:
    gs = set(group)
    return [world_hull(state.chair.parts[x].mesh, state.poses[x]) for x in range(state.n_parts) if x not in gs]


def _place_group(state: AssemblyState, group, R: np.ndarray, xy, min_z: float):
    """Poses for ``group`` in assembled-frame orientation ``R`` at centroid ``xy`` and lowest point ``min_z``."""
    gt = state.chair.gt_poses
    base = Pose6D.from_matrix(R, np.zeros(3))
    poses = {x: compose(base, gt[state.roles[x]]) for x in group}
    return _shift_to(state, poses, xy, min_z)


def _shift_to(state: AssemblyState, poses: dict, xy, min_z: float) -> dict:
    cen = np.mean([p.translation[:2] for p in poses.values()], axis=0)
    low = min(world_hull(state.chair.parts[x].mesh, p)[:, 2].min() for x, p in poses.items())
    d = np.r_[np.asarray(xy) - cen, min_z - low]
    return {x: Pose6D(*(p.translation + d), p.rx, p.ry, p.rz) for x, p in poses.items()}


def _find_free(state: AssemblyState, poses: dict):
    """``poses`` if collision-free, else the nearest free xy shift within 1 m, else None."""
    others = _others(state, poses.keys())
    hulls = {x: world_hull(state.chair.parts[x].mesh, p) for x, p in poses.items()}
    for r in np.arange(0.0, SHIFT_RADIUS + 1e-9, SHIFT_STEP):
        n = 1 if r == 0 else max(8, int(np.ceil(2 * np.pi * r / SHIFT_STEP)))
        for ang in np.arange(n) * 2 * np.pi / n:
            off = np.array([r * np.cos(ang), r * np.sin(ang), 0.0])
            if all(_clear(h + off, others) for h in hulls.values()):
                return {x: Pose6D(*(p.translation + off), p.rx, p.ry, p.rz) for x, p in poses.items()}
    return None


def _with_poses(state: AssemblyState, poses: dict) -> AssemblyState:
    s = state.copy()
    for x, p in poses.items():
        s.poses[x] = p
    return s


def apply_reorientation(state: AssemblyState, v: int, w: int):
    """Turn ``v``'s group so assembled +z points along axis ``w``; None if no free spot."""
    group = state.group_of(v)
    R = rotation_between((0, 0, 1), AXES[w])
    xy = np.mean([state.poses[x].translation[:2] for x in group], axis=0)
    poses = _find_free(state, _place_group(state, group, R, xy, 0.0))
    return None if poses is None else _with_poses(state, poses)


def _settle(state: AssemblyState, group):
    poses = {x: state.poses[x] for x in group}
    xy = np.mean([p.translation[:2] for p in poses.values()], axis=0)
    poses = _find_free(state, _shift_to(state, poses, xy, 0.0))
    return None if poses is None else _with_poses(state, poses)


def is_fully_assembled(state: AssemblyState) -> bool:
    if state.groups.n_groups() != 1:
        return False
    for a, _, b, _ in state.chair.gt_adjacency:
        if not np.any(state.tensor[state.holder(a), state.holder(b)]):
            return False
    return True


def _merge(state: AssemblyState, u: int, v: int, u_sub: int) -> AssemblyState:
    s = state.copy()
    if s.roles[u] != u_sub:
        p = s.holder(u_sub)
        s.roles[p], s.roles[u] = s.roles[u], u_sub
    s.groups.union(u, v)
    used = set(s.used)
    for ra, ka, rb, kb in s.chair.gt_adjacency:
        a, b = s.holder(ra), s.holder(rb)
        if s.groups.find(a) == s.groups.find(b) and (a, ka) not in used:
            write_connection(s.tensor, s.poses, a, b)
            used.update({(a, ka), (b, kb)})
    s.used = frozenset(used)
    return s


def _fail(state: AssemblyState, failure: Failure, states: int = 0) -> StepResult:
    s = dataclasses.replace(state, step_count=state.step_count + 1)
    return StepResult(s, 0.0, True, failure, states)


def _mate(state: AssemblyState, u: int, v: int, u_sub: int, params: RRTParams) -> StepResult:
    """Plan ``u``'s group to its target, then merge and settle."""
    target = mating_target_pose(state, u_sub, v)
    group = state.group_of(u)
    params = dataclasses.replace(params, seed=params.seed + 7919 * state.step_count)
    outcome = plan_mating(state, group, target, params, anchor=u)
    if not outcome.success:
        return _fail(state, Failure.NO_MATING_PATH, outcome.states_attempted)
    move = compose(target, invert(state.poses[u]))
    moved = {x: (target if x == u else compose(move, state.poses[x])) for x in group}
    merged = _merge(_with_poses(state, moved), u, v, u_sub)
    settled = _settle(merged, merged.group_of(u))
    if settled is None:
        return _fail(state, Failure.NO_MATING_PATH, outcome.states_attempted)
    # settling is a rigid shift, so tensor entries stay valid
    settled.step_count = state.step_count + 1
    done = is_fully_assembled(settled)
    reward = REWARD_DONE if done else REWARD_STEP
    return StepResult(settled, reward, done, Failure.NONE, outcome.states_attempted)


def step_oc(state: AssemblyState, a: ActionOC, params: RRTParams | None = None) -> StepResult:
    """Object-centric step: verify, reorient, plan, merge."""
    params = params or RRTParams()
    ok, u_sub = verify_selection(state, a.u, a.v, a.k, a.l)
    if not ok:
        return _fail(state, Failure.INVALID_SELECTION)
    turned = apply_reorientation(state, a.v, a.w)
    if turned is None:
        return _fail(state, Failure.NO_MATING_PATH)
    return _mate(turned, a.u, a.v, u_sub, params)


# -- full setting ---------------------------------------------------------------------------

def gripper_sweep(state: AssemblyState, x: int, g: int) -> np.ndarray:
    """World vertices of the box swept by the gripper approaching grasp ``g`` of part ``x``."""
    region = state.chair.parts[x].grasp_regions[g // 4]
    d = np.array(region.approach_dirs[g % 4])
    half = np.array(region.half_extents)
    dirs = np.abs(np.array(region.approach_dirs)).sum(axis=0)
    long_axis = np.eye(3)[int(np.argmin(dirs))]
    side = np.cross(d, long_axis)
    surface = np.array(region.center) + d * (np.abs(d) @ half)
    length = GRIPPER_LENGTH + APPROACH_DISTANCE
    centre = surface + d * (GRIPPER_CLEARANCE + length / 2)
    corners = np.array([[i, j, m] for i in (-.5, .5) for j in (-.5, .5) for m in (-.5, .5)])
    local = centre + corners[:, :1] * length * d + corners[:, 1:2] * GRIPPER_WIDTH * long_axis \
        + corners[:, 2:] * GRIPPER_DEPTH * side
    pose = state.poses[x]
    return local @ pose.rotation.T + pose.translation


def grasp_feasible(state: AssemblyState, x: int, g: int) -> bool:
    """True when the swept gripper misses the ground and every other part."""
    sweep = gripper_sweep(state, x, g)
    if sweep[:, 2].min() < -CONTACT_TOL:
        return False
    others = [world_hull(state.chair.parts[y].mesh, state.poses[y]) for y in range(state.n_parts) if y != x]
    return _clear(sweep, others)


def step_full_abstract(state: AssemblyState, a: ActionFull, params: RRTParams | None = None) -> StepResult:
    """Full-setting step with abstract grippers and a lifted hand-off pose for ``v``."""
    params = params or RRTParams()
    ok, u_sub = verify_selection(state, a.u, a.v, a.k, a.l)
    if not ok:
        return _fail(state, Failure.INVALID_SELECTION)
    if not (grasp_feasible(state, a.u, a.g_a) and grasp_feasible(state, a.v, a.g_b)):
        return _fail(state, Failure.GRASP_INFEASIBLE)
    group = state.group_of(a.v)
    xy = np.mean([state.poses[x].translation[:2] for x in group], axis=0)
    lifted = _find_free(state, _place_group(state, group, np.eye(3), xy, HANDOFF_HEIGHT))
    if lifted is None:
        return _fail(state, Failure.NO_MATING_PATH)
    return _mate(_with_poses(state, lifted), a.u, a.v, u_sub, params)


# -- action space ---------------------------------------------------------------------------

def action_space_size(caps) -> int:
    P, K, W = caps
    return P * P * K * K * W


def encode_action(u, v, k, l, w, caps) -> int:
    P, K, W = caps
    return (((u * P + v) * K + k) * K + l) * W + w


def decode_action(index: int, caps) -> tuple[int, int, int, int, int]:
    P, K, W = caps
    index, w = divmod(int(index), W)
    index, l = divmod(index, K)
    index, k = divmod(index, K)
    u, v = divmod(index, P)
    return u, v, k, l, w


def valid_action_mask(state: AssemblyState, caps=(MAX_PARTS, MAX_CONNECTIONS, N_ORIENTATIONS)) -> np.ndarray:
    """Flat boolean mask over the padded action space (last axis unconstrained)."""
    P, K, W = caps
    M = state.n_parts
    roots = np.array([state.groups.find(x) for x in range(M)])
    pair = np.zeros((P, P), bool)
    pair[:M, :M] = roots[:, None] != roots[None, :]
    slot = np.zeros((P, K), bool)
    for x, part in enumerate(state.chair.parts):
        n = min(len(part.connections), K)
        slot[x, :n] = True
    for x, c in state.used:
        if c < K:
            slot[x, c] = False
    m4 = pair[:, :, None, None] & slot[:, None, :, None] & slot[None, :, None, :]
    return np.repeat(m4[..., None], W, axis=-1).reshape(-1)
