"""RRT-Connect over products of rigid-body pose spaces.

A configuration stacks one 6-vector ``(tx, ty, tz, rx, ry, rz)`` per body.
Interpolation is linear in translation and shortest-arc per Euler angle;
the nearest-neighbour metric is ``sum_b |dt_b| + w * theta_b`` with
``theta_b`` the geodesic rotation angle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from partforge.errors import InvalidQuery

GOAL_TOL_T = 1e-4
GOAL_TOL_R = 1e-3


@dataclass
class RRTParams:
    step_translation: float = 0.05
    step_rotation: float = 0.2
    goal_bias: float = 0.05
    max_states: int = 100_000
    resolution_translation: float = 0.005
    resolution_rotation: float = 0.05
    seed: int = 0
    rotation_weight: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.goal_bias < 1.0:
            raise ValueError("goal_bias must lie in [0, 1)")
        if self.max_states < 1:
            raise ValueError("max_states must be >= 1")
        for name in ("step_translation", "step_rotation", "resolution_translation", "resolution_rotation"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class PlanOutcome:
    """``path`` is None for NoPath; otherwise configurations from start to goal."""

    path: list | None
    states_attempted: int
    wall_ms: float = 0.0

    @property
    def success(self) -> bool:
        return self.path is not None

    @property
    def result(self) -> str:
        return "Path" if self.success else "NoPath"


@dataclass
class ConfigSpace:
    """Box-bounded configuration space with a collision predicate.

    Provide ``batch_validity`` (configs ``(N, D)`` -> index of the first
    invalid row or -1) for speed, or a scalar ``validity`` callable.
    """

    lower: np.ndarray
    upper: np.ndarray
    validity: Callable[[np.ndarray], bool] | None = None
    batch_validity: Callable[[np.ndarray], int] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, float)
        self.upper = np.asarray(self.upper, float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1 or self.lower.size % 6:
            raise ValueError("bounds must be 1-d with a length that is a multiple of 6")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("bounds must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound above upper bound")
        ang = self.angle_mask
        if np.any(self.lower[ang] < -np.pi - 1e-12) or np.any(self.upper[ang] > np.pi + 1e-12):
            raise ValueError("angle bounds must lie within [-pi, pi]")
        if self.validity is None and self.batch_validity is None:
            raise ValueError("a validity predicate is required")

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def n_bodies(self) -> int:
        return self.dimension // 6

    @property
    def angle_mask(self) -> np.ndarray:
        return np.tile(np.array([False] * 3 + [True] * 3), self.lower.size // 6)

    def first_invalid(self, configs: np.ndarray) -> int:
        configs = np.atleast_2d(configs).astype(float, copy=False)
        if self.batch_validity is not None:
            return int(self.batch_validity(configs))
        for i, q in enumerate(configs):
            if not self.validity(q):
                return i
        return -1

    def is_valid(self, q) -> bool:
        return self.first_invalid(np.asarray(q, float)[None]) < 0

    def sample(self, rng) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


# -- interpolation -------------------------------------------------------------------

_TWO_PI = 2.0 * np.pi


@njit(cache=True)
def _delta_nb(a, b):
    d = b - a
    for i in range(d.size):
        if i % 6 >= 3:
            d[i] = np.pi - ((np.pi - d[i]) % _TWO_PI)
    return d


@njit(cache=True)
def _extent_nb(d):
    et = 0.0
    er = 0.0
    for k in range(d.size // 6):
        o = 6 * k
        n = np.sqrt(d[o] * d[o] + d[o + 1] * d[o + 1] + d[o + 2] * d[o + 2])
        if n > et:
            et = n
        for c in range(3, 6):
            if abs(d[o + c]) > er:
                er = abs(d[o + c])
    return et, er


@njit(cache=True)
def _interp_nb(a, b, res_t, res_r, include_start):
    d = _delta_nb(a, b)
    et, er = _extent_nb(d)
    n = int(np.ceil(max(et / res_t, er / res_r) - 1e-12))
    if n < 1:
        n = 1
    first = 0 if include_start else 1
    pts = np.empty((n + 1 - first, a.size))
    for r in range(first, n + 1):
        s = r / n
        for i in range(a.size):
            x = a[i] + s * d[i]
            if i % 6 >= 3:
                x = np.pi - ((np.pi - x) % _TWO_PI)
            pts[r - first, i] = x
    pts[-1] = b
    return pts


@njit(cache=True)
def _steer_nb(a, b, step_t, step_r):
    d = _delta_nb(a, b)
    et, er = _extent_nb(d)
    f = 1.0
    if et > 0:
        f = min(f, step_t / et)
    if er > 0:
        f = min(f, step_r / er)
    if f >= 1.0:
        return b.copy(), True
    q = a + f * d
    for i in range(q.size):
        if i % 6 >= 3:
            q[i] = np.pi - ((np.pi - q[i]) % _TWO_PI)
    return q, False


@njit(cache=True)
def _quat_nb(angles):
    out = np.empty((angles.shape[0], 4))
    for k in range(angles.shape[0]):
        cx, sx = np.cos(angles[k, 0] / 2), np.sin(angles[k, 0] / 2)
        cy, sy = np.cos(angles[k, 1] / 2), np.sin(angles[k, 1] / 2)
        cz, sz = np.cos(angles[k, 2] / 2), np.sin(angles[k, 2] / 2)
        # qx * qy * qz for R = Rx Ry Rz
        w = cx * cy * cz - sx * sy * sz
        x = sx * cy * cz + cx * sy * sz
        y = cx * sy * cz - sx * cy * sz
        z = cx * cy * sz + sx * sy * cz
        if w < 0:
            w, x, y, z = -w, -x, -y, -z
        out[k, 0] = w
        out[k, 1] = x
        out[k, 2] = y
        out[k, 3] = z
    return out


def _f64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=float)


def config_delta(space: ConfigSpace, a, b) -> np.ndarray:
    """``b - a`` with angle coordinates along the shortest arc."""
    return _delta_nb(_f64(a), _f64(b))


def _segment_extent(delta: np.ndarray) -> tuple[float, float]:
    return _extent_nb(_f64(delta))


def interpolate(space: ConfigSpace, a, b, res_t: float, res_r: float, include_start: bool = True):
    """Configurations from ``a`` to ``b`` spaced at most ``res_t``/``res_r`` apart."""
    return _interp_nb(_f64(a), _f64(b), float(res_t), float(res_r), include_start)


def check_motion(space: ConfigSpace, a, b, resolution=(0.005, 0.05)) -> bool:
    """Straight-line validity test at ``resolution`` spacing, endpoints inclusive."""
    res_t, res_r = (resolution, resolution) if np.isscalar(resolution) else resolution
    return space.first_invalid(interpolate(space, a, b, res_t, res_r)) < 0


# -- nearest neighbour ------------------------------------------------------------------

def euler_to_quat(angles: np.ndarray) -> np.ndarray:
    """Unit quaternions (w, x, y, z), w >= 0, for Euler triples of shape (..., 3)."""
    angles = np.asarray(angles, float)
    flat = np.ascontiguousarray(angles.reshape(-1, 3))
    return _quat_nb(flat).reshape(angles.shape[:-1] + (4,))


@njit(cache=True)
def _nearest(T, Q, n, dead, t, q, w_rot):
    best = np.inf
    best_i = -1
    B = t.shape[0]
    for i in range(n):
        if dead[i]:
            continue
        d = 0.0
        for b in range(B):
            dx = T[i, b, 0] - t[b, 0]
            dy = T[i, b, 1] - t[b, 1]
            dz = T[i, b, 2] - t[b, 2]
            d += np.sqrt(dx * dx + dy * dy + dz * dz)
            dot = abs(Q[i, b, 0] * q[b, 0] + Q[i, b, 1] * q[b, 1] + Q[i, b, 2] * q[b, 2] + Q[i, b, 3] * q[b, 3])
            if dot > 1.0:
                dot = 1.0
            d += w_rot * 2.0 * np.arccos(dot)
            if d >= best:
                break
        if d < best:
            best = d
            best_i = i
    return best_i


class _Tree:
    def __init__(self, root: np.ndarray, cap: int):
        self.B = root.size // 6
        size = min(cap + 2, 1024)
        self.cfg = np.empty((size, root.size))
        self.T = np.empty((size, self.B, 3))
        self.Q = np.empty((size, self.B, 4))
        self.parent = np.empty(size, np.int64)
        self.dead = np.zeros(size, np.bool_)
        self.n = 0
        self.add(root, -1)

    def add(self, q: np.ndarray, parent: int) -> int:
        if self.n == len(self.parent):
            grow = len(self.parent)
            self.cfg = np.concatenate([self.cfg, np.empty_like(self.cfg[:grow])])
            self.T = np.concatenate([self.T, np.empty_like(self.T[:grow])])
            self.Q = np.concatenate([self.Q, np.empty_like(self.Q[:grow])])
            self.parent = np.concatenate([self.parent, np.empty_like(self.parent[:grow])])
            self.dead = np.concatenate([self.dead, np.zeros(grow, np.bool_)])
        i = self.n
        blocks = q.reshape(-1, 6)
        self.cfg[i] = q
        self.T[i] = blocks[:, :3]
        self.Q[i] = euler_to_quat(blocks[:, 3:])
        self.parent[i] = parent
        self.n += 1
        return i

    def nearest(self, q: np.ndarray, w_rot: float) -> int:
        blocks = q.reshape(-1, 6)
        return int(_nearest(self.T, self.Q, self.n, self.dead, np.ascontiguousarray(blocks[:, :3]),
                            euler_to_quat(blocks[:, 3:]), w_rot))

    def branch(self, i: int) -> list[int]:
        out = []
        while i >= 0:
            out.append(i)
            i = int(self.parent[i])
        return out

    def prune(self, i: int) -> None:
        """Remove node ``i`` and its descendants (children have larger indices)."""
        self.dead[i] = True
        for j in range(i + 1, self.n):
            if self.dead[self.parent[j]]:
                self.dead[j] = True


def configs_close(space: ConfigSpace, a, b) -> bool:
    et, er = _segment_extent(config_delta(space, a, b))
    return et <= GOAL_TOL_T and er <= GOAL_TOL_R


# -- planner -----------------------------------------------------------------------------

_TRAPPED, _ADVANCED, _REACHED = 0, 1, 2


class _Search:
    def __init__(self, space: ConfigSpace, params: RRTParams):
        self.space = space
        self.p = params
        self.count = 0

    def steer(self, a: np.ndarray, b: np.ndarray):
        return _steer_nb(a, _f64(b), self.p.step_translation, self.p.step_rotation)

    def extend(self, tree: _Tree, target: np.ndarray, near: int = -1):
        if near < 0:
            near = tree.nearest(target, self.p.rotation_weight)
        q_near = tree.cfg[near]
        q_new, reached = self.steer(q_near, target)
        self.count += 1
        seg = _interp_nb(q_near, q_new, self.p.resolution_translation, self.p.resolution_rotation, False)
        if self.space.first_invalid(seg) >= 0:
            return _TRAPPED, -1
        i = tree.add(q_new, near)
        return (_REACHED if reached else _ADVANCED), i

    def connect(self, tree: _Tree, target: np.ndarray):
        # after the first step keep growing from the newest node, so progress
        # in interpolation coordinates is guaranteed
        status, i = self.extend(tree, target)
        while status == _ADVANCED and self.count < self.p.max_states:
            status, j = self.extend(tree, target, near=i)
            i = j if status != _TRAPPED else i
        return status, i


def rrt_connect(space: ConfigSpace, start, goal, params: RRTParams | None = None) -> PlanOutcome:
    """Bidirectional RRT with the connect heuristic.

    ``states_attempted`` counts every extension configuration whose
    motion was validity-checked; the search gives up (NoPath) exactly
    when that count reaches ``params.max_states``.
    """
    import time

    t0 = time.perf_counter()
    params = params or RRTParams()
    start = np.asarray(start, float).copy()
    goal = np.asarray(goal, float).copy()
    if start.shape != (space.dimension,) or goal.shape != (space.dimension,):
        raise InvalidQuery("start/goal dimension does not match the space")
    if not space.is_valid(start):
        raise InvalidQuery("start configuration is invalid")
    if not space.is_valid(goal):
        raise InvalidQuery("goal configuration is invalid")
    if configs_close(space, start, goal):
        return PlanOutcome([start], 0, (time.perf_counter() - t0) * 1e3)

    rng = np.random.default_rng(params.seed)
    search = _Search(space, params)
    trees = [_Tree(start, params.max_states), _Tree(goal, params.max_states)]
    a, b = 0, 1
    half = (params.resolution_translation / 2, params.resolution_rotation / 2)
    while search.count < params.max_states:
        if rng.random() < params.goal_bias:
            target = trees[b].cfg[0].copy()
        else:
            target = space.sample(rng)
        status, i = search.extend(trees[a], target)
        if status != _TRAPPED and search.count < params.max_states:
            status_b, j = search.connect(trees[b], trees[a].cfg[i])
            if status_b == _REACHED:
                nodes = _join(trees, a, i, j)
                bad = _first_bad_edge(space, trees, nodes, half)
                if bad is None:
                    path = [trees[t].cfg[n].copy() for t, n in nodes]
                    path[0], path[-1] = start, goal
                    return PlanOutcome(path, search.count, (time.perf_counter() - t0) * 1e3)
                t, n = bad
                trees[t].prune(n)
        a, b = b, a
    return PlanOutcome(None, search.count, (time.perf_counter() - t0) * 1e3)


def _join(trees, a: int, i: int, j: int):
    """Node sequence (tree, index) from the start root to the goal root."""
    side_a = [(a, n) for n in trees[a].branch(i)]
    side_b = [(1 - a, n) for n in trees[1 - a].branch(j)]
    if a == 0:
        return side_a[::-1] + side_b[1:]
    return side_b[::-1] + side_a[1:]


def _first_bad_edge(space, trees, nodes, resolution):
    """Independent revalidation; returns the child node of the first failing edge."""
    for (ta, na), (tb, nb) in zip(nodes[:-1], nodes[1:]):
        if not check_motion(space, trees[ta].cfg[na], trees[tb].cfg[nb], resolution):
            # edge belongs to whichever node has the other as parent
            if ta == tb and trees[tb].parent[nb] == na:
                return tb, nb
            return ta, na
    return None
