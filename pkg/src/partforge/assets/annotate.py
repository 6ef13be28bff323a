"""Connection detection, symmetry classes and grasp regions."""
from __future__ import annotations

import dataclasses
import itertools

import numpy as np
from scipy.spatial import cKDTree

from partforge.assets.types import MAX_CONNECTIONS, ChairAsset, ConnectionPoint, GraspRegion, Part
from partforge.errors import TooManyConnections
from partforge.geom import (
    CONTACT_TOL,
    contact_normal,
    contact_patch,
    hull_distance,
    sample_point_cloud,
    world_hull,
)

CONNECT_THRESHOLD = 0.005
EQUIV_TOL = 1e-6
EQUIV_POINTS = 512
EQUIV_SEED = 0


def tangent_for(normal) -> np.ndarray:
    """First basis vector not nearly parallel to ``normal``, orthogonalised."""
    n = np.asarray(normal, float)
    for e in np.eye(3):
        if abs(e @ n) < 0.9:
            t = e - (e @ n) * n
            return t / np.linalg.norm(t)
    raise AssertionError("unreachable for unit normals")


def _clean(v, digits: int = 12) -> tuple[float, ...]:
    out = np.round(np.asarray(v, float), digits)
    out[out == 0] = 0.0
    return tuple(float(x) for x in out)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def find_contacts(chair: ChairAsset, threshold: float = CONNECT_THRESHOLD):
    """Yield ``(a, b, gap, witness_a, witness_b, normal_ab)`` for near pairs (world frame)."""
    hulls = [world_hull(p.mesh, pose) for p, pose in zip(chair.parts, chair.gt_poses)]
    for a, b in itertools.combinations(range(chair.n_parts), 2):
        d, wa, wb = hull_distance(hulls[a], hulls[b])
        if d >= threshold:
            continue
        n = _unit(wb - wa) if d > CONTACT_TOL else contact_normal(hulls[a], hulls[b])
        patch = contact_patch(hulls[a], hulls[b], n)
        if patch is not None:
            wa, wb = patch
        yield a, b, d, wa, wb, n


def detect_connections(chair: ChairAsset, threshold: float = CONNECT_THRESHOLD) -> ChairAsset:
    """Annotate one mutual connection point pair per part pair closer than ``threshold``.

    Connections on each part are ordered by local position so that parts
    with identical geometry and contacts get identical lists.
    """
    raw: dict[int, list] = {i: [] for i in range(chair.n_parts)}
    for a, b, _, wa, wb, n in find_contacts(chair, threshold):
        for own, other, w, normal in ((a, b, wa, n), (b, a, wb, -n)):
            pose = chair.gt_poses[own]
            R = pose.rotation
            local_pos = R.T @ (w - pose.translation)
            local_n = _unit(R.T @ normal)
            raw[own].append((_clean(local_pos, 9), _clean(local_n), other))
    order: dict[int, list] = {}
    for pid, items in raw.items():
        if len(items) > MAX_CONNECTIONS:
            raise TooManyConnections(f"part {pid} has {len(items)} connections")
        order[pid] = sorted(items, key=lambda it: (it[0], it[1], it[2]))
    index = {(pid, it[2]): k for pid, items in order.items() for k, it in enumerate(items)}
    parts, adjacency = [], set()
    for pid, items in order.items():
        conns = []
        for k, (pos, n, other) in enumerate(items):
            conns.append(ConnectionPoint(pos, n, _clean(tangent_for(n)), other, index[(other, pid)]))
            if pid < other:
                adjacency.add((pid, k, other, index[(other, pid)]))
        parts.append(dataclasses.replace(chair.parts[pid], connections=tuple(conns)))
    return dataclasses.replace(chair, parts=tuple(parts), gt_adjacency=frozenset(adjacency))


# -- symmetry -------------------------------------------------------------------

def axis_rotations() -> list[np.ndarray]:
    """The 24 rotations mapping coordinate axes onto coordinate axes."""
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            R = np.zeros((3, 3))
            R[np.arange(3), perm] = signs
            if np.linalg.det(R) > 0:
                mats.append(R)
    return mats


_ROTATIONS = axis_rotations()


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean squared nearest-neighbour distance (m^2)."""
    a = getattr(a, "points", a)
    b = getattr(b, "points", b)
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(np.mean(da ** 2) + np.mean(db ** 2))


def rotation_chamfer(cloud_a: np.ndarray, cloud_b: np.ndarray) -> float:
    """Smallest Chamfer distance over the 24 axis-aligned rotations of ``cloud_a``."""
    tree_b = cKDTree(cloud_b)
    best = np.inf
    for R in _ROTATIONS:
        ra = cloud_a @ R.T
        da, _ = tree_b.query(ra)
        first = float(np.mean(da ** 2))
        if first >= best:
            continue
        db, _ = cKDTree(ra).query(cloud_b)
        best = min(best, first + float(np.mean(db ** 2)))
    return best


def part_cloud(part: Part, m: int = EQUIV_POINTS, seed: int = EQUIV_SEED) -> np.ndarray:
    return sample_point_cloud(part.mesh, m, seed).points


def compute_equivalence_classes(chair: ChairAsset, tol: float = EQUIV_TOL) -> list[int]:
    """Class label per part; the label is the smallest part id in the class."""
    clouds = [part_cloud(p) for p in chair.parts]
    labels = [-1] * chair.n_parts
    reps: list[int] = []
    for i in range(chair.n_parts):
        for r in reps:
            if len(chair.parts[r].mesh.vertices) != len(chair.parts[i].mesh.vertices):
                continue
            if rotation_chamfer(clouds[i], clouds[r]) < tol:
                labels[i] = r
                break
        else:
            reps.append(i)
            labels[i] = i
    return labels


# -- grasp regions -----------------------------------------------------------------

def generate_grasp_regions(part: Part) -> tuple[GraspRegion, GraspRegion]:
    """Two regions on the extremal thirds of the longest local axis."""
    lo, hi = part.mesh.bounds()
    ext = hi - lo
    mid = 0.5 * (lo + hi)
    axis = int(np.argmax(ext))
    others = [a for a in range(3) if a != axis]
    dirs = []
    for a in others:
        for s in (1.0, -1.0):
            d = np.zeros(3)
            d[a] = s
            dirs.append(_clean(d))
    half = 0.5 * ext.copy()
    half[axis] = ext[axis] / 6.0
    regions = []
    for s in (1.0, -1.0):
        c = mid.copy()
        c[axis] += s * ext[axis] / 3.0
        regions.append(GraspRegion(_clean(c, 9), _clean(half, 9), tuple(dirs)))
    return tuple(regions)


def annotate_chair(chair: ChairAsset) -> ChairAsset:
    """Connections, equivalence classes and grasp regions in one pass."""
    chair = detect_connections(chair)
    labels = compute_equivalence_classes(chair)
    parts = tuple(
        dataclasses.replace(p, equivalence_class=labels[i], grasp_regions=generate_grasp_regions(p))
        for i, p in enumerate(chair.parts)
    )
    return dataclasses.replace(chair, parts=parts)
