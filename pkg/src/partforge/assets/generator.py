"""Procedural chairs with ground-truth assemblies.

All parts are boxes or 24-sided prisms. Mated faces are placed
``MATE_GAP`` apart, unmated parts at least ``MIN_CLEARANCE`` apart, which
keeps the 5 mm connection threshold unambiguous. Copies of a part family
(legs, posts, ...) share one local mesh; their yaw is chosen so their
contacts land on the same local faces.
"""
from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from partforge.assets.annotate import annotate_chair, find_contacts
from partforge.assets.types import ChairAsset, Part
from partforge.errors import GenerationFailed
from partforge.geom import Pose6D, TriMesh, box_mesh, cylinder_mesh, recenter_to_com, world_hull
from partforge.geom.collision import hull_distance

MATE_GAP = 0.002
MIN_CLEARANCE = 0.02
MAX_RETRIES = 100

# reorientation ids: canonical +z mapped to +x, -x, +y, -y, +z, -z
UPRIGHT, FLIPPED = 4, 5

PART_COUNTS = {
    "pedestal": (2,),
    "bench": (3,),
    "panel": (4,),
    "four_leg": (5,),
    "four_leg_panel": (6,),
    "posts": (7,),
    "rail": (8,),
    "slats": (9, 10),
}
EASY_LAYOUTS = {"bench": 0.2, "panel": 0.2, "four_leg": 0.6}
HARD_LAYOUTS = {"four_leg_panel": 0.25, "posts": 0.25, "rail": 0.25, "slats": 0.25}
STRETCHER_LAYOUTS = {"four_leg_panel", "posts", "rail", "slats"}


class _Builder:
    def __init__(self):
        self.meshes: list[TriMesh] = []
        self.poses: list[Pose6D] = []
        self.roles: list[str] = []
        self.mates: set[tuple[int, int]] = set()
        self.plan: list[tuple[int, int, int]] = []

    def add(self, role: str, mesh: TriMesh, x: float, y: float, z: float, yaw: float = 0.0) -> int:
        self.meshes.append(mesh)
        self.poses.append(Pose6D(x, y, z, 0.0, 0.0, yaw))
        self.roles.append(role)
        return len(self.meshes) - 1

    def mate(self, a: int, b: int) -> None:
        self.mates.add((min(a, b), max(a, b)))


def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _leg_family(rng, H):
    """Leg mesh plus the distance from its axis to a flat side face."""
    if rng.random() < 0.3:
        r = _u(rng, 0.016, 0.025)
        return cylinder_mesh(r, H), r * np.cos(np.pi / 24)
    s = _u(rng, 0.03, 0.05)
    return box_mesh((s, s, H)), s / 2


def _build(layout: str, n_parts: int, rng) -> _Builder:
    b = _Builder()
    W, D, T = _u(rng, 0.38, 0.50), _u(rng, 0.36, 0.46), _u(rng, 0.025, 0.045)
    H = _u(rng, 0.36, 0.46)
    seat_top = H + MATE_GAP + T
    seat = b.add("seat", box_mesh((W, D, T)), 0.0, 0.0, H + MATE_GAP + T / 2)

    legs: list[int] = []
    if layout == "pedestal":
        c = _u(rng, 0.08, 0.14)
        ped = b.add("pedestal", box_mesh((c, c, H)), 0.0, 0.0, H / 2)
        b.mate(seat, ped)
        b.plan.append((ped, seat, FLIPPED))
        return b
    if layout in ("bench", "panel"):
        ts, inset = _u(rng, 0.02, 0.035), _u(rng, 0.005, 0.03)
        slab = box_mesh((ts, D - 2 * inset, H))
        for sx in (-1.0, 1.0):
            i = b.add("slab", slab, sx * (W / 2 - inset - ts / 2), 0.0, H / 2, 0.0 if sx < 0 else np.pi)
            b.mate(seat, i)
            b.plan.append((i, seat, FLIPPED))
        if layout == "panel":
            b.plan.append((_back_panel(b, rng, W, D, seat_top, seat), seat, UPRIGHT))
        return b

    # four-legged layouts
    extra = n_parts - PART_COUNTS[layout][0] if layout != "slats" else 0
    stretchers = None
    if layout == "slats":
        n_slats = n_parts - 8
        if n_slats > 2:
            stretchers, n_slats = "pending", n_slats - 2
    elif extra == 2:
        stretchers = "pending"
    if stretchers:
        stretchers = "side" if rng.random() < 0.5 else "front"
    leg_mesh, hw = _leg_family(rng, H)
    inset = _u(rng, 0.005, 0.03)
    xl, yl = W / 2 - inset - hw, D / 2 - inset - hw
    corners = [(-1, -1), (1, -1), (-1, 1), (1, 1)]  # FL, FR, BL, BR (front is -y)
    for sx, sy in corners:
        if stretchers == "side":
            yaw = 0.0 if sy < 0 else np.pi
        elif stretchers == "front":
            yaw = 0.0 if sx < 0 else np.pi
        else:
            yaw = 0.0
        legs.append(b.add("leg", leg_mesh, sx * xl, sy * yl, H / 2, yaw))
        b.mate(seat, legs[-1])

    back: list[int] = []
    if layout == "four_leg_panel":
        back.append(_back_panel(b, rng, W, D, seat_top, seat))
    elif layout in ("posts", "rail", "slats"):
        sp, Hp, ip = _u(rng, 0.025, 0.04), _u(rng, 0.30, 0.45), _u(rng, 0.005, 0.02)
        xp, yp = W / 2 - ip - sp / 2, D / 2 - ip - sp / 2
        post_mesh = box_mesh((sp, sp, Hp))
        posts = [b.add("post", post_mesh, sx * xp, yp, seat_top + MATE_GAP + Hp / 2) for sx in (-1.0, 1.0)]
        for p in posts:
            b.mate(seat, p)
        back += posts
        if layout in ("rail", "slats"):
            post_top = seat_top + MATE_GAP + Hp
            ov, hr = _u(rng, 0.0, 0.015), _u(rng, 0.04, 0.07)
            dr = sp + _u(rng, 0.0, 0.01)
            rail = b.add("rail", box_mesh((2 * xp + sp + 2 * ov, dr, hr)), 0.0, yp,
                         post_top + MATE_GAP + hr / 2)
            for p in posts:
                b.mate(rail, p)
            slats = []
            if layout == "slats":
                wx, ds = _u(rng, 0.012, 0.02), sp * _u(rng, 0.5, 0.8)
                slat_mesh = box_mesh((wx, ds, Hp))
                xs = [0.0] if n_slats == 1 else [-xp / 2.2, xp / 2.2]
                for x in xs:
                    slats.append(b.add("slat", slat_mesh, x, yp, seat_top + MATE_GAP + Hp / 2))
                    b.mate(seat, slats[-1])
                    b.mate(rail, slats[-1])
            back += slats + [rail]

    if stretchers:
        q = min(1.2 * hw, 0.025) * _u(rng, 0.7, 1.0)
        hs = _u(rng, 0.08, 0.18)
        if stretchers == "side":
            mesh = box_mesh((q, 2 * (yl - hw) - 2 * MATE_GAP, q))
            pairs = [(legs[0], legs[2], -xl), (legs[1], legs[3], xl)]
            strs = [b.add("stretcher", mesh, x, 0.0, hs) for _, _, x in pairs]
        else:
            mesh = box_mesh((2 * (xl - hw) - 2 * MATE_GAP, q, q))
            pairs = [(legs[0], legs[1], -yl), (legs[2], legs[3], yl)]
            strs = [b.add("stretcher", mesh, 0.0, y, hs) for _, _, y in pairs]
        for s, (la, lb, _) in zip(strs, pairs):
            b.mate(s, la)
            b.mate(s, lb)
            b.plan += [(s, la, UPRIGHT), (lb, s, UPRIGHT)]
        b.plan += [(la, seat, FLIPPED) for la, _, _ in pairs]
    else:
        b.plan += [(leg, seat, FLIPPED) for leg in legs]
    for i in back:
        anchor = seat if b.roles[i] != "rail" else back[0]
        b.plan.append((i, anchor, UPRIGHT))
    return b


def _back_panel(b: _Builder, rng, W, D, seat_top, seat) -> int:
    margin, tp = _u(rng, 0.01, 0.03), _u(rng, 0.015, 0.03)
    Hb, ip = _u(rng, 0.30, 0.45), _u(rng, 0.005, 0.02)
    i = b.add("back_panel", box_mesh((W - 2 * margin, tp, Hb)), 0.0, D / 2 - ip - tp / 2,
              seat_top + MATE_GAP + Hb / 2)
    b.mate(seat, i)
    return i


def _choose_layout(rng, difficulty: str, max_parts: int) -> tuple[str, int]:
    table = EASY_LAYOUTS if difficulty == "easy" else HARD_LAYOUTS
    options = []
    for name, w in table.items():
        counts = list(PART_COUNTS[name])
        if name in STRETCHER_LAYOUTS:
            counts += [c + 2 for c in PART_COUNTS[name]]
        counts = [c for c in counts if c <= max_parts]
        if counts:
            options.append((name, w, counts))
    if not options:
        raise GenerationFailed(f"no {difficulty} layout fits within {max_parts} parts")
    weights = np.array([w for _, w, _ in options])
    name, _, counts = options[int(rng.choice(len(options), p=weights / weights.sum()))]
    return name, int(counts[int(rng.integers(len(counts)))])


def _check_clearances(meshes, poses, mates) -> bool:
    hulls = [world_hull(m, p) for m, p in zip(meshes, poses)]
    for a, b in itertools.combinations(range(len(hulls)), 2):
        d = hull_distance(hulls[a], hulls[b])[0]
        if (a, b) in mates:
            if not (1e-4 < d < 0.005):
                return False
        elif d <= MIN_CLEARANCE:
            return False
    return True


def generate_chair(seed: int, difficulty: str = "easy", *, layout: str | None = None,
                   max_parts: int = 12, chair_id: int | None = None) -> ChairAsset:
    """Build, verify and annotate one chair; deterministic per arguments."""
    if difficulty not in ("easy", "hard"):
        raise ValueError(f"difficulty must be 'easy' or 'hard', got {difficulty!r}")
    if layout is not None and layout not in PART_COUNTS:
        raise ValueError(f"unknown layout {layout!r}")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RETRIES):
        if layout is None:
            name, n_parts = _choose_layout(rng, difficulty, max_parts)
        else:
            name, n_parts = layout, PART_COUNTS[layout][0]
        b = _build(name, n_parts, rng)
        meshes, poses = _recentered(b)
        if _check_clearances(meshes, poses, b.mates):
            break
    else:
        raise GenerationFailed(f"seed {seed}: no valid sizing after {MAX_RETRIES} retries")

    parts = tuple(Part(i, m) for i, m in enumerate(meshes))
    chair = ChairAsset(id=seed if chair_id is None else chair_id, parts=parts, gt_poses=tuple(poses),
                       difficulty=difficulty, layout=name, intended_pairs=frozenset(b.mates))
    chair = annotate_chair(chair)
    if chair.adjacent_part_pairs() != set(b.mates):
        raise GenerationFailed(f"seed {seed}: annotation disagrees with intended adjacency")
    return dataclasses.replace(chair, assembly_order=tuple(_plan_actions(chair, b.plan)))


def _recentered(b: _Builder):
    cache: dict[int, tuple[TriMesh, np.ndarray]] = {}
    meshes, poses = [], []
    for mesh, pose in zip(b.meshes, b.poses):
        if id(mesh) not in cache:
            cache[id(mesh)] = recenter_to_com(mesh)
        local, offset = cache[id(mesh)]
        t = pose.translation + pose.rotation @ offset
        meshes.append(local)
        poses.append(Pose6D(t[0], t[1], t[2], pose.rx, pose.ry, pose.rz))
    return meshes, poses


def _plan_actions(chair: ChairAsset, plan):
    actions = []
    for u, v, w in plan:
        k = next(i for i, c in enumerate(chair.parts[u].connections) if c.mate_part == v)
        actions.append((u, v, k, chair.parts[u].connections[k].mate_connection, w))
    return actions


def intended_adjacency_holds(chair: ChairAsset) -> bool:
    """Re-detect contacts and compare with the generator's intended pairs."""
    found = {(a, b) for a, b, *_ in find_contacts(chair)}
    return found == set(chair.intended_pairs)
