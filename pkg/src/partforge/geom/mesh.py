"""Triangle meshes, convex hulls, point clouds and OBJ I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull as _QHull
from scipy.spatial import QhullError

from partforge.errors import DegenerateGeometry

HULL_TOL = 1e-9
CYLINDER_SEGMENTS = 24


def _fmt(x: float) -> str:
    s = f"{x:.9g}"
    return "0" if s == "-0" else s


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite vertex")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def triangle_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def volume(self) -> float:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def centroid(self) -> np.ndarray:
        """Volume-weighted centroid of a closed, outward-oriented mesh."""
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        vol6 = np.einsum("ij,ij->i", a, np.cross(b, c))
        total = vol6.sum()
        if abs(total) < 1e-15:
            raise DegenerateGeometry("mesh encloses zero volume")
        return ((a + b + c) * vol6[:, None]).sum(axis=0) / (4.0 * total)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def translated(self, offset) -> TriMesh:
        return TriMesh(self.vertices + np.asarray(offset, float), self.triangles)

    def transformed(self, pose) -> TriMesh:
        return TriMesh(self.vertices @ pose.rotation.T + pose.translation, self.triangles)

    def is_watertight(self) -> bool:
        edges = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                                self.triangles[:, [2, 0]]])
        directed = {tuple(e) for e in edges.tolist()}
        return all((b, a) in directed for a, b in directed) and len(directed) == len(edges)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.points, dtype=float).reshape(-1, 3)
        if len(p) == 0:
            raise ValueError("empty point cloud")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite point")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class ConvexHull:
    """Hull vertices plus outward face planes ``normals @ x + offsets <= 0``."""

    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    faces: np.ndarray = field(repr=False)

    def contains(self, points, tol: float = HULL_TOL) -> np.ndarray:
        pts = np.asarray(points, float).reshape(-1, 3)
        return np.all(pts @ self.normals.T + self.offsets <= tol, axis=1)


def convex_hull(mesh_or_points) -> ConvexHull:
    pts = getattr(mesh_or_points, "vertices", mesh_or_points)
    pts = np.asarray(pts, float).reshape(-1, 3)
    if len(pts) < 4:
        raise DegenerateGeometry("need at least 4 points for a 3D hull")
    try:
        qh = _QHull(pts)
    except QhullError as exc:
        raise DegenerateGeometry(f"coplanar or collinear input: {exc}") from None
    verts = pts[qh.vertices]
    remap = {int(old): new for new, old in enumerate(qh.vertices)}
    faces = np.array([[remap[int(i)] for i in s] for s in qh.simplices])
    normals, offsets = qh.equations[:, :3], qh.equations[:, 3]
    return ConvexHull(verts, normals, offsets, faces)


def hull_mesh(hull: ConvexHull) -> TriMesh:
    """Outward-oriented triangulation of a hull."""
    faces = hull.faces.copy()
    v = hull.vertices
    for i, (a, b, c) in enumerate(faces):
        if np.dot(np.cross(v[b] - v[a], v[c] - v[a]), hull.normals[i]) < 0:
            faces[i] = (a, c, b)
    return TriMesh(v, faces)


def sample_point_cloud(mesh: TriMesh, m: int, seed: int) -> PointCloud:
    """Area-weighted uniform surface samples, deterministic per seed."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    tri = rng.choice(len(areas), size=m, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(m))
    r2 = rng.random(m)
    a, b, c = (mesh.vertices[mesh.triangles[tri, i]] for i in range(3))
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return PointCloud(pts)


def recenter_to_com(mesh: TriMesh) -> tuple[TriMesh, np.ndarray]:
    """Shift ``mesh`` so its volume centroid sits at the origin.

    Returns the shifted mesh and the offset that was removed, so that
    ``world = local + offset`` for an unrotated part.
    """
    if mesh.volume() <= 1e-15:
        raise DegenerateGeometry("mesh encloses zero volume")
    offset = mesh.centroid()
    return mesh.translated(-offset), offset


# -- primitive builders -------------------------------------------------------

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # -z
    [4, 5, 6], [4, 6, 7],  # +z
    [0, 1, 5], [0, 5, 4],  # -y
    [2, 3, 7], [2, 7, 6],  # +y
    [1, 2, 6], [1, 6, 5],  # +x
    [3, 0, 4], [3, 4, 7],  # -x
])


def box_mesh(extents, center=(0.0, 0.0, 0.0)) -> TriMesh:
    hx, hy, hz = (0.5 * float(e) for e in extents)
    v = np.array([[-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
                  [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz]])
    return TriMesh(v + np.asarray(center, float), _BOX_FACES)


def cylinder_mesh(radius: float, height: float, segments: int = CYLINDER_SEGMENTS) -> TriMesh:
    """z-aligned prism; half-step phase puts flat faces on the +-x and +-y sides."""
    ang = (np.arange(segments) + 0.5) * 2 * np.pi / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    h = 0.5 * height
    v = np.vstack([np.c_[ring, np.full(segments, -h)], np.c_[ring, np.full(segments, h)],
                   [[0, 0, -h], [0, 0, h]]])
    bot, top = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [[i, j, segments + j], [i, segments + j, segments + i],
                 [bot, j, i], [top, segments + i, segments + j]]
    return TriMesh(v, np.array(tris))


def merge_meshes(meshes) -> TriMesh:
    verts, tris, base = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + base)
        base += len(m.vertices)
    return TriMesh(np.vstack(verts), np.vstack(tris))


# -- OBJ ---------------------------------------------------------------------

def obj_text(mesh: TriMesh) -> str:
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    return "\n".join(lines) + "\n"


def save_obj(mesh: TriMesh, path) -> None:
    Path(path).write_text(obj_text(mesh))


def parse_obj(text: str) -> TriMesh:
    """Read ``v``/``f`` records; polygons are fan-triangulated, other records skipped."""
    verts, tris = [], []
    for raw in text.splitlines():
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):
                tris.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh(np.array(verts, float), np.array(tris, np.int64))


def load_obj(path) -> TriMesh:
    return parse_obj(Path(path).read_text())
