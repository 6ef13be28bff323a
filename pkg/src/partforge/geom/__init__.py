"""Rigid transforms, meshes, hulls and convex proximity queries."""
from partforge.geom.collision import (
    CONTACT_TOL,
    collide,
    contact_normal,
    contact_patch,
    hull_distance,
    hull_vertices,
    min_distance,
    world_hull,
)
from partforge.geom.mesh import (
    ConvexHull,
    PointCloud,
    TriMesh,
    box_mesh,
    convex_hull,
    cylinder_mesh,
    load_obj,
    merge_meshes,
    parse_obj,
    recenter_to_com,
    sample_point_cloud,
    save_obj,
)
from partforge.geom.pose import Pose6D, compose, invert, relative, transform_points

__all__ = [
    "CONTACT_TOL", "ConvexHull", "PointCloud", "Pose6D", "TriMesh", "box_mesh", "collide",
    "compose", "contact_normal", "contact_patch", "convex_hull", "cylinder_mesh",
    "hull_distance", "hull_vertices", "invert", "load_obj", "merge_meshes", "min_distance",
    "parse_obj", "recenter_to_com", "relative", "sample_point_cloud", "save_obj",
    "transform_points", "world_hull",
]
