import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cube_surface_grid, point_in_hull_lp, sat_box_separation
from partforge.errors import DegenerateGeometry
from partforge.geom import (
    PointCloud,
    Pose6D,
    TriMesh,
    box_mesh,
    collide,
    compose,
    convex_hull,
    cylinder_mesh,
    invert,
    load_obj,
    merge_meshes,
    min_distance,
    recenter_to_com,
    sample_point_cloud,
    save_obj,
    transform_points,
)
from partforge.geom.pose import pose_close

finite = st.floats(-5, 5, allow_nan=False)
angle = st.floats(-np.pi, np.pi, allow_nan=False)
# ry kept away from gimbal lock so the Euler triple is canonical
pitch = st.floats(-1.5, 1.5, allow_nan=False)
poses = st.builds(Pose6D, finite, finite, finite, angle, pitch, angle)

IDENT = Pose6D()
CUBE = box_mesh((1, 1, 1))


def _as_array(p):
    return np.abs(p.as_array())


# -- pose algebra ---------------------------------------------------------------

def test_identity_compose():
    p = Pose6D(1, 2, 3, 0.1, -0.2, 0.3)
    assert pose_close(compose(IDENT, p), p)
    assert pose_close(compose(p, IDENT), p)


def test_compose_with_inverse_is_identity():
    p = Pose6D(1, -2, 0.5, 0.4, 1.1, -2.9)
    assert np.all(_as_array(compose(p, invert(p))) < 1e-9)


def test_translations_compose():
    r = compose(Pose6D(1, 0, 0), Pose6D(0, 2, 0))
    np.testing.assert_allclose(r.as_array(), [1, 2, 0, 0, 0, 0], atol=1e-12)


def test_invert_examples():
    assert np.all(_as_array(invert(IDENT)) < 1e-15)
    np.testing.assert_allclose(invert(Pose6D(3, 0, 0)).as_array(), [-3, 0, 0, 0, 0, 0], atol=1e-12)


def test_invert_matches_matrix_inverse():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = Pose6D(*rng.uniform(-2, 2, 3), *rng.uniform(-3, 3, 3))
        q = invert(p)
        np.testing.assert_allclose(q.as_homogeneous(), np.linalg.inv(p.as_homogeneous()), atol=1e-9)


def test_angles_wrapped():
    p = Pose6D(0, 0, 0, 3 * np.pi, -np.pi, 2 * np.pi + 0.1)
    assert p.rx == pytest.approx(np.pi)
    assert p.ry == pytest.approx(np.pi)
    assert p.rz == pytest.approx(0.1)
    with pytest.raises(ValueError):
        Pose6D(np.nan)


@settings(max_examples=200, deadline=None)
@given(poses, poses, poses)
def test_compose_associative(a, b, c):
    assert pose_close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9)


@settings(max_examples=200, deadline=None)
@given(poses)
def test_invert_involution(p):
    q = invert(invert(p))
    np.testing.assert_allclose(q.as_array(), p.as_array(), atol=1e-9)


def test_transform_points_examples():
    pts = np.array([[0.3, -1.0, 2.0], [1, 1, 1]])
    np.testing.assert_allclose(transform_points(IDENT, pts), pts)
    np.testing.assert_allclose(transform_points(Pose6D(0, 0, 1), [[0, 0, 0]]), [[0, 0, 1]])
    np.testing.assert_allclose(transform_points(Pose6D(rz=np.pi / 2), [[1, 0, 0]]),
                               [[0, 1, 0]], atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(poses)
def test_transform_preserves_distances(p):
    pts = np.random.default_rng(0).normal(size=(12, 3))
    out = transform_points(p, PointCloud(pts))
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-9)


# -- meshes and hulls ---------------------------------------------------------------

def test_primitives_are_closed():
    for m in (CUBE, box_mesh((0.2, 0.5, 0.03)), cylinder_mesh(0.02, 0.4)):
        assert m.is_watertight()
        assert m.volume() > 0
        assert m.triangle_areas().min() > 1e-12
    assert len(cylinder_mesh(0.1, 1).vertices) == 2 * 24 + 2


def test_convex_hull_examples():
    assert len(convex_hull(CUBE).vertices) == 8
    pts = np.vstack([CUBE.vertices, [[0.1, 0.0, -0.2]]])
    assert len(convex_hull(pts).vertices) == 8
    with pytest.raises(DegenerateGeometry):
        convex_hull(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]]))


def test_convex_hull_contains_random_points():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(50, 3))
    hull = convex_hull(pts)
    assert hull.contains(pts).all()
    for q in pts:
        assert point_in_hull_lp(hull.vertices, q)
    # a point outside every input is rejected by both
    far = pts.max(axis=0) + 1.0
    assert not hull.contains(far)[0]
    assert not point_in_hull_lp(hull.vertices, far)


def test_obj_round_trip(tmp_path):
    mesh = merge_meshes([box_mesh((1, 2, 3)), cylinder_mesh(0.3, 1.0).translated((3, 0, 0))])
    save_obj(mesh, tmp_path / "m.obj")
    back = load_obj(tmp_path / "m.obj")
    assert len(back.vertices) == len(mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    np.testing.assert_allclose(back.vertices, mesh.vertices, rtol=1e-8)


def test_obj_quads_are_triangulated(tmp_path):
    (tmp_path / "q.obj").write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n")
    mesh = load_obj(tmp_path / "q.obj")
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_trimesh_rejects_bad_index():
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])


# -- recentering -----------------------------------------------------------------

def test_recenter_examples():
    mesh, off = recenter_to_com(box_mesh((1, 1, 1), center=(1, 2, 3)))
    np.testing.assert_allclose(off, [1, 2, 3], atol=1e-12)
    np.testing.assert_allclose(mesh.centroid(), 0, atol=1e-12)
    _, off = recenter_to_com(CUBE)
    np.testing.assert_allclose(off, 0, atol=1e-12)


def test_recenter_l_shape_matches_voxel_integral():
    # two boxes sharing part of the plane z=0.15 form an L in the xz-plane
    a = box_mesh((1.0, 0.4, 0.3), center=(0.0, 0.0, 0.0))
    b = box_mesh((0.3, 0.4, 1.0), center=(0.35, 0.0, 0.65))
    mesh, off = recenter_to_com(merge_meshes([a, b]))
    h = 0.005  # voxel edge; box faces fall on voxel boundaries
    xs = -0.6 + (np.arange(240) + 0.5) * h
    zs = -0.3 + (np.arange(300) + 0.5) * h
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    inside = ((np.abs(X) <= 0.5) & (np.abs(Z) <= 0.15)) | (
        (np.abs(X - 0.35) <= 0.15) & (np.abs(Z - 0.65) <= 0.5))
    oracle = np.array([X[inside].mean(), 0.0, Z[inside].mean()])
    np.testing.assert_allclose(off, oracle, atol=1e-4)
    np.testing.assert_allclose(mesh.centroid(), 0, atol=1e-6)


def test_recenter_flat_mesh_raises():
    flat = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    with pytest.raises(DegenerateGeometry):
        recenter_to_com(flat)


# -- sampling ----------------------------------------------------------------------

def test_single_sample_lies_on_surface():
    mesh = cylinder_mesh(0.1, 0.5)
    p = sample_point_cloud(mesh, 1, seed=5).points[0]
    a, b, c = (mesh.vertices[mesh.triangles[:, i]] for i in range(3))
    n = mesh.triangle_normals()
    dist = np.abs(np.einsum("ij,ij->i", p - a, n))
    assert dist.min() < 1e-9


def test_sampling_deterministic():
    a = sample_point_cloud(CUBE, 100, seed=11).points
    b = sample_point_cloud(CUBE, 100, seed=11).points
    np.testing.assert_array_equal(a, b)


def test_sampling_is_area_weighted():
    pts = sample_point_cloud(CUBE, 60_000, seed=2).points
    axis = np.argmax(np.abs(pts), axis=1)
    face = 2 * axis + (pts[np.arange(len(pts)), axis] > 0)
    frac = np.bincount(face, minlength=6) / len(pts)
    assert np.all(np.abs(frac - 1 / 6) < 0.01)


# -- distance and collision -------------------------------------------------------

def test_min_distance_examples():
    assert min_distance(CUBE, IDENT, CUBE, Pose6D(3, 0, 0))[0] == pytest.approx(2.0, abs=1e-12)
    assert min_distance(CUBE, IDENT, CUBE, Pose6D(1, 0, 0))[0] == pytest.approx(0.0, abs=1e-12)


def test_min_distance_matches_dense_sampling():
    d, wa, wb = min_distance(CUBE, IDENT, CUBE, Pose6D(2, 2, 0))
    a = cube_surface_grid(13)
    b = cube_surface_grid(13, center=(2, 2, 0))
    assert len(a) * len(b) >= 100_000
    brute = np.min(np.linalg.norm(a[:, None] - b[None], axis=-1))
    assert abs(d - brute) < 1e-3
    assert np.linalg.norm(wa - wb) == pytest.approx(d)


def test_min_distance_witnesses_lie_on_hulls():
    pb = Pose6D(0.3, 1.7, -0.2, 0.5, 0.2, 1.0)
    d, wa, wb = min_distance(CUBE, IDENT, CUBE, pb)
    assert np.max(np.abs(wa)) == pytest.approx(0.5, abs=1e-9)
    local_b = transform_points(invert(pb), [wb])[0]
    assert np.max(np.abs(local_b)) == pytest.approx(0.5, abs=1e-9)


def test_collide_examples():
    assert not collide(CUBE, IDENT, CUBE, Pose6D(3, 0, 0))
    assert collide(CUBE, IDENT, CUBE, Pose6D(0.5, 0, 0))


def _random_box_pair(rng):
    ha, hb = rng.uniform(0.05, 0.5, 3), rng.uniform(0.05, 0.5, 3)
    pa = Pose6D(*rng.uniform(-0.6, 0.6, 3), *rng.uniform(-np.pi, np.pi, 3))
    pb = Pose6D(*rng.uniform(-0.6, 0.6, 3), *rng.uniform(-np.pi, np.pi, 3))
    return ha, hb, pa, pb


def test_min_distance_symmetric_and_consistent():
    rng = np.random.default_rng(42)
    for _ in range(500):
        ha, hb, pa, pb = _random_box_pair(rng)
        A, B = box_mesh(2 * ha), box_mesh(2 * hb)
        dab = min_distance(A, pa, B, pb)
        dba = min_distance(B, pb, A, pa)
        assert dab[0] == dba[0]
        np.testing.assert_array_equal(dab[1], dba[2])
        assert collide(A, pa, B, pb) == (dab[0] <= 1e-6)


def test_collide_agrees_with_sat_sample():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        ha, hb, pa, pb = _random_box_pair(rng)
        s = sat_box_separation(pa.translation, pa.rotation, ha, pb.translation, pb.rotation, hb)
        if abs(s) <= 1e-6:
            continue
        assert collide(box_mesh(2 * ha), pa, box_mesh(2 * hb), pb) == (s < 0)


def test_distance_lower_bounded_by_sat():
    rng = np.random.default_rng(10)
    for _ in range(300):
        ha, hb, pa, pb = _random_box_pair(rng)
        s = sat_box_separation(pa.translation, pa.rotation, ha, pb.translation, pb.rotation, hb)
        d = min_distance(box_mesh(2 * ha), pa, box_mesh(2 * hb), pb)[0]
        assert d >= s - 1e-9
