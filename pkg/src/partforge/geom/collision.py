"""Convex distance and collision queries (GJK over hull vertex sets).

Penetrating pairs report distance 0; no penetration depth is computed.
The numba kernels operate on world-space vertex arrays so planners can
batch many configurations per call.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from partforge.geom.mesh import TriMesh, convex_hull
from partforge.geom.pose import Pose6D

CONTACT_TOL = 1e-6
_MAX_ITER = 96


@njit(cache=True)
def _support(verts, dx, dy, dz):
    best = 0
    bv = verts[0, 0] * dx + verts[0, 1] * dy + verts[0, 2] * dz
    for i in range(1, verts.shape[0]):
        val = verts[i, 0] * dx + verts[i, 1] * dy + verts[i, 2] * dz
        if val > bv:
            bv = val
            best = i
    return best


@njit(cache=True)
def _solve_small(G, rhs, m, mu):
    """Solve the m x m (m <= 3) system G mu = rhs; False if near-singular."""
    if m == 1:
        if G[0, 0] <= 0.0:
            return False
        mu[0] = rhs[0] / G[0, 0]
        return True
    if m == 2:
        det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
        if abs(det) <= 1e-12 * G[0, 0] * G[1, 1]:
            return False
        mu[0] = (rhs[0] * G[1, 1] - G[0, 1] * rhs[1]) / det
        mu[1] = (G[0, 0] * rhs[1] - rhs[0] * G[1, 0]) / det
        return True
    c00 = G[1, 1] * G[2, 2] - G[1, 2] * G[2, 1]
    c01 = G[1, 2] * G[2, 0] - G[1, 0] * G[2, 2]
    c02 = G[1, 0] * G[2, 1] - G[1, 1] * G[2, 0]
    det = G[0, 0] * c00 + G[0, 1] * c01 + G[0, 2] * c02
    if abs(det) <= 1e-12 * G[0, 0] * G[1, 1] * G[2, 2]:
        return False
    c10 = G[0, 2] * G[2, 1] - G[0, 1] * G[2, 2]
    c11 = G[0, 0] * G[2, 2] - G[0, 2] * G[2, 0]
    c12 = G[0, 1] * G[2, 0] - G[0, 0] * G[2, 1]
    c20 = G[0, 1] * G[1, 2] - G[0, 2] * G[1, 1]
    c21 = G[0, 2] * G[1, 0] - G[0, 0] * G[1, 2]
    c22 = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    mu[0] = (c00 * rhs[0] + c10 * rhs[1] + c20 * rhs[2]) / det
    mu[1] = (c01 * rhs[0] + c11 * rhs[1] + c21 * rhs[2]) / det
    mu[2] = (c02 * rhs[0] + c12 * rhs[1] + c22 * rhs[2]) / det
    return True


@njit(cache=True)
def _closest_on_simplex(W, n, lam_out, best):
    """Closest point of conv(W[:n]) to the origin, written into ``best``.

    Brute force over sub-simplices: the answer is the smallest affine
    minimiser with strictly positive barycentric weights. Returns the
    subset bit mask; ``lam_out`` receives weights indexed like ``W``.
    """
    best_d = np.inf
    best_mask = 0
    idx = np.empty(4, np.int64)
    E = np.empty((3, 3))
    G = np.empty((3, 3))
    rhs = np.empty(3)
    mu = np.empty(3)
    x = np.empty(3)
    for mask in range(1, 1 << n):
        k = 0
        for i in range(n):
            if mask & (1 << i):
                idx[k] = i
                k += 1
        i0 = idx[0]
        m = k - 1
        s = 0.0
        if m == 0:
            x[0] = W[i0, 0]
            x[1] = W[i0, 1]
            x[2] = W[i0, 2]
        else:
            for a in range(m):
                for c in range(3):
                    E[a, c] = W[idx[a + 1], c] - W[i0, c]
            for a in range(m):
                rhs[a] = -(E[a, 0] * W[i0, 0] + E[a, 1] * W[i0, 1] + E[a, 2] * W[i0, 2])
                for b in range(m):
                    G[a, b] = E[a, 0] * E[b, 0] + E[a, 1] * E[b, 1] + E[a, 2] * E[b, 2]
            if not _solve_small(G, rhs, m, mu):
                continue
            ok = True
            for a in range(m):
                s += mu[a]
                if mu[a] <= 0.0:
                    ok = False
            if not ok or 1.0 - s <= 0.0:
                continue
            for c in range(3):
                x[c] = W[i0, c]
                for a in range(m):
                    x[c] += mu[a] * E[a, c]
        d = x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
        if d < best_d - 1e-30:
            best_d = d
            best_mask = mask
            best[0] = x[0]
            best[1] = x[1]
            best[2] = x[2]
            for i in range(4):
                lam_out[i] = 0.0
            lam_out[i0] = 1.0 - s
            for a in range(m):
                lam_out[idx[a + 1]] = mu[a]
    return best_mask


@njit(cache=True)
def gjk_distance(va, vb, early_sep):
    """Distance between conv(va) and conv(vb) with witness points.

    If ``early_sep >= 0`` the search stops as soon as the pair is proven
    farther apart than ``early_sep``; the returned distance is then a lower
    bound and the witnesses are approximate.
    Returns (distance, witness_a, witness_b).
    """
    W = np.zeros((4, 3))
    IA = np.zeros(4, np.int64)
    IB = np.zeros(4, np.int64)
    lam = np.zeros(4)
    lam_new = np.zeros(4)
    x = np.zeros(3)
    n = 0
    v = np.empty(3)
    for c in range(3):
        v[c] = va[0, c] - vb[0, c]
    wa = va[0].copy()
    wb = vb[0].copy()
    lam[0] = 1.0
    first = True
    for _ in range(_MAX_ITER):
        vv = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        if vv <= 1e-26:
            return 0.0, wa, wb
        ia = _support(va, -v[0], -v[1], -v[2])
        ib = _support(vb, v[0], v[1], v[2])
        w0 = va[ia, 0] - vb[ib, 0]
        w1 = va[ia, 1] - vb[ib, 1]
        w2 = va[ia, 2] - vb[ib, 2]
        vw = v[0] * w0 + v[1] * w1 + v[2] * w2
        if early_sep >= 0.0 and vw > 0.0 and vw * vw > early_sep * early_sep * vv:
            return np.sqrt(vw * vw / vv), wa, wb
        if not first and vv - vw <= 1e-13 * vv + 1e-30:
            break
        dup = False
        for i in range(n):
            if IA[i] == ia and IB[i] == ib:
                dup = True
        if dup:
            break
        first = False
        W[n, 0] = w0
        W[n, 1] = w1
        W[n, 2] = w2
        IA[n] = ia
        IB[n] = ib
        n += 1
        mask = _closest_on_simplex(W, n, lam_new, x)
        xx = x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
        if xx >= vv and n > 1:
            # no progress: keep the previous simplex
            n -= 1
            break
        k = 0
        for i in range(n):
            if mask & (1 << i):
                W[k] = W[i]
                IA[k] = IA[i]
                IB[k] = IB[i]
                lam[k] = lam_new[i]
                k += 1
        n = k
        v[0] = x[0]
        v[1] = x[1]
        v[2] = x[2]
        wa[:] = 0.0
        wb[:] = 0.0
        for i in range(n):
            for c in range(3):
                wa[c] += lam[i] * va[IA[i], c]
                wb[c] += lam[i] * vb[IB[i], c]
        if n == 4:
            return 0.0, wa, wb
    d = np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    return d, wa, wb


@njit(cache=True)
def gjk_collide(va, vb, tol):
    d, _, _ = gjk_distance(va, vb, tol)
    return d <= tol


@njit(cache=True)
def _aabb(verts, lo, hi):
    for c in range(3):
        lo[c] = verts[0, c]
        hi[c] = verts[0, c]
    for i in range(1, verts.shape[0]):
        for c in range(3):
            x = verts[i, c]
            if x < lo[c]:
                lo[c] = x
            if x > hi[c]:
                hi[c] = x


@njit(cache=True)
def _aabb_apart(lo_a, hi_a, lo_b, hi_b, tol):
    for c in range(3):
        if lo_a[c] > hi_b[c] + tol or lo_b[c] > hi_a[c] + tol:
            return True
    return False


@njit(cache=True)
def first_invalid_config(Rs, ts, piece_body, piece_ptr, local_verts,
                         static_ptr, static_verts, check_body_pairs, tol, check_ground):
    """Index of the first configuration in a batch that collides, else -1.

    Rs: (N, B, 3, 3), ts: (N, B, 3) body transforms per configuration.
    Moving piece p belongs to body ``piece_body[p]`` and owns vertex rows
    ``piece_ptr[p]:piece_ptr[p+1]`` of ``local_verts`` (body frame).
    Static pieces are given in world coordinates.
    """
    N = Rs.shape[0]
    P = piece_body.shape[0]
    S = static_ptr.shape[0] - 1
    world = np.empty_like(local_verts)
    lo = np.empty((P, 3))
    hi = np.empty((P, 3))
    slo = np.empty((S, 3))
    shi = np.empty((S, 3))
    for s in range(S):
        _aabb(static_verts[static_ptr[s]:static_ptr[s + 1]], slo[s], shi[s])
    for n in range(N):
        for p in range(P):
            b = piece_body[p]
            R = Rs[n, b]
            t = ts[n, b]
            for i in range(piece_ptr[p], piece_ptr[p + 1]):
                x = local_verts[i, 0]
                y = local_verts[i, 1]
                z = local_verts[i, 2]
                for c in range(3):
                    world[i, c] = R[c, 0] * x + R[c, 1] * y + R[c, 2] * z + t[c]
            _aabb(world[piece_ptr[p]:piece_ptr[p + 1]], lo[p], hi[p])
        bad = False
        if check_ground:
            for p in range(P):
                if lo[p, 2] < -tol:
                    bad = True
                    break
        if not bad:
            for p in range(P):
                wp = world[piece_ptr[p]:piece_ptr[p + 1]]
                for s in range(S):
                    if _aabb_apart(lo[p], hi[p], slo[s], shi[s], tol):
                        continue
                    if gjk_collide(wp, static_verts[static_ptr[s]:static_ptr[s + 1]], tol):
                        bad = True
                        break
                if bad:
                    break
        if not bad and check_body_pairs:
            for p in range(P):
                wp = world[piece_ptr[p]:piece_ptr[p + 1]]
                for q in range(p + 1, P):
                    if piece_body[p] == piece_body[q]:
                        continue
                    if _aabb_apart(lo[p], hi[p], lo[q], hi[q], tol):
                        continue
                    if gjk_collide(wp, world[piece_ptr[q]:piece_ptr[q + 1]], tol):
                        bad = True
                        break
                if bad:
                    break
        if bad:
            return n
    return -1


# -- mesh-level API -------------------------------------------------------------

def hull_vertices(mesh: TriMesh) -> np.ndarray:
    """Hull vertex array of ``mesh`` (cached on the mesh object)."""
    cached = mesh.__dict__.get("_hull_vertices")
    if cached is None:
        cached = np.ascontiguousarray(convex_hull(mesh).vertices)
        cached.setflags(write=False)
        object.__setattr__(mesh, "_hull_vertices", cached)
    return cached


def world_hull(mesh: TriMesh, pose: Pose6D) -> np.ndarray:
    return np.ascontiguousarray(hull_vertices(mesh) @ pose.rotation.T + pose.translation)


def hull_distance(va: np.ndarray, vb: np.ndarray):
    """Symmetric distance between two world-space vertex sets.

    Arguments are put in a canonical order first so that swapping them
    returns exactly the same distance with swapped witnesses.
    """
    va = np.ascontiguousarray(va, dtype=float)
    vb = np.ascontiguousarray(vb, dtype=float)
    if va.tobytes() > vb.tobytes():
        d, wb, wa = gjk_distance(vb, va, -1.0)
    else:
        d, wa, wb = gjk_distance(va, vb, -1.0)
    return float(d), wa, wb


def min_distance(a: TriMesh, pa: Pose6D, b: TriMesh, pb: Pose6D):
    """Gap between the convex hulls of two posed meshes.

    Returns ``(distance, witness_a, witness_b)``; distance is 0 when the
    hulls touch or overlap.
    """
    return hull_distance(world_hull(a, pa), world_hull(b, pb))


def collide(a: TriMesh, pa: Pose6D, b: TriMesh, pb: Pose6D, tol: float = CONTACT_TOL) -> bool:
    return min_distance(a, pa, b, pb)[0] <= tol


def contact_normal(va: np.ndarray, vb: np.ndarray) -> np.ndarray:
    """Unit normal pointing from hull ``va`` toward hull ``vb``.

    Used when the hulls touch and the witness points coincide: picks the
    hull face normal (of either body) along which the pair is least
    overlapping.
    """
    best, best_n = -np.inf, None
    for verts, other, sign in ((va, vb, 1.0), (vb, va, -1.0)):
        hull = convex_hull(verts)
        for n in hull.normals:
            # separation of `other` beyond this face of `verts`
            sep = np.min(other @ n) - np.max(verts @ n)
            if sep > best + 1e-12:
                best, best_n = sep, sign * n
    return best_n / np.linalg.norm(best_n)


def contact_patch(va: np.ndarray, vb: np.ndarray, normal: np.ndarray, tol: float = 1e-7):
    """Centers of the touching features of two nearly-touching hulls.

    Projects the supporting features of each hull along ``normal`` onto a
    common plane, intersects them and lifts the centroid of the overlap
    back onto each hull. Returns None when the features do not overlap.
    """
    from shapely.geometry import MultiPoint

    n = normal / np.linalg.norm(normal)
    e = np.eye(3)[int(np.argmin(np.abs(n)))]
    t1 = np.cross(n, e)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    ha = va @ n
    hb = vb @ n
    feat_a = va[ha >= ha.max() - tol]
    feat_b = vb[hb <= hb.min() + tol]
    pa = MultiPoint([tuple(p) for p in np.c_[feat_a @ t1, feat_a @ t2]]).convex_hull
    pb = MultiPoint([tuple(p) for p in np.c_[feat_b @ t1, feat_b @ t2]]).convex_hull
    inter = pa.intersection(pb)
    if inter.is_empty:
        return None
    c = inter.centroid
    u, w = c.x, c.y
    level_a = float(np.mean(feat_a @ n))
    level_b = float(np.mean(feat_b @ n))
    return u * t1 + w * t2 + level_a * n, u * t1 + w * t2 + level_b * n
