"""Brute-force ray casting against every triangle (Moller-Trumbore).

Slow but simple; used to cross-check the rasteriser and to count occluded
pixels when generating scenes.
"""

import numpy as np

from .geometry import CameraView, TriMesh


def ray_triangle_hits(origins, dirs, tri, eps=1e-12):
    """Ray parameters ``t`` for every (ray, triangle) pair; ``inf`` on a miss.

    origins, dirs: (R, 3); tri: (F, 3, 3).  Returns (R, F).
    """
    v0 = tri[:, 0]
    e1 = tri[:, 1] - v0
    e2 = tri[:, 2] - v0
    p = np.cross(dirs[:, None, :], e2[None])                 # (R, F, 3)
    det = np.einsum("rfk,fk->rf", p, e1)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origins[:, None, :] - v0[None]
    u = np.einsum("rfk,rfk->rf", s, p) * inv
    q = np.cross(s, e1[None])
    w = np.einsum("rk,rfk->rf", dirs, q) * inv
    t = np.einsum("fk,rfk->rf", e2, q) * inv
    hit = ok & (u >= 0) & (w >= 0) & (u + w <= 1) & (t > eps)
    return np.where(hit, t, np.inf)


def _tile_candidates(tri, camera: CameraView, x0, x1, y0, y1):
    """Triangles whose projected bounding box can touch pixel centres in the tile.

    Triangles reaching behind the camera are always kept.  This is only a cull;
    every candidate is still intersected exactly.
    """
    pc = tri @ camera.rotation.T + camera.translation
    z = pc[..., 2]
    behind = (z <= 1e-9).any(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * pc[..., 0] / z + camera.cx
        v = camera.fy * pc[..., 1] / z + camera.cy
    overlap = ((u.min(axis=1) <= x1 + 0.5) & (u.max(axis=1) >= x0 + 0.5)
               & (v.min(axis=1) <= y1 + 0.5) & (v.max(axis=1) >= y0 + 0.5))
    return np.flatnonzero(behind | overlap)


def raycast_depth(mesh: TriMesh, camera: CameraView, tile: int = 16):
    """Nearest hit per pixel centre as ``(depth, face_id)``.

    Ray directions have unit camera-frame z, so ``t`` is the depth.  Exact
    ties go to the lower face index.
    """
    H, W = camera.height, camera.width
    rays = camera.pixel_rays()
    tri = mesh.vertices[mesh.faces]
    depth = np.full((H, W), np.inf)
    fid = np.full((H, W), -1, dtype=np.int64)
    origin = camera.center
    for y0 in range(0, H, tile):
        for x0 in range(0, W, tile):
            y1, x1 = min(y0 + tile, H) - 1, min(x0 + tile, W) - 1
            cand = _tile_candidates(tri, camera, x0, x1, y0, y1)
            if len(cand) == 0:
                continue
            d = rays[y0:y1 + 1, x0:x1 + 1].reshape(-1, 3)
            t = ray_triangle_hits(np.broadcast_to(origin, d.shape), d, tri[cand])
            best = np.argmin(t, axis=1)  # candidates are sorted, so ties keep the lowest id
            bt = t[np.arange(len(d)), best]
            hit = np.isfinite(bt)
            shape = (y1 - y0 + 1, x1 - x0 + 1)
            depth[y0:y1 + 1, x0:x1 + 1] = bt.reshape(shape)
            fid[y0:y1 + 1, x0:x1 + 1] = np.where(hit, cand[best], -1).reshape(shape)
    return depth, fid


def first_hit_points(mesh: TriMesh, origins, targets):
    """Whether the segment origin->target reaches target before hitting the mesh.

    Returns a boolean array: True when no surface lies strictly between the
    origin and (just before) the target.
    """
    origins = np.broadcast_to(np.asarray(origins, float), np.shape(targets))
    d = np.asarray(targets, float) - origins
    t = ray_triangle_hits(origins, d, mesh.vertices[mesh.faces])
    return t.min(axis=1) >= 1.0 - 1e-6
