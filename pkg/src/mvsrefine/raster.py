"""Software z-buffer rendering, facet visibility and cross-camera reprojection."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .geometry import CameraView, TriMesh

EMPTY = np.inf
NONE = -1

# relative depth tolerance of the mutual-visibility test
MUTUAL_DEPTH_TOL = 0.005


@numba.njit(cache=True, nogil=True)
def _zbuffer(pc, faces, order, fx, fy, cx, cy, width, height, depth, fid, bary):
    near = 1e-9
    for oi in range(order.shape[0]):
        f = order[oi]
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        za, zb, zc = pc[a, 2], pc[b, 2], pc[c, 2]
        if za <= near or zb <= near or zc <= near:
            continue
        xa = fx * pc[a, 0] / za + cx
        ya = fy * pc[a, 1] / za + cy
        xb = fx * pc[b, 0] / zb + cx
        yb = fy * pc[b, 1] / zb + cy
        xc = fx * pc[c, 0] / zc + cx
        yc = fy * pc[c, 1] / zc + cy
        area = (xb - xa) * (yc - ya) - (yb - ya) * (xc - xa)
        if abs(area) < 1e-14:
            continue
        umin = max(int(np.ceil(min(xa, xb, xc) - 0.5)), 0)
        umax = min(int(np.floor(max(xa, xb, xc) - 0.5)), width - 1)
        vmin = max(int(np.ceil(min(ya, yb, yc) - 0.5)), 0)
        vmax = min(int(np.floor(max(ya, yb, yc) - 0.5)), height - 1)
        inv = 1.0 / area
        for v in range(vmin, vmax + 1):
            py = v + 0.5
            for u in range(umin, umax + 1):
                px = u + 0.5
                l0 = ((xc - xb) * (py - yb) - (yc - yb) * (px - xb)) * inv
                l1 = ((xa - xc) * (py - yc) - (ya - yc) * (px - xc)) * inv
                l2 = ((xb - xa) * (py - ya) - (yb - ya) * (px - xa)) * inv
                if l0 < 0.0 or l1 < 0.0 or l2 < 0.0:
                    continue
                q0 = l0 / za
                q1 = l1 / zb
                q2 = l2 / zc
                s = q0 + q1 + q2
                z = 1.0 / s
                cur = depth[v, u]
                if z < cur or (z == cur and f < fid[v, u]):
                    depth[v, u] = z
                    fid[v, u] = f
                    bary[v, u, 0] = q0 / s
                    bary[v, u, 1] = q1 / s
                    bary[v, u, 2] = q2 / s


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel nearest-surface record of one rendering."""

    depth: np.ndarray     # (H, W) camera-frame z, EMPTY where uncovered
    face_id: np.ndarray   # (H, W) int, NONE where uncovered
    bary: np.ndarray      # (H, W, 3) perspective-correct barycentrics

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def covered(self) -> np.ndarray:
        return self.face_id >= 0


def render_depth(mesh: TriMesh, camera: CameraView, order=None) -> DepthMap:
    """Rasterise ``mesh`` into ``camera`` with a z-buffer.

    ``order`` optionally permutes face submission; the result does not depend
    on it except at exact depth ties, which go to the lower face index.
    """
    H, W = camera.height, camera.width
    depth = np.full((H, W), EMPTY)
    fid = np.full((H, W), NONE, dtype=np.int64)
    bary = np.zeros((H, W, 3))
    if mesh.n_faces:
        pc = np.ascontiguousarray(camera.to_camera(mesh.vertices))
        if order is None:
            order = np.arange(mesh.n_faces, dtype=np.int64)
        _zbuffer(pc, np.ascontiguousarray(mesh.faces), np.asarray(order, np.int64),
                 float(camera.fx), float(camera.fy), float(camera.cx), float(camera.cy),
                 W, H, depth, fid, bary)
    return DepthMap(depth, fid, bary)


def facet_visibility(mesh: TriMesh, camera: CameraView, depthmap: DepthMap,
                     min_fraction: float = 0.0) -> np.ndarray:
    """Faces owning at least one pixel of ``depthmap``.

    With ``min_fraction > 0`` a face must also own that fraction of its
    projected pixel area.
    """
    fid = depthmap.face_id
    counts = np.bincount(fid[fid >= 0], minlength=mesh.n_faces)
    vis = counts >= 1
    if min_fraction > 0:
        pix, _ = camera.project_points(mesh.vertices)
        p = pix[mesh.faces]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        vis &= counts >= min_fraction * area
    return vis


def surface_points(camera: CameraView, depthmap: DepthMap) -> np.ndarray:
    """World-space surface point behind each pixel centre; NaN where uncovered."""
    rays = camera.pixel_rays()
    d = np.where(depthmap.covered, depthmap.depth, np.nan)
    return camera.center + d[..., None] * rays


@dataclass(frozen=True, eq=False)
class ReprojectionField:
    """Reprojection of camera i's covered pixels into camera j through the mesh.

    ``domain_mask`` is the mutual-visibility domain.  ``sampleable`` is the
    looser set of covered pixels whose reprojection can be bilinearly sampled
    in image j, regardless of visibility from j.
    """

    domain_mask: np.ndarray    # (H, W) bool
    reproj_pixel: np.ndarray   # (H, W, 2), NaN where uncovered
    surface_point: np.ndarray  # (H, W, 3), NaN where uncovered
    face_id: np.ndarray        # (H, W) face in camera i
    depth_j: np.ndarray        # (H, W) camera-j depth of the surface point
    sampleable: np.ndarray     # (H, W) bool

    @property
    def area(self) -> int:
        return int(self.domain_mask.sum())


def inside_sampling_support(pix, width, height, eps=1e-6):
    """Pixel coordinates that lie within the hull of pixel centres."""
    u, v = pix[..., 0], pix[..., 1]
    lo = 0.5 - eps
    with np.errstate(invalid="ignore"):
        return (u >= lo) & (u <= width - lo) & (v >= lo) & (v <= height - lo)


def reproject(mesh: TriMesh, cam_i: CameraView, cam_j: CameraView,
              depth_i: DepthMap, depth_j: DepthMap, points=None) -> ReprojectionField:
    """Map camera i's pixels into camera j and test mutual visibility.

    A pixel belongs to the domain when its surface point projects inside
    image j and the surface camera j records along that exact ray (the plane
    of the face stored in ``depth_j`` at the landing pixel) lies within
    ``MUTUAL_DEPTH_TOL`` relative depth of the point.
    """
    x = surface_points(cam_i, depth_i) if points is None else points
    covered = depth_i.covered
    pix, zj = cam_j.project_points(x)
    with np.errstate(invalid="ignore"):
        inside = covered & (zj > 1e-9) & inside_sampling_support(pix, cam_j.width, cam_j.height)

    domain = np.zeros_like(covered)
    idx = np.flatnonzero(inside.ravel())
    if len(idx):
        p = pix.reshape(-1, 2)[idx]
        ju = np.clip(np.floor(p[:, 0]).astype(np.int64), 0, cam_j.width - 1)
        jv = np.clip(np.floor(p[:, 1]).astype(np.int64), 0, cam_j.height - 1)
        fj = depth_j.face_id[jv, ju]
        ok = fj >= 0
        xs = x.reshape(-1, 3)[idx]
        n = mesh.face_normals[np.where(ok, fj, 0)]
        anchor = mesh.vertices[mesh.faces[np.where(ok, fj, 0), 0]]
        ray = xs - cam_j.center
        denom = np.einsum("ij,ij->i", n, ray)
        num = np.einsum("ij,ij->i", n, anchor - cam_j.center)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = num / denom
        ok &= np.isfinite(s) & (np.abs(s - 1.0) < MUTUAL_DEPTH_TOL)
        domain.ravel()[idx[ok]] = True

    return ReprojectionField(domain, np.where(covered[..., None], pix, np.nan), x,
                             depth_i.face_id, np.where(covered, zj, np.nan), inside)
