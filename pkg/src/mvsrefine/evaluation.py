"""Reconstruction metrics: mesh/cloud distances and rendered-depth errors."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, NoMutualCoverage
from .geometry import TriMesh
from .raster import render_depth


@dataclass
class DistanceReport:
    accuracy_mean: float
    accuracy_median: float
    completeness_mean: float
    completeness_median: float

    def to_dict(self):
        return asdict(self)


def sample_surface(mesh: TriMesh, n: int, seed=0) -> np.ndarray:
    """``n`` points drawn uniformly by area from the mesh surface."""
    rng = np.random.default_rng(seed)
    area = mesh.face_areas
    if mesh.n_faces == 0 or area.sum() <= 0:
        raise EmptyInput("mesh has no surface area")
    face = rng.choice(mesh.n_faces, size=n, p=area / area.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.vertices[mesh.faces[face]]
    return ((1 - r1)[:, None] * tri[:, 0] + (r1 * (1 - r2))[:, None] * tri[:, 1]
            + (r1 * r2)[:, None] * tri[:, 2])


def closest_point_on_triangles(p, a, b, c):
    """Closest point to ``p`` on triangles ``(a, b, c)``, row-wise (Ericson's regions)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + v[:, None] * ab + w[:, None] * ac          # interior

        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)      # edge bc
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where(m[:, None], b + t[:, None] * (c - b), out)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)                # edge ac
        t = d2 / (d2 - d6)
        out = np.where(m[:, None], a + t[:, None] * ac, out)
        m = (d6 >= 0) & (d5 <= d6)                           # vertex c
        out = np.where(m[:, None], c, out)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)                # edge ab
        t = d1 / (d1 - d3)
        out = np.where(m[:, None], a + t[:, None] * ab, out)
        m = (d3 >= 0) & (d4 <= d3)                           # vertex b
        out = np.where(m[:, None], b, out)
        m = (d1 <= 0) & (d2 <= 0)                            # vertex a
        out = np.where(m[:, None], a, out)
    return out


def point_mesh_distance(points, mesh: TriMesh, chunk: int = 20000) -> np.ndarray:
    """Exact Euclidean distance from each point to the nearest mesh triangle.

    Candidate triangles are found through a k-d tree over face centroids: a
    triangle can only beat the current best ``D`` if its centroid lies within
    ``D + r_max`` of the point, ``r_max`` being the largest centroid-to-vertex
    radius.
    """
    pts = np.asarray(points, float).reshape(-1, 3)
    if len(pts) == 0 or mesh.n_faces == 0:
        raise EmptyInput("need points and faces")
    tri = mesh.vertices[mesh.faces]
    cen = tri.mean(axis=1)
    r_max = float(np.linalg.norm(tri - cen[:, None], axis=2).max())
    tree = cKDTree(cen)
    out = np.empty(len(pts))
    k = min(4, mesh.n_faces)
    for s in range(0, len(pts), chunk):
        q = pts[s:s + chunk]
        _, near = tree.query(q, k=k)
        near = near.reshape(len(q), -1)
        rep = np.repeat(np.arange(len(q)), near.shape[1])
        f = near.ravel()
        cp = closest_point_on_triangles(q[rep], tri[f, 0], tri[f, 1], tri[f, 2])
        upper = np.linalg.norm(cp - q[rep], axis=1).reshape(len(q), -1).min(axis=1)
        cand = tree.query_ball_point(q, upper + r_max + 1e-12)
        lens = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(q))
        rep = np.repeat(np.arange(len(q)), lens)
        f = np.fromiter((x for c in cand for x in c), dtype=np.int64, count=int(lens.sum()))
        cp = closest_point_on_triangles(q[rep], tri[f, 0], tri[f, 1], tri[f, 2])
        d = np.linalg.norm(cp - q[rep], axis=1)
        starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
        out[s:s + chunk] = np.minimum.reduceat(d, starts)
    return out


def accuracy_completeness(model: TriMesh, gt_points, n_samples: int = 100_000,
                          seed=0) -> DistanceReport:
    """Model-to-cloud accuracy and cloud-to-model completeness.

    Accuracy uses ``n_samples`` area-uniform samples of the model surface and
    their nearest ground-truth points; completeness uses the exact distance
    from every ground-truth point to the model surface.
    """
    gt = np.asarray(gt_points, float).reshape(-1, 3)
    if len(gt) == 0 or model.n_faces == 0 or n_samples <= 0:
        raise EmptyInput("accuracy/completeness needs a non-empty model and cloud")
    samples = sample_surface(model, n_samples, seed)
    acc, _ = cKDTree(gt).query(samples)
    comp = point_mesh_distance(gt, model)
    return DistanceReport(float(acc.mean()), float(np.median(acc)),
                          float(comp.mean()), float(np.median(comp)))


@dataclass
class DepthErrorReport:
    mae: float
    rmse: float
    n_pixels: int
    per_camera: list

    def to_dict(self):
        return asdict(self)


def depth_errors(depth_a, depth_b):
    """MAE and RMSE between two depth arrays over the entries finite in both."""
    a = np.asarray(depth_a, float)
    b = np.asarray(depth_b, float)
    both = np.isfinite(a) & np.isfinite(b)
    if not both.any():
        raise NoMutualCoverage("no pixel is covered by both depth maps")
    d = a[both] - b[both]
    return float(np.abs(d).mean()), float(np.sqrt((d * d).mean())), int(both.sum())


def depth_mae_rmse(model: TriMesh, gt_mesh: TriMesh, cameras) -> DepthErrorReport:
    """Depth-map errors of ``model`` against ``gt_mesh`` pooled over all cameras."""
    if len(cameras) == 0:
        raise EmptyInput("need at least one camera")
    diffs, per_cam = [], []
    for cam in cameras:
        a = render_depth(model, cam).depth
        b = render_depth(gt_mesh, cam).depth
        both = np.isfinite(a) & np.isfinite(b)
        d = a[both] - b[both]
        diffs.append(d)
        per_cam.append(int(both.sum()))
    d = np.concatenate(diffs)
    if len(d) == 0:
        raise NoMutualCoverage("model and ground truth never overlap in any view")
    return DepthErrorReport(float(np.abs(d).mean()), float(np.sqrt((d * d).mean())),
                            len(d), per_cam)


def format_table(columns: dict, rows=("mae", "rmse"), title=None) -> str:
    """Aligned text table, metrics as rows and runs as columns."""
    names = list(columns)
    width = max([12] + [len(n) + 2 for n in names])
    label = max([8] + [len(r) + 1 for r in rows])
    lines = []
    if title:
        lines.append(title)
    lines.append(" " * label + "".join(n.rjust(width) for n in names))
    for r in rows:
        cells = "".join(f"{columns[n][r]:.6g}".rjust(width) for n in names)
        lines.append(r.upper().ljust(label) + cells)
    return "\n".join(lines)
