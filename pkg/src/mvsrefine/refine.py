"""Photometric mesh refinement.

The energy sums, over camera pairs (i, j) and over the pixels of image i
where camera j sees the same surface point, the negative ZNCC between a
patch of image i and the corresponding patch of image j warped through the
mesh.  Its derivative with respect to each vertex follows the usual
image-domain gradient flow: the similarity derivative at each pixel is
pushed through the reprojection into j, scaled by the change of measure
``z**3 / (n . d)``, and distributed onto the vertices of the visible face
with its barycentric weights, along the face normal.

Vertices then take a gradient step and one umbrella smoothing pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map as _map
from .errors import InvalidParams, NumericalFailure, ZeroVariance
from .geometry import CameraView, TriMesh, umbrella_smooth
from .masking import gather_patches, image_masks
from .raster import DepthMap, render_depth, reproject, surface_points

logger = logging.getLogger(__name__)

VAR_EPS = 1e-10


@dataclass
class RefineConfig:
    iterations: int = 30
    step_scale: float = 0.05
    smooth_lambda: float = 0.3
    patch_size: int = 5
    masking_enabled: bool = True
    grazing_cos_min: float = 0.1
    # "bilinear": exact derivative of the bilinear interpolant, consistent
    # with how the energy samples image j;
    # "central": central-difference image gradient, bilinearly sampled
    image_gradient: str = "bilinear"
    # per-vertex displacement cap, in units of step_scale * mean edge length
    # (the distance the 90th-percentile vertex moves); 0 disables the cap
    step_clip: float = 1.0
    threads: int = 1

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidParams("iterations must be >= 0")
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise InvalidParams("patch_size must be odd and >= 3")
        if not 0.0 <= self.smooth_lambda <= 1.0:
            raise InvalidParams("smooth_lambda must lie in [0, 1]")
        if self.step_scale < 0:
            raise InvalidParams("step_scale must be >= 0")
        if self.step_clip < 0:
            raise InvalidParams("step_clip must be >= 0")
        if self.image_gradient not in ("central", "bilinear"):
            raise InvalidParams(f"unknown image_gradient {self.image_gradient!r}")


def masked_zncc(patch_a, patch_b, mask=None) -> float:
    """Zero-mean normalised cross-correlation over the cells where ``mask`` is set."""
    a = np.asarray(patch_a, float)
    b = np.asarray(patch_b, float)
    m = np.ones(a.shape, bool) if mask is None else np.asarray(mask, bool)
    if m.sum() < 2:
        raise ZeroVariance("fewer than two valid pixels")
    a, b = a[m], b[m]
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = da @ da, db @ db
    if saa <= VAR_EPS or sbb <= VAR_EPS:
        raise ZeroVariance("patch has no intensity variance")
    return float(np.clip((da @ db) / np.sqrt(saa * sbb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# image sampling
# ---------------------------------------------------------------------------

def _bilinear_setup(shape, pix):
    H, W = shape
    fx = np.clip(pix[..., 0] - 0.5, 0.0, W - 1.0)
    fy = np.clip(pix[..., 1] - 0.5, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(fx).astype(np.int64), W - 2)
    y0 = np.minimum(np.floor(fy).astype(np.int64), H - 2)
    return x0, y0, fx - x0, fy - y0


def bilinear(img, pix):
    """Sample ``img`` at continuous pixel coordinates (centre convention)."""
    x0, y0, tx, ty = _bilinear_setup(img.shape, pix)
    i00 = img[y0, x0]
    i01 = img[y0, x0 + 1]
    i10 = img[y0 + 1, x0]
    i11 = img[y0 + 1, x0 + 1]
    return (1 - ty) * ((1 - tx) * i00 + tx * i01) + ty * ((1 - tx) * i10 + tx * i11)


def bilinear_gradient(img, pix):
    """Exact derivative of :func:`bilinear` with respect to ``(u, v)``."""
    x0, y0, tx, ty = _bilinear_setup(img.shape, pix)
    i00 = img[y0, x0]
    i01 = img[y0, x0 + 1]
    i10 = img[y0 + 1, x0]
    i11 = img[y0 + 1, x0 + 1]
    gu = (1 - ty) * (i01 - i00) + ty * (i11 - i10)
    gv = (1 - tx) * (i10 - i00) + tx * (i11 - i01)
    return np.stack([gu, gv], axis=-1)


def central_gradient(img, pix):
    gy, gx = np.gradient(img)
    return np.stack([bilinear(gx, pix), bilinear(gy, pix)], axis=-1)


def projection_jacobian(camera: CameraView, points):
    """d(pixel)/d(world point), shape ``(..., 2, 3)``."""
    pc = camera.to_camera(points)
    R = camera.rotation
    z = pc[..., 2:3]
    du = camera.fx / z * (R[0] - pc[..., 0:1] / z * R[2])
    dv = camera.fy / z * (R[1] - pc[..., 1:2] / z * R[2])
    return np.stack([du, dv], axis=-2)


# ---------------------------------------------------------------------------
# per-view render state
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ViewRender:
    camera: CameraView
    depth: DepthMap
    points: np.ndarray
    masks: np.ndarray | None


def render_views(mesh: TriMesh, cameras, config: RefineConfig, indices=None):
    """Depth maps, surface points and (optionally) patch masks per camera."""
    idx = range(len(cameras)) if indices is None else sorted(set(indices))

    def one(k):
        cam = cameras[k]
        dm = render_depth(mesh, cam)
        masks = image_masks(dm, config.patch_size) if config.masking_enabled else None
        return k, ViewRender(cam, dm, surface_points(cam, dm), masks)

    return dict(_map(one, idx, config.threads))


def _pairs_of(pairs):
    if hasattr(pairs, "pairs"):
        pairs = pairs.pairs
    return [(int(i), int(j)) for i, j in pairs]


# ---------------------------------------------------------------------------
# energy and gradient for one pair
# ---------------------------------------------------------------------------

@dataclass
class PairTerms:
    energy: float
    n_samples: int
    grad: np.ndarray | None = None      # (V, 3)
    counts: np.ndarray | None = None    # (V,)
    skipped_grazing: int = 0
    err_map: np.ndarray | None = field(default=None, repr=False)


def evaluate_pair(mesh: TriMesh, vi: ViewRender, vj: ViewRender, config: RefineConfig,
                  with_gradient: bool = True) -> PairTerms:
    cam_i, cam_j = vi.camera, vj.camera
    if cam_i.image is None or cam_j.image is None:
        raise InvalidParams("refinement needs an image for every camera in a pair")
    size = config.patch_size
    r = size // 2
    H, W = cam_i.height, cam_i.width
    fld = reproject(mesh, cam_i, cam_j, vi.depth, vj.depth, points=vi.points)
    samp = fld.sampleable
    omega = fld.domain_mask

    pix = np.where(samp[..., None], fld.reproj_pixel, 0.5)
    b = np.where(samp, bilinear(cam_j.image, pix), np.nan)

    A = gather_patches(cam_i.image, size)
    B = gather_patches(b, size)
    # the centre must lie in the domain; neighbours only need a surface point
    # that lands inside image j (occluded ones are the mask's job)
    valid = gather_patches(samp, size, fill=False)
    if vi.masks is not None:
        valid &= vi.masks

    n = valid.sum(axis=0)
    nz = np.maximum(n, 1)
    A0 = np.where(valid, A, 0.0)
    B0 = np.where(valid, B, 0.0)
    da = np.where(valid, A - (A0.sum(0) / nz)[None], 0.0)
    db = np.where(valid, B - (B0.sum(0) / nz)[None], 0.0)
    saa = (da * da).sum(0)
    sbb = (db * db).sum(0)
    sab = (da * db).sum(0)
    good = omega & (n >= 2) & (saa > VAR_EPS) & (sbb > VAR_EPS)
    denom = np.sqrt(np.where(good, saa * sbb, 1.0))
    zncc = np.where(good, sab / denom, 0.0)
    err = -zncc
    out = PairTerms(float(err[good].sum()), int(good.sum()), err_map=np.where(good, err, np.nan))
    if not with_gradient:
        return out

    # d err / d B_k for every window and neighbour, then scatter onto pixels
    inv_sbb = np.where(good, 1.0 / np.where(good, sbb, 1.0), 0.0)
    dB = -(da / denom[None] - zncc[None] * db * inv_sbb[None])
    dB = np.where(valid & good[None], dB, 0.0)
    acc = np.zeros((H + 2 * r, W + 2 * r))
    k = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            acc[r + dy:r + dy + H, r + dx:r + dx + W] += dB[k]
            k += 1
    dM = acc[r:r + H, r:r + W]

    grad = np.zeros((mesh.n_vertices, 3))
    counts = np.zeros(mesh.n_vertices, dtype=np.int64)
    sel = samp & (dM != 0.0)
    if not sel.any():
        out.grad, out.counts = grad, counts
        return out

    x = vi.points[sel]
    p = fld.reproj_pixel[sel]
    f = vi.depth.face_id[sel]
    phi = vi.depth.bary[sel]
    z = vi.depth.depth[sel]
    nrm = mesh.face_normals[f]
    d = x - cam_i.center

    if config.image_gradient == "central":
        gJ = central_gradient(cam_j.image, p)
    else:
        gJ = bilinear_gradient(cam_j.image, p)
    Jp = projection_jacobian(cam_j, x)
    ray_motion = np.einsum("nk,nkc,nc->n", gJ, Jp, d)       # dJ/ds along the viewing ray
    n_dot_d = np.einsum("nc,nc->n", nrm, d)
    cos = np.abs(n_dot_d) / np.linalg.norm(d, axis=1)
    keep = cos >= config.grazing_cos_min
    out.skipped_grazing = int((~keep).sum())

    nabla = dM[sel] * ray_motion / z**3
    measure = z**3 / np.where(keep, n_dot_d, 1.0)
    s = np.where(keep, nabla * measure, 0.0)

    verts = mesh.faces[f]
    w = phi * s[:, None]
    for c in range(3):
        np.add.at(grad, verts[:, c], w[:, c:c + 1] * nrm)
        np.add.at(counts, verts[:, c], keep.astype(np.int64))
    out.grad, out.counts = grad, counts
    return out


# ---------------------------------------------------------------------------
# public energy / gradient API
# ---------------------------------------------------------------------------

@dataclass
class GradientField:
    grad: np.ndarray          # (V, 3) dE/dX
    counts: np.ndarray        # (V,) samples that contributed
    energy: float
    per_pair: dict
    skipped_grazing: int = 0


def _views_for(mesh, cameras, pairs, config, views):
    if views is None:
        needed = {c for p in pairs for c in p}
        views = render_views(mesh, cameras, config, needed)
    return views


def photo_energy(mesh: TriMesh, cameras, pairs, config: RefineConfig | None = None,
                 views=None):
    """Total photometric energy and its per-pair breakdown ``{(i, j): energy}``."""
    config = config or RefineConfig()
    pairs = _pairs_of(pairs)
    views = _views_for(mesh, cameras, pairs, config, views)
    res = _map(lambda p: evaluate_pair(mesh, views[p[0]], views[p[1]], config, False),
               pairs, config.threads)
    per_pair = {p: t.energy for p, t in zip(pairs, res)}
    return float(sum(per_pair.values())), per_pair


def photometric_gradient(mesh: TriMesh, cameras, pairs, config: RefineConfig | None = None,
                         views=None) -> GradientField:
    config = config or RefineConfig()
    pairs = _pairs_of(pairs)
    views = _views_for(mesh, cameras, pairs, config, views)
    res = _map(lambda p: evaluate_pair(mesh, views[p[0]], views[p[1]], config, True),
               pairs, config.threads)
    grad = np.zeros((mesh.n_vertices, 3))
    counts = np.zeros(mesh.n_vertices, dtype=np.int64)
    skipped = 0
    for t in res:  # fixed reduction order keeps runs reproducible
        grad += t.grad
        counts += t.counts
        skipped += t.skipped_grazing
    per_pair = {p: t.energy for p, t in zip(pairs, res)}
    return GradientField(grad, counts, float(sum(per_pair.values())), per_pair, skipped)


@dataclass
class IterationRecord:
    iteration: int
    e_photo: float
    mean_step: float
    frozen_vertices: int


def refine(mesh: TriMesh, cameras, pairs, config: RefineConfig | None = None,
           callback=None):
    """Evolve ``mesh`` by photometric gradient descent plus umbrella smoothing.

    Returns ``(refined_mesh, log)``.  ``log[k]`` holds the energy after ``k``
    updates and the mean vertex displacement of update ``k`` (zero for the
    initial row).  ``callback(k, mesh)`` is invoked after every update.
    """
    config = config or RefineConfig()
    pairs = _pairs_of(pairs)
    if config.iterations == 0:
        e0, _ = photo_energy(mesh, cameras, pairs, config) if pairs else (0.0, {})
        return mesh, [IterationRecord(0, e0, 0.0, 0)]

    log = []
    current = mesh
    last_step, last_frozen = 0.0, 0
    for it in range(config.iterations + 1):
        if it == config.iterations:
            e, _ = photo_energy(current, cameras, pairs, config)
            log.append(IterationRecord(it, e, last_step, last_frozen))
            break
        gf = photometric_gradient(current, cameras, pairs, config)
        log.append(IterationRecord(it, gf.energy, last_step, last_frozen))
        g = gf.grad
        bad = ~np.isfinite(g).all(axis=1)
        if bad.any():
            logger.warning("iteration %d: freezing %d vertices with non-finite gradient",
                           it, int(bad.sum()))
            if bad.all():
                raise NumericalFailure("every vertex has a non-finite gradient")
            g = np.where(bad[:, None], 0.0, g)
        norms = np.linalg.norm(g, axis=1)
        active = norms[gf.counts > 0]
        p90 = float(np.percentile(active, 90)) if len(active) else 0.0
        step = config.step_scale * current.mean_edge_length / max(1.0, p90)
        disp = step * g
        if config.step_clip > 0:
            cap = config.step_clip * config.step_scale * current.mean_edge_length
            dn = np.linalg.norm(disp, axis=1)
            disp *= np.minimum(1.0, cap / np.maximum(dn, 1e-300))[:, None]
        moved = current.vertices - disp
        smoothed = umbrella_smooth(current.with_vertices(moved), config.smooth_lambda)
        last_step = float(np.linalg.norm(smoothed - current.vertices, axis=1).mean())
        last_frozen = int(bad.sum())
        current = current.with_vertices(smoothed)
        if callback is not None:
            callback(it + 1, current)
    return current, log
