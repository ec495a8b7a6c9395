"""Synthetic scenes with analytic ground truth for end-to-end checks.

Each scene is a ground-truth mesh, a calibrated camera rig aimed at it, and
images rendered from a denser copy of the geometry with a band-limited solid
texture (a sum of random 3D cosines), supersampled and box-filtered.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams
from .geometry import CameraView, TriMesh, grid_mesh, icosphere
from .masking import gather_patches
from .raster import facet_visibility, render_depth, surface_points
from .raycast import raycast_depth

# sphere rig: a distant ring (near-affine views reach further toward the poles)
SPHERE_DIST = 10.0
SPHERE_SUB = 5
KINDS = ("sphere", "two_planes", "fountain_relief")


@dataclass
class SolidTexture:
    directions: np.ndarray   # (K, 3) unit vectors
    freqs: np.ndarray        # (K,) cycles per scene unit
    phases: np.ndarray       # (K,)
    amps: np.ndarray         # (K,)

    @classmethod
    def random(cls, rng, n_waves=24, f_lo=1.5, f_hi=8.0):
        d = rng.normal(size=(n_waves, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        f = np.exp(rng.uniform(np.log(f_lo), np.log(f_hi), n_waves))
        ph = rng.uniform(0, 2 * np.pi, n_waves)
        amps = 1.0 / np.sqrt(f)
        return cls(d, f, ph, amps)

    def __call__(self, points):
        p = np.asarray(points, float)
        arg = 2 * np.pi * (p @ self.directions.T) * self.freqs + self.phases
        val = (np.cos(arg) * self.amps).sum(axis=-1)
        scale = np.sqrt(0.5 * (self.amps**2).sum())
        # tanh keeps the map strictly monotone so no window saturates flat
        return 0.5 + 0.45 * np.tanh(0.4 * val / scale)


@dataclass
class SyntheticScene:
    kind: str
    gt_mesh: TriMesh
    cameras: list
    texture_seed: int
    render_mesh: TriMesh = field(repr=False, default=None)
    texture: SolidTexture = field(repr=False, default=None)
    sphere: tuple | None = None     # (centre, radius) for the analytic sphere

    @property
    def occlusion_fixture(self) -> bool:
        return self.kind == "two_planes"

    def gt_distance(self, points) -> np.ndarray:
        """Distance from points to the ground-truth surface."""
        if self.sphere is not None:
            c, r = self.sphere
            return np.abs(np.linalg.norm(np.asarray(points) - c, axis=-1) - r)
        from .evaluation import point_mesh_distance
        return point_mesh_distance(points, self.gt_mesh)

    def noisy_mesh(self, sigma_frac: float = 0.02, seed: int = 0) -> TriMesh:
        """Ground-truth mesh with isotropic Gaussian vertex noise of ``sigma_frac * bbox_diag``."""
        rng = np.random.default_rng(seed)
        sigma = sigma_frac * self.gt_mesh.bbox_diag
        v = self.gt_mesh.vertices + rng.normal(scale=sigma, size=self.gt_mesh.vertices.shape)
        return self.gt_mesh.with_vertices(v)


def render_image(mesh: TriMesh, camera: CameraView, texture, supersample=3, background=0.0):
    s = supersample
    hi = CameraView(camera.fx * s, camera.fy * s, camera.cx * s, camera.cy * s,
                    camera.rotation, camera.translation, camera.width * s, camera.height * s)
    dm = render_depth(mesh, hi)
    pts = surface_points(hi, dm)
    img = np.full(dm.depth.shape, float(background))
    cov = dm.covered
    img[cov] = texture(pts[cov])
    return img.reshape(camera.height, s, camera.width, s).mean(axis=(1, 3))


def _ring_cameras(n, radius, height, target, focal, size, up=(0, 0, 1), arc=360.0, start=0.0):
    cams = []
    for k in range(n):
        if arc >= 360.0:
            a = np.radians(start + arc * k / n)
        else:
            a = np.radians(start + (arc * (k / (n - 1) - 0.5) if n > 1 else 0.0))
        eye = np.array([radius * np.cos(a), radius * np.sin(a), height])
        cams.append(CameraView.look_at(eye, target, up, focal, size, size, name=f"cam{k:02d}"))
    return cams


def _relief_height(x, y):
    return (0.25 * np.exp(-((x - 0.3) ** 2 + (y - 0.2) ** 2) / 0.15)
            + 0.15 * np.exp(-((x + 0.45) ** 2 + (y + 0.3) ** 2) / 0.08)
            - 0.1 * np.exp(-((x + 0.1) ** 2 + (y - 0.5) ** 2) / 0.05))


def _relief_mesh(n):
    m = grid_mesh(n, n, (-1, -1, 0), (2, 0, 0), (0, 2, 0))
    v = m.vertices.copy()
    v[:, 2] = _relief_height(v[:, 0], v[:, 1])
    return TriMesh(v, m.faces)


STEP_SLABS = ((-1.0, 0.25), (0.0, 0.25), (1.0, 0.25))   # (centre x, half width) per slab
STEP_HEIGHT = 1.0
STEP_SOFTNESS = 0.04
STEP_EXTENT = (2.2, 1.8)


def _step_profile(x):
    """Height field: ~STEP_HEIGHT on each slab, ~0 elsewhere, steep rounded sides."""
    z = np.zeros_like(np.asarray(x, float))
    for c, hw in STEP_SLABS:
        z = z + 0.5 * STEP_HEIGHT * (1.0 + np.tanh((hw - np.abs(x - c)) / STEP_SOFTNESS))
    return z


def _step_mesh(spacing=0.1):
    """Base plane with raised slabs, one connected height-field sheet.

    Columns are spaced evenly in arc length along the xz profile so the
    steep sides get as many vertices as the flats.
    """
    extent_x, extent_y = STEP_EXTENT
    xs = np.linspace(-extent_x, extent_x, 20001)
    zs = _step_profile(xs)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(xs), np.diff(zs)))])
    n = int(round(arc[-1] / spacing))
    xcol = np.interp(np.linspace(0.0, arc[-1], n + 1), arc, xs)
    ny = int(round(2 * extent_y / spacing))
    topo = grid_mesh(n, ny, (0, 0, 0), (1, 0, 0), (0, 1, 0))
    ys = np.linspace(-extent_y, extent_y, ny + 1)
    xi, yj = np.meshgrid(np.arange(n + 1), np.arange(ny + 1), indexing="xy")
    x = xcol[xi.ravel()]
    v = np.stack([x, ys[yj.ravel()], _step_profile(x)], axis=1)
    return TriMesh(v, topo.faces)


def make_scene(kind: str = "sphere", n_cameras: int = 8, image_size: int = 128,
               texture_seed: int = 0, supersample: int = 3) -> SyntheticScene:
    """Build a deterministic synthetic scene.

    * ``sphere``: unit icosphere, cameras on an equatorial ring.
    * ``two_planes``: raised slabs on a base plane (two parallel planes
      joined by steep walls), cameras on an arc so the slabs hide different
      parts of the base in different views.
    * ``fountain_relief``: a bumpy height field seen from an arc above.
    """
    if kind not in KINDS:
        raise InvalidParams(f"unknown scene kind {kind!r}; expected one of {KINDS}")
    if n_cameras < 2:
        raise InvalidParams("need at least two cameras")
    if image_size < 16:
        raise InvalidParams("image_size must be >= 16")
    rng = np.random.default_rng(texture_seed)
    focal = 1.4 * image_size
    sphere = None

    if kind == "sphere":
        gt = icosphere(SPHERE_SUB)
        render = icosphere(SPHERE_SUB + 1)
        cams = _ring_cameras(n_cameras, SPHERE_DIST, 0.0, (0, 0, 0), 0.48 * image_size * SPHERE_DIST,
                             image_size)
        tex = SolidTexture.random(rng, f_lo=1.0, f_hi=6.0)
        sphere = (np.zeros(3), 1.0)
    elif kind == "two_planes":
        gt = _step_mesh()
        render = gt
        cams = []
        for k in range(n_cameras):
            t = (k / (n_cameras - 1) - 0.5) if n_cameras > 1 else 0.0
            eye = np.array([3.2 * t, 0.35 * np.sin(2.0 * np.pi * t), 4.5])
            cams.append(CameraView.look_at(eye, (0.0, 0.0, 0.5), (0, 1, 0), 1.3 * image_size,
                                           image_size, image_size, name=f"cam{k:02d}"))
        tex = SolidTexture.random(rng, f_lo=1.0, f_hi=6.0)
    else:
        gt = _relief_mesh(24)
        render = _relief_mesh(96)
        cams = []
        for k in range(n_cameras):
            a = np.radians(-60 + 120 * (k / (n_cameras - 1) if n_cameras > 1 else 0.5))
            eye = np.array([2.8 * np.sin(a), -1.2, 2.8 * np.cos(a) + 0.3])
            cams.append(CameraView.look_at(eye, (0, 0, 0.05), (0, 1, 0), 0.95 * image_size,
                                           image_size, image_size, name=f"cam{k:02d}"))
        tex = SolidTexture.random(rng, f_lo=1.0, f_hi=6.0)

    cams = [c.with_image(render_image(render, c, tex, supersample)) for c in cams]
    scene = SyntheticScene(kind, gt, cams, texture_seed, render, tex, sphere)
    _validate(scene)
    return scene


def _validate(scene: SyntheticScene):
    for k, cam in enumerate(scene.cameras):
        dm = render_depth(scene.gt_mesh, cam)
        vis = facet_visibility(scene.gt_mesh, cam, dm)
        if vis.mean() < 0.3:
            raise InvalidParams(f"camera {k} sees only {vis.mean():.0%} of the facets")
        # exact per-window variance over windows fully on the surface
        win = gather_patches(np.where(dm.covered, cam.image, np.nan), 5)
        full = np.isfinite(win).all(axis=0)
        if full.any() and np.var(win[:, full], axis=0).min() <= 0.0:
            raise InvalidParams(f"camera {k}: texture is flat inside some 5x5 window")


def occluded_fraction(scene: SyntheticScene, camera_index: int) -> float:
    """Share of the base plane's pixels hidden behind the slabs (ray-cast oracle)."""
    if scene.kind != "two_planes":
        raise InvalidParams("only defined for the two_planes scene")
    cam = scene.cameras[camera_index]
    mesh = scene.gt_mesh
    base = np.flatnonzero((mesh.vertices[mesh.faces][..., 2] < 0.02 * STEP_HEIGHT).all(axis=1))
    _, fid_base = raycast_depth(TriMesh(mesh.vertices, mesh.faces[base]), cam)
    _, fid_all = raycast_depth(mesh, cam)
    on_base = fid_base >= 0
    hidden = on_base & ~np.isin(fid_all, base)
    return float(hidden.sum() / max(on_base.sum(), 1))
