import numpy as np
import pytest

from mvsrefine.geometry import CameraView, TriMesh, grid_mesh
from mvsrefine.scenes import SolidTexture, render_image


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_mesh(rng, n_faces=200, center=(0.0, 0.0, 4.0), spread=1.2, size=0.5):
    """Triangle soup of random non-degenerate triangles in front of the origin."""
    tris = []
    while len(tris) < n_faces:
        c = np.asarray(center) + rng.uniform(-spread, spread, 3) * (1, 1, 0.5)
        t = c + rng.normal(scale=size, size=(3, 3))
        if np.linalg.norm(np.cross(t[1] - t[0], t[2] - t[0])) > 0.05:
            tris.append(t)
    v = np.concatenate(tris)
    return TriMesh(v, np.arange(len(v)).reshape(-1, 3))


def textured_plane_rig(size=96, n=14, seed=0):
    """Planar grid seen by two verged cameras with images rendered from it."""
    rng = np.random.default_rng(seed)
    plane = grid_mesh(n, n, (-2, -2, 0), (4, 0, 0), (0, 4, 0))
    tex = SolidTexture.random(rng, f_lo=1.0, f_hi=6.0)
    c0 = CameraView.look_at((-0.6, 0.2, 3.0), (0, 0, 0), (0, 1, 0), 1.4 * size, size, size)
    c1 = CameraView.look_at((0.9, -0.3, 3.2), (0, 0, 0), (0, 1, 0), 0.9 * size, size, size)
    cams = [c.with_image(render_image(plane, c, tex, 3)) for c in (c0, c1)]
    return plane, cams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
