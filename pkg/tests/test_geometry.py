import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_rotation
from mvsrefine.errors import (BehindCamera, DegenerateFace, InvalidCamera, InvalidMesh,
                              NonPositiveDepth, ZeroNormal)
from mvsrefine.geometry import (CameraView, TriMesh, barycentric, dirichlet_energy, grid_mesh,
                                icosphere, project, umbrella_smooth, unproject, vertex_normals)


def simple_camera(R=np.eye(3), t=(0, 0, 0)):
    return CameraView(100, 100, 50, 50, R, t, 100, 100)


def test_project_on_axis():
    pix, z = project(simple_camera(), (0, 0, 2))
    assert np.allclose(pix, (50, 50)) and z == 2.0


def test_project_off_axis():
    pix, z = project(simple_camera(), (0.5, 0, 1))
    assert np.allclose(pix, (100, 50)) and z == 1.0


def test_project_behind_camera():
    with pytest.raises(BehindCamera):
        project(simple_camera(), (0, 0, -1))


def test_unproject_nonpositive_depth():
    with pytest.raises(NonPositiveDepth):
        unproject(simple_camera(), (10, 10), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_project_unproject_round_trip(seed):
    rng = np.random.default_rng(seed)
    cam = CameraView(rng.uniform(50, 500), rng.uniform(50, 500), rng.uniform(0, 100),
                     rng.uniform(0, 100), random_rotation(rng), rng.normal(size=3), 100, 100)
    pix = rng.uniform(0, 100, 2)
    depth = rng.uniform(0.1, 50)
    x = unproject(cam, pix, depth)
    pix2, z2 = project(cam, x)
    assert np.allclose(pix2, pix, atol=1e-9) and abs(z2 - depth) < 1e-9 * depth


def test_camera_center_convention():
    rng = np.random.default_rng(1)
    R = random_rotation(rng)
    c = np.array([1.0, -2.0, 3.0])
    cam = simple_camera(R, -R @ c)
    assert np.allclose(cam.center, c)


def test_camera_rejects_bad_rotation():
    with pytest.raises(InvalidCamera):
        simple_camera(R=np.diag([1.0, 1.0, 2.0]))


def test_camera_rejects_bad_focal():
    with pytest.raises(InvalidCamera):
        CameraView(0, 100, 50, 50, np.eye(3), (0, 0, 0), 100, 100)


def test_mesh_rejects_degenerate_and_out_of_range():
    with pytest.raises(InvalidMesh):
        TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(InvalidMesh):
        TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])


def test_mesh_arrays_read_only():
    m = icosphere(1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


def test_planar_square_normals():
    m = grid_mesh(1, 1, (0, 0, 0), (1, 0, 0), (0, 1, 0))
    assert np.allclose(vertex_normals(m), [0, 0, 1])


def test_icosphere_normals_radial():
    m = icosphere(3)
    n = vertex_normals(m)
    radial = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip((n * radial).sum(1), -1, 1)))
    assert ang.max() < 2.0


def test_flipping_winding_negates_normals():
    m = icosphere(2)
    flipped = TriMesh(m.vertices, m.faces[:, ::-1])
    assert np.allclose(vertex_normals(flipped), -vertex_normals(m))


def test_isolated_vertex_has_no_normal():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])
    with pytest.raises(ZeroNormal):
        vertex_normals(m)
    n = vertex_normals(m, allow_zero=True)
    assert np.all(n[3] == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normals_rigid_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = icosphere(1, radius=1.3)
    v = m.vertices + rng.normal(scale=0.05, size=m.vertices.shape)
    R = random_rotation(rng)
    a = TriMesh(v, m.faces)
    b = TriMesh(v @ R.T + rng.normal(size=3), m.faces)
    assert np.allclose(vertex_normals(b), vertex_normals(a) @ R.T, atol=1e-9)


def test_barycentric_corner_centroid_midpoint():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert np.allclose(barycentric(m, 0, (0, 0, 0)).weights, (1, 0, 0))
    assert np.allclose(barycentric(m, 0, (1 / 3, 1 / 3, 0)).weights, (1 / 3, 1 / 3, 1 / 3))
    assert np.allclose(barycentric(m, 0, (0.5, 0, 0)).weights, (0.5, 0.5, 0))


def test_barycentric_off_plane_rejected():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    with pytest.raises(ValueError):
        barycentric(m, 0, (0.2, 0.2, 0.5))


def test_barycentric_degenerate_face():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], [[0, 1, 2], [0, 1, 3]],
                validate=False)
    with pytest.raises(DegenerateFace):
        barycentric(m, 0, (0.5, 0, 0))


def ring_mesh(n=8, hub=(0, 0, 1)):
    ang = 2 * np.pi * np.arange(n) / n
    v = np.vstack([hub, np.stack([np.cos(ang), np.sin(ang), np.zeros(n)], 1)])
    f = [(0, 1 + k, 1 + (k + 1) % n) for k in range(n)]
    return TriMesh(v, f)


def test_umbrella_moves_hub_to_centroid():
    out = umbrella_smooth(ring_mesh(), 1.0)
    assert np.allclose(out[0], 0.0, atol=1e-12)


def test_umbrella_flat_ring_hub_fixed():
    out = umbrella_smooth(ring_mesh(hub=(0, 0, 0)), 0.5)
    assert np.allclose(out[0], 0.0, atol=1e-12)


def test_umbrella_lambda_zero_identity():
    m = icosphere(2)
    assert np.array_equal(umbrella_smooth(m, 0.0), m.vertices)


def test_umbrella_rejects_bad_lambda():
    with pytest.raises(ValueError):
        umbrella_smooth(icosphere(1), 1.5)


def test_umbrella_does_not_mutate_input():
    m = icosphere(1)
    before = m.vertices.copy()
    umbrella_smooth(m, 0.5)
    assert np.array_equal(m.vertices, before)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.5))
def test_umbrella_decreases_dirichlet_energy(seed, lam):
    rng = np.random.default_rng(seed)
    m = icosphere(2)
    noisy = m.with_vertices(m.vertices + rng.normal(scale=0.05, size=m.vertices.shape))
    out = umbrella_smooth(noisy, lam)
    assert dirichlet_energy(noisy, out) < dirichlet_energy(noisy)
