"""Triangle meshes, pinhole cameras and the small geometric kernels built on them.

Conventions: a camera maps world points with ``x_cam = R @ x_world + t`` and
its centre is ``-R.T @ t``.  Pixel ``(u, v)`` covers ``[u, u+1) x [v, v+1)``
and is sampled at its centre ``(u + 0.5, v + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import (
    BehindCamera,
    DegenerateFace,
    InvalidCamera,
    InvalidMesh,
    NonPositiveDepth,
    ZeroNormal,
)

MIN_DEPTH = 1e-9


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh.

    Arrays are stored read-only; operations that move vertices return a new
    mesh (see :meth:`with_vertices`).
    """

    vertices: np.ndarray
    faces: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "faces", _readonly(f))
        if self.validate:
            self._check()

    def _check(self):
        v, f = self.vertices, self.faces
        if len(f) == 0:
            return
        if f.min() < 0 or f.max() >= len(v):
            raise InvalidMesh("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise InvalidMesh("face with repeated vertex index")
        tol = 1e-12 * self.bbox_diag**2
        bad = np.flatnonzero(self.face_areas <= tol)
        if len(bad):
            raise InvalidMesh(f"degenerate face {int(bad[0])} (area below {tol:.3g})")

    def with_vertices(self, vertices) -> "TriMesh":
        # topology is unchanged, so skip the degeneracy scan: evolving meshes
        # may pass through near-flat triangles
        return TriMesh(vertices, self.faces, validate=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def bbox_diag(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    @cached_property
    def _face_cross(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return _readonly(0.5 * np.linalg.norm(self._face_cross, axis=1))

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit face normals following the right-hand rule on the winding."""
        c = self._face_cross
        n = np.linalg.norm(c, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(n > 0, c / n, 0.0)
        return _readonly(out)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return _readonly(np.unique(e, axis=0))

    @cached_property
    def adjacency_matrix(self) -> sparse.csr_matrix:
        n = self.n_vertices
        e = self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def vertex_adjacency(self) -> tuple:
        """Sorted neighbour index arrays, one per vertex."""
        a = self.adjacency_matrix
        return tuple(_readonly(a.indices[a.indptr[i]:a.indptr[i + 1]].copy())
                     for i in range(self.n_vertices))

    @cached_property
    def mean_edge_length(self) -> float:
        e = self.edges
        if len(e) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())


@dataclass(frozen=True, eq=False)
class CameraView:
    """Pinhole camera with an optional grayscale image in [0, 1]."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int
    image: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        R = _readonly(np.array(self.rotation, dtype=np.float64).reshape(3, 3))
        t = _readonly(np.array(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidCamera("focal length must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidCamera("image size must be positive")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise InvalidCamera("rotation is not orthonormal")
        if self.image is not None:
            img = _readonly(np.array(self.image, dtype=np.float64))
            if img.shape != (self.height, self.width):
                raise InvalidCamera(
                    f"image shape {img.shape} does not match {self.height}x{self.width}")
            object.__setattr__(self, "image", img)

    @classmethod
    def look_at(cls, eye, target, up, focal, width, height, image=None, name=""):
        """Camera at ``eye`` looking at ``target`` with image y pointing down."""
        eye = np.asarray(eye, float)
        z = np.asarray(target, float) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, float))
        if np.linalg.norm(x) < 1e-12:
            raise InvalidCamera("up vector parallel to viewing direction")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return cls(focal, focal, width / 2.0, height / 2.0, R, -R @ eye,
                   width, height, image=image, name=name)

    def with_image(self, image) -> "CameraView":
        return CameraView(self.fx, self.fy, self.cx, self.cy, self.rotation,
                          self.translation, self.width, self.height, image, self.name)

    @cached_property
    def center(self) -> np.ndarray:
        return _readonly(-self.rotation.T @ self.translation)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, float) @ self.rotation.T + self.translation

    def project_points(self, points):
        """Vectorised projection; no depth check. Returns ``(pixels, depths)``."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def unproject_points(self, pixels, depths) -> np.ndarray:
        pixels = np.asarray(pixels, float)
        d = np.asarray(depths, float)
        xc = (pixels[..., 0] - self.cx) / self.fx * d
        yc = (pixels[..., 1] - self.cy) / self.fy * d
        pc = np.stack([xc, yc, d], axis=-1)
        return (pc - self.translation) @ self.rotation

    def pixel_rays(self) -> np.ndarray:
        """World-space ray directions through every pixel centre, unit z in camera frame.

        Shape ``(height, width, 3)``; ``center + depth * ray`` is the point at that depth.
        """
        u = np.arange(self.width) + 0.5
        v = np.arange(self.height) + 0.5
        uu, vv = np.meshgrid(u, v)
        dc = np.stack([(uu - self.cx) / self.fx, (vv - self.cy) / self.fy,
                       np.ones_like(uu)], axis=-1)
        return dc @ self.rotation


def project(camera: CameraView, point):
    """Project one world point; returns ``(pixel, depth)``.

    Raises BehindCamera when the camera-frame depth is not positive.
    """
    pix, z = camera.project_points(np.asarray(point, float))
    if not z > MIN_DEPTH:
        raise BehindCamera(f"point at depth {float(z):.3g} is behind the camera")
    return pix, float(z)


def unproject(camera: CameraView, pixel, depth: float) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    return camera.unproject_points(np.asarray(pixel, float), depth)


def vertex_normals(mesh: TriMesh, allow_zero: bool = False) -> np.ndarray:
    """Area-weighted average of incident face normals, normalised per vertex."""
    acc = np.zeros((mesh.n_vertices, 3))
    cross = mesh._face_cross  # |cross| = 2 * area, so this is area weighting
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], cross)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    zero = norm[:, 0] <= 0
    if zero.any() and not allow_zero:
        raise ZeroNormal(f"vertex {int(np.flatnonzero(zero)[0])} has no defined normal")
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(zero[:, None], 0.0, acc / np.where(norm > 0, norm, 1.0))


@dataclass(frozen=True)
class BarycentricWeight:
    face_index: int
    weights: tuple


def barycentric(mesh: TriMesh, face_index: int, point) -> BarycentricWeight:
    a, b, c = mesh.vertices[mesh.faces[face_index]]
    p = np.asarray(point, float)
    e0, e1, ep = b - a, c - a, p - a
    d00, d01, d11 = e0 @ e0, e0 @ e1, e1 @ e1
    denom = d00 * d11 - d01 * d01
    if denom <= 1e-24 * max(d00 * d11, 1e-300):
        raise DegenerateFace(f"face {face_index} is degenerate")
    n = np.cross(e0, e1)
    off_plane = abs(ep @ n) / np.linalg.norm(n)
    if off_plane > 1e-6 * max(mesh.bbox_diag, 1e-300):
        raise ValueError(f"point is {off_plane:.3g} away from the plane of face {face_index}")
    d20, d21 = ep @ e0, ep @ e1
    w1 = (d11 * d20 - d01 * d21) / denom
    w2 = (d00 * d21 - d01 * d20) / denom
    w = np.clip([1.0 - w1 - w2, w1, w2], 0.0, 1.0)
    w = w / w.sum()
    return BarycentricWeight(int(face_index), tuple(float(x) for x in w))


def umbrella_smooth(mesh: TriMesh, lam: float) -> np.ndarray:
    """One umbrella-operator step; returns new vertex positions.

    Each vertex moves to ``(1 - lam) * x + lam * mean(neighbours)``.
    Isolated vertices stay put.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"smoothing weight must lie in [0, 1], got {lam}")
    v = mesh.vertices
    if lam == 0.0:
        return v.copy()
    A = mesh.adjacency_matrix
    deg = np.asarray(A.sum(axis=1)).ravel()
    nbr_sum = A @ v
    out = v.copy()
    has = deg > 0
    mean = nbr_sum[has] / deg[has, None]
    out[has] = (1.0 - lam) * v[has] + lam * mean
    return out


def dirichlet_energy(mesh: TriMesh, vertices=None) -> float:
    v = mesh.vertices if vertices is None else vertices
    e = mesh.edges
    return float(((v[e[:, 0]] - v[e[:, 1]]) ** 2).sum())


# ---------------------------------------------------------------------------
# primitive meshes
# ---------------------------------------------------------------------------

def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Geodesic sphere with outward (counter-clockwise) winding."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = [np.array(p, float) / np.linalg.norm(p) for p in verts]
    f = faces
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriMesh(np.array(v) * radius + np.asarray(center, float), np.array(f))


def grid_mesh(nx: int, ny: int, origin, axis_u, axis_v) -> TriMesh:
    """Planar ``nx`` x ``ny`` quad grid split into triangles.

    Vertices sit at ``origin + i/nx * axis_u + j/ny * axis_v``; the face
    normal is ``axis_u x axis_v``.
    """
    origin, au, av = (np.asarray(a, float) for a in (origin, axis_u, axis_v))
    i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="xy")
    verts = origin + (i.ravel() / nx)[:, None] * au + (j.ravel() / ny)[:, None] * av
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriMesh(verts, faces)


def merge_meshes(*meshes: TriMesh) -> TriMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += m.n_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(faces))
