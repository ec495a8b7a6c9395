import numpy as np
import pytest
from PIL import Image

from mvsrefine import io
from mvsrefine.errors import FormatError, InvalidCamera
from mvsrefine.geometry import CameraView, icosphere


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip(tmp_path, binary):
    m = icosphere(2)
    io.write_ply(tmp_path / "m.ply", m, binary=binary)
    back = io.read_mesh(tmp_path / "m.ply")
    assert np.array_equal(back.faces, m.faces)
    assert np.array_equal(back.vertices, m.vertices)


def test_obj_round_trip(tmp_path):
    m = icosphere(1)
    io.write_obj(tmp_path / "m.obj", m)
    back = io.read_mesh(tmp_path / "m.obj")
    assert np.array_equal(back.faces, m.faces)
    assert np.allclose(back.vertices, m.vertices, atol=1e-15)


def test_obj_negative_indices_and_ignored_records(tmp_path, caplog):
    p = tmp_path / "t.obj"
    p.write_text("# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3//1 -2//1 -1//1\n")
    m = io.read_mesh(p)
    assert m.faces.tolist() == [[0, 1, 2]]
    assert "vn" in caplog.text


def test_obj_quad_rejected_with_line(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(FormatError) as ei:
        io.read_mesh(p)
    assert ei.value.line == 5 and str(p) in str(ei.value)


def test_ascii_ply_error_names_line(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                 "property float z\nelement face 1\nproperty list uchar int vertex_indices\n"
                 "end_header\n0 0 0\n1 0 0\n0 oops 0\n3 0 1 2\n")
    with pytest.raises(FormatError) as ei:
        io.read_mesh(p)
    assert ei.value.line == 12


def test_ply_extra_elements_ignored(tmp_path):
    p = tmp_path / "e.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                 "property float z\nproperty uchar red\nelement face 1\n"
                 "property list uchar int vertex_indices\nelement edge 1\nproperty int a\n"
                 "property int b\nend_header\n0 0 0 9\n1 0 0 9\n0 1 0 9\n3 0 1 2\n0 1\n")
    m = io.read_mesh(p)
    assert m.n_faces == 1 and m.n_vertices == 3


def test_unknown_extension(tmp_path):
    p = tmp_path / "m.stl"
    p.write_text("solid\n")
    with pytest.raises(FormatError):
        io.read_mesh(p)


def test_points_round_trip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(50, 3))
    io.write_points(tmp_path / "p.ply", pts)
    assert np.array_equal(io.read_points(tmp_path / "p.ply"), pts)
    np.savetxt(tmp_path / "p.xyz", pts, fmt="%.17g")
    assert np.array_equal(io.read_points(tmp_path / "p.xyz"), pts)


def test_cameras_round_trip(tmp_path):
    cams = [CameraView.look_at((3, 1, 2), (0, 0, 0), (0, 0, 1), 120.5, 64, 48, name="0"),
            CameraView.look_at((-2, 2, 1), (0, 0, 0), (0, 0, 1), 80, 64, 48, name="1")]
    io.write_cameras(tmp_path / "c.txt", cams)
    back = io.read_cameras(tmp_path / "c.txt")
    for a, b in zip(cams, back):
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)
        assert (a.fx, a.fy, a.cx, a.cy, a.width, a.height) == (b.fx, b.fy, b.cx, b.cy, b.width, b.height)


def test_camera_file_errors(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\n0 100 100 32 32 64 64 1 0 0 0 1 0 0 0 1 0 0 0\n1 100 100 32\n")
    with pytest.raises(FormatError) as ei:
        io.read_cameras(p)
    assert ei.value.line == 3
    p.write_text("0 100 100 32 32 64 64 1 0 0 0 1 0 0 0 1 0 0 0\n"
                 "0 100 100 32 32 64 64 1 0 0 0 1 0 0 0 1 0 0 0\n")
    with pytest.raises(FormatError):
        io.read_cameras(p)
    p.write_text("0 100 100 32 32 64 64 2 0 0 0 1 0 0 0 1 0 0 0\n")
    with pytest.raises((FormatError, InvalidCamera)):
        io.read_cameras(p)


def test_pgm_and_png_read(tmp_path):
    img = np.random.default_rng(1).random((10, 12))
    io.write_pgm(tmp_path / "a.pgm", img)
    back = io.read_image(tmp_path / "a.pgm")
    assert back.shape == img.shape and np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    io.write_png(tmp_path / "a.png", img)
    assert np.array_equal(io.read_image(tmp_path / "a.png"), back)


def test_color_image_converted_by_luminance(tmp_path):
    rgb = np.zeros((4, 4, 3), np.uint8)
    rgb[..., 0] = 255
    Image.fromarray(rgb).save(tmp_path / "red.png")
    g = io.read_image(tmp_path / "red.png")
    assert np.allclose(g, round(0.299 * 255) / 255, atol=1 / 255)


def test_load_images_shape_check(tmp_path):
    cam = CameraView(50, 50, 8, 8, np.eye(3), (0, 0, 0), 16, 16, name="c0")
    io.write_pgm(tmp_path / "c0.pgm", np.zeros((8, 8)))
    with pytest.raises((FormatError, InvalidCamera)):
        io.load_images([cam], tmp_path)


def test_pfm_round_trip(tmp_path):
    d = np.random.default_rng(2).uniform(1, 3, (7, 9))
    d[0, 0] = np.inf
    io.write_pfm(tmp_path / "d.pfm", d)
    back = io.read_pfm(tmp_path / "d.pfm")
    assert np.array_equal(back, d.astype(np.float32))


def test_depth_png16(tmp_path):
    d = np.array([[1.0, 2.0], [np.inf, 3.0]])
    io.write_depth_png16(tmp_path / "d.png", d)
    raw = np.array(Image.open(tmp_path / "d.png"))
    assert raw[1, 0] == 0 and raw[0, 0] == 1 and raw[1, 1] == 65535
