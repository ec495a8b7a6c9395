"""File formats: meshes (PLY, OBJ), camera lists, images and depth maps.

Parse failures raise :class:`FormatError` carrying the file path and, for
text formats, the 1-based line number.
"""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, InvalidCamera, InvalidMesh
from .geometry import CameraView, TriMesh

logger = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

def read_mesh(path) -> TriMesh:
    """Load a triangle mesh from ``.ply`` or ``.obj``."""
    path = Path(path)
    if not path.is_file():
        raise FormatError("no such file", path)
    ext = path.suffix.lower()
    if ext == ".ply":
        v, f = _read_ply(path)
    elif ext == ".obj":
        v, f = _read_obj(path)
    else:
        raise FormatError(f"unsupported mesh extension {ext!r}", path)
    try:
        return TriMesh(v, f)
    except InvalidMesh as exc:
        raise FormatError(str(exc), path) from exc


def _parse_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise FormatError("missing 'ply' magic", path, 1)
    fmt, elements, line_no = None, [], 1
    while True:
        raw = fh.readline()
        line_no += 1
        if not raw:
            raise FormatError("header ended without end_header", path, line_no)
        tok = raw.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise FormatError(f"unsupported format line {raw.strip()!r}", path, line_no)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise FormatError("malformed element line", path, line_no)
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise FormatError("property before any element", path, line_no)
            if len(tok) == 5 and tok[1] == "list":
                if tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise FormatError("unknown list property type", path, line_no)
                elements[-1]["props"].append((tok[4], _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            elif len(tok) == 3 and tok[1] in _PLY_TYPES:
                elements[-1]["props"].append((tok[2], _PLY_TYPES[tok[1]], None))
            else:
                raise FormatError(f"malformed property line {raw.strip()!r}", path, line_no)
        else:
            raise FormatError(f"unexpected header keyword {tok[0]!r}", path, line_no)
    if fmt is None:
        raise FormatError("header has no format line", path)
    return fmt, elements, line_no


def _read_ply(path, need_faces=True):
    with open(path, "rb") as fh:
        fmt, elements, line_no = _parse_header(fh, path)
        body = fh.read()
    names = [e["name"] for e in elements]
    if "vertex" not in names or (need_faces and "face" not in names):
        raise FormatError("PLY needs both vertex and face elements", path)
    for e in elements:
        if e["name"] not in ("vertex", "face"):
            logger.warning("%s: ignoring PLY element %r", path, e["name"])
    if fmt == "ascii":
        data = _ply_ascii(body, elements, path, line_no)
    else:
        order = "<" if fmt == "binary_little_endian" else ">"
        data = _ply_binary(body, elements, order, path)
    return data["vertex"], data.get("face")


def _extract(element, cols, lists, path):
    """Turn parsed property columns into vertex or face arrays."""
    if element["name"] == "vertex":
        try:
            return np.stack([np.asarray(cols[k], float) for k in "xyz"], axis=1) \
                if element["count"] else np.zeros((0, 3))
        except KeyError:
            raise FormatError("vertex element lacks x/y/z properties", path) from None
    key = next((k for k in ("vertex_indices", "vertex_index") if k in lists), None)
    if key is None:
        raise FormatError("face element lacks a vertex_indices list", path)
    rows = lists[key]
    if any(len(r) != 3 for r in rows):
        raise FormatError("only triangular faces are supported", path)
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def _ply_ascii(body, elements, path, header_lines):
    lines = body.decode("ascii", errors="replace").splitlines()
    pos, out = 0, {}
    for e in elements:
        cols = {p[0]: [] for p in e["props"] if p[2] is None}
        lists = {p[0]: [] for p in e["props"] if p[2] is not None}
        for _ in range(e["count"]):
            while pos < len(lines) and not lines[pos].strip():
                pos += 1
            line_no = header_lines + pos + 1
            if pos >= len(lines):
                raise FormatError(f"file ends inside element {e['name']!r}", path, line_no)
            tok = lines[pos].split()
            pos += 1
            k = 0
            try:
                for name, typ, item in e["props"]:
                    if item is None:
                        cols[name].append(float(tok[k]) if typ[0] == "f" else int(tok[k]))
                        k += 1
                    else:
                        n = int(tok[k])
                        vals = tok[k + 1:k + 1 + n]
                        if len(vals) != n:
                            raise IndexError
                        lists[name].append([int(v) for v in vals])
                        k += 1 + n
            except (IndexError, ValueError):
                raise FormatError(f"malformed {e['name']} row", path, line_no) from None
            if k != len(tok):
                raise FormatError(f"extra values on {e['name']} row", path, line_no)
        if e["name"] in ("vertex", "face"):
            out[e["name"]] = _extract(e, cols, lists, path)
    return out


def _ply_binary(body, elements, order, path):
    buf = memoryview(body)
    off, out = 0, {}
    for e in elements:
        props = e["props"]
        if all(p[2] is None for p in props):
            dt = np.dtype([(p[0], order + p[1]) for p in props])
            need = dt.itemsize * e["count"]
            if off + need > len(buf):
                raise FormatError(f"file ends inside element {e['name']!r}", path)
            arr = np.frombuffer(buf[off:off + need], dtype=dt)
            off += need
            cols = {p[0]: arr[p[0]] for p in props}
            lists = {}
        elif (fast := _triangle_records(buf, off, e, order)) is not None:
            arr, off = fast
            cols, lists = {}, {props[0][0]: arr}
        else:
            cols = {p[0]: [] for p in props if p[2] is None}
            lists = {p[0]: [] for p in props if p[2] is not None}
            for _ in range(e["count"]):
                for name, typ, item in props:
                    if item is None:
                        dt = np.dtype(order + typ)
                        if off + dt.itemsize > len(buf):
                            raise FormatError(f"file ends inside element {e['name']!r}", path)
                        cols[name].append(np.frombuffer(buf[off:off + dt.itemsize], dt)[0])
                        off += dt.itemsize
                    else:
                        ct, it = np.dtype(order + typ), np.dtype(order + item)
                        if off + ct.itemsize > len(buf):
                            raise FormatError(f"file ends inside element {e['name']!r}", path)
                        n = int(np.frombuffer(buf[off:off + ct.itemsize], ct)[0])
                        off += ct.itemsize
                        if n < 0 or off + n * it.itemsize > len(buf):
                            raise FormatError(f"file ends inside element {e['name']!r}", path)
                        lists[name].append(np.frombuffer(buf[off:off + n * it.itemsize], it).tolist())
                        off += n * it.itemsize
        if e["name"] in ("vertex", "face"):
            out[e["name"]] = _extract(e, cols, lists, path)
    return out


def _triangle_records(buf, off, element, order):
    """Vectorised read of a lone list property whose rows all hold three items."""
    props = element["props"]
    if len(props) != 1 or props[0][2] is None:
        return None
    _, ct, it = props[0]
    dt = np.dtype([("n", order + ct), ("i", order + it, 3)])
    need = dt.itemsize * element["count"]
    if off + need > len(buf):
        return None
    rec = np.frombuffer(buf[off:off + need], dtype=dt)
    if not (rec["n"] == 3).all():
        return None
    return rec["i"].astype(np.int64), off + need


def _read_obj(path):
    verts, faces, skipped = [], [], set()
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, 1):
            tok = line.split("#", 1)[0].split()
            if not tok:
                continue
            if tok[0] == "v":
                try:
                    verts.append([float(t) for t in tok[1:4]])
                except ValueError:
                    raise FormatError("malformed vertex", path, line_no) from None
                if len(verts[-1]) != 3:
                    raise FormatError("vertex needs three coordinates", path, line_no)
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise FormatError("only triangular faces are supported", path, line_no)
                idx = []
                for t in tok[1:]:
                    try:
                        k = int(t.split("/")[0])
                    except ValueError:
                        raise FormatError("malformed face index", path, line_no) from None
                    if k == 0:
                        raise FormatError("face index 0 is not valid in OBJ", path, line_no)
                    idx.append(k - 1 if k > 0 else len(verts) + k)
                if min(idx) < 0 or max(idx) >= len(verts):
                    raise FormatError("face references a vertex not yet defined", path, line_no)
                faces.append(idx)
            elif tok[0] not in skipped:
                skipped.add(tok[0])
                logger.warning("%s: ignoring OBJ records of type %r", path, tok[0])
    if not faces:
        raise FormatError("no faces found", path)
    return np.asarray(verts, float).reshape(-1, 3), np.asarray(faces, np.int64)


def write_ply(path, mesh: TriMesh, binary: bool = True):
    """Write vertices and faces; binary little-endian by default."""
    v = np.asarray(mesh.vertices, float)
    f = np.asarray(mesh.faces)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (f"ply\nformat {fmt} 1.0\nelement vertex {len(v)}\n"
              "property double x\nproperty double y\nproperty double z\n"
              f"element face {len(f)}\nproperty list uchar int vertex_indices\nend_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(v.astype("<f8").tobytes())
            rec = np.empty(len(f), dtype=[("n", "u1"), ("i", "<i4", 3)])
            rec["n"] = 3
            rec["i"] = f
            fh.write(rec.tobytes())
        else:
            for p in v:
                fh.write(("%s %s %s\n" % tuple(repr(float(c)) for c in p)).encode("ascii"))
            for t in f:
                fh.write(("3 %d %d %d\n" % tuple(t)).encode("ascii"))


def read_points(path) -> np.ndarray:
    """Point cloud from a PLY (vertex element; faces ignored) or a whitespace ``.xyz``/``.txt`` file."""
    path = Path(path)
    if not path.is_file():
        raise FormatError("no such file", path)
    if path.suffix.lower() == ".ply":
        pts, _ = _read_ply(path, need_faces=False)
        return pts
    rows = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, 1):
            tok = line.split("#", 1)[0].split()
            if not tok:
                continue
            try:
                rows.append([float(t) for t in tok[:3]])
            except ValueError:
                raise FormatError("non-numeric coordinate", path, line_no) from None
            if len(rows[-1]) != 3:
                raise FormatError("expected three coordinates", path, line_no)
    return np.asarray(rows, float).reshape(-1, 3)


def write_points(path, points):
    pts = np.asarray(points, "<f8").reshape(-1, 3)
    header = (f"ply\nformat binary_little_endian 1.0\nelement vertex {len(pts)}\n"
              "property double x\nproperty double y\nproperty double z\nend_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pts.tobytes())


def write_obj(path, mesh: TriMesh):
    with open(path, "w", encoding="ascii") as fh:
        for p in mesh.vertices:
            fh.write("v %r %r %r\n" % tuple(float(c) for c in p))
        for t in mesh.faces:
            fh.write("f %d %d %d\n" % tuple(int(i) + 1 for i in t))


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------

def read_cameras(path) -> list:
    """Cameras from a text file, one per line:
    ``id fx fy cx cy width height r11 .. r33 t1 t2 t3``.  ``#`` starts a comment.
    """
    path = Path(path)
    if not path.is_file():
        raise FormatError("no such file", path)
    cams, seen = [], set()
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, 1):
            tok = line.split("#", 1)[0].split()
            if not tok:
                continue
            if len(tok) != 19:
                raise FormatError(f"expected 19 fields, found {len(tok)}", path, line_no)
            cid = tok[0]
            if cid in seen:
                raise FormatError(f"duplicate camera id {cid!r}", path, line_no)
            seen.add(cid)
            try:
                fx, fy, cx, cy = (float(t) for t in tok[1:5])
                w, h = int(tok[5]), int(tok[6])
                rot = np.array([float(t) for t in tok[7:16]]).reshape(3, 3)
                tr = np.array([float(t) for t in tok[16:19]])
            except ValueError:
                raise FormatError("non-numeric camera field", path, line_no) from None
            try:
                cams.append(CameraView(fx, fy, cx, cy, rot, tr, w, h, name=cid))
            except InvalidCamera as exc:
                raise FormatError(str(exc), path, line_no) from exc
    if not cams:
        raise FormatError("no cameras found", path)
    return cams


def write_cameras(path, cameras):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# id fx fy cx cy width height r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3\n")
        for k, c in enumerate(cameras):
            name = c.name or str(k)
            vals = [c.fx, c.fy, c.cx, c.cy]
            fields = [name] + [repr(float(x)) for x in vals] + [str(c.width), str(c.height)]
            fields += [repr(float(x)) for x in np.asarray(c.rotation).ravel()]
            fields += [repr(float(x)) for x in np.asarray(c.translation).ravel()]
            fh.write(" ".join(fields) + "\n")


# ---------------------------------------------------------------------------
# images and depth maps
# ---------------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """Grayscale image as float64 in [0, 1]; colour inputs are converted to luminance."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise FormatError("no such file", path) from None
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot decode image ({exc})", path) from None
    return arr


def _to_u8(img):
    a = np.asarray(img, float)
    return np.clip(np.round(np.nan_to_num(a, nan=0.0) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img):
    """8-bit binary PGM of an image with values in [0, 1]."""
    a = _to_u8(img)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (a.shape[1], a.shape[0]))
        fh.write(a.tobytes())


def write_png(path, img):
    Image.fromarray(_to_u8(img), mode="L").save(path, format="PNG")


def load_images(cameras, directory) -> list:
    """Attach ``<name>.pgm`` or ``<name>.png`` from ``directory`` to each camera."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError("image directory not found", directory)
    out = []
    for c in cameras:
        for ext in (".pgm", ".png", ".PGM", ".PNG"):
            p = directory / f"{c.name}{ext}"
            if p.is_file():
                break
        else:
            raise FormatError(f"no image for camera {c.name!r}", directory)
        img = read_image(p)
        if img.shape != (c.height, c.width):
            raise FormatError(f"image is {img.shape[1]}x{img.shape[0]}, camera expects "
                              f"{c.width}x{c.height}", p)
        out.append(c.with_image(img))
    return out


def write_pfm(path, depth):
    """32-bit float PFM; uncovered (infinite) pixels are stored as +inf."""
    d = np.asarray(depth, dtype=np.float32)
    h, w = d.shape
    scale = -1.0 if sys.byteorder == "little" else 1.0
    with open(path, "wb") as fh:
        fh.write(b"Pf\n%d %d\n%s\n" % (w, h, repr(scale).encode("ascii")))
        fh.write(np.flipud(d).astype(np.float32).tobytes())  # PFM rows run bottom-up


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise FormatError("not a grayscale PFM", path, 1)
        try:
            w, h = (int(t) for t in fh.readline().split())
            scale = float(fh.readline())
        except ValueError:
            raise FormatError("malformed PFM header", path) from None
        data = np.frombuffer(fh.read(), dtype="<f4" if scale < 0 else ">f4")
    if data.size != w * h:
        raise FormatError("PFM payload size does not match header", path)
    return np.flipud(data.reshape(h, w)).astype(np.float64)


def write_depth_png16(path, depth):
    """Depth normalised to the covered range as 16-bit PNG (0 = uncovered)."""
    d = np.asarray(depth, float)
    cov = np.isfinite(d)
    out = np.zeros(d.shape, dtype=np.uint16)
    if cov.any():
        lo, hi = d[cov].min(), d[cov].max()
        span = hi - lo if hi > lo else 1.0
        out[cov] = np.round(1 + (d[cov] - lo) / span * 65534).astype(np.uint16)
    Image.fromarray(out).save(path, format="PNG")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
