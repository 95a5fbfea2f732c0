"""STL meshes and point-cloud files.

All coordinates are millimetres. Meshes are kept as an indexed triangle soup:
vertices are never merged, so a binary STL round-trips bit-exactly.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MeshFormatError",
    "CloudFormatError",
    "TriangleMesh",
    "PointCloud",
    "read_stl",
    "write_stl",
    "read_cloud",
    "write_cloud",
]

_FACET_DTYPE = np.dtype(
    [("normal", "<f4", (3,)), ("vertices", "<f4", (3, 3)), ("attr", "<u2")]
)
assert _FACET_DTYPE.itemsize == 50


class MeshFormatError(ValueError):
    """Malformed STL input."""


class CloudFormatError(ValueError):
    """Malformed point-cloud input."""


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = _frozen(self.vertices).reshape(-1, 3)
        t = _frozen(self.triangles, np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite vertex coordinates")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if t.size and np.any(
            (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        ):
            raise ValueError("triangle with repeated vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.normals is not None:
            n = _frozen(self.normals).reshape(-1, 3)
            if len(n) != len(t):
                raise ValueError("one normal per facet required")
            object.__setattr__(self, "normals", n)

    def __len__(self):
        return len(self.triangles)

    @property
    def corners(self) -> np.ndarray:
        """(n, 3, 3) array of facet corner coordinates."""
        return self.vertices[self.triangles]

    @property
    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @property
    def degenerate(self) -> np.ndarray:
        """Boolean mask of zero-area facets (kept, only flagged)."""
        return self.areas == 0.0

    @classmethod
    def from_corners(cls, corners, normals=None) -> "TriangleMesh":
        corners = np.asarray(corners, dtype=np.float64).reshape(-1, 3, 3)
        n = len(corners)
        return cls(corners.reshape(-1, 3), np.arange(3 * n).reshape(n, 3), normals)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    layers: np.ndarray | None = field(default=None)

    def __post_init__(self):
        p = _frozen(self.points).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", p)
        if self.layers is not None:
            lay = _frozen(self.layers, np.int64).reshape(-1)
            if len(lay) != len(p):
                raise ValueError("layer index count must match point count")
            if lay.size and lay.min() < 0:
                raise ValueError("layer indices must be non-negative")
            object.__setattr__(self, "layers", lay)

    def __len__(self):
        return len(self.points)

    def transformed(self, rotation, translation) -> "PointCloud":
        pts = self.points @ np.asarray(rotation, dtype=float).T + np.asarray(translation, dtype=float)
        return PointCloud(pts, self.layers)


# --------------------------------------------------------------------------- STL


def _facet_normals(corners):
    n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = np.where(norm > 0, n / norm, 0.0)
    return n


def _read_binary_stl(data: bytes) -> TriangleMesh:
    if len(data) < 84:
        raise MeshFormatError(f"truncated STL header at byte {len(data)} (need 84)")
    count = int(np.frombuffer(data, "<u4", count=1, offset=80)[0])
    expected = 84 + 50 * count
    if len(data) < expected:
        whole = (len(data) - 84) // 50
        raise MeshFormatError(
            f"truncated STL: declared {count} facets, facet {whole} incomplete "
            f"at byte {84 + 50 * whole}"
        )
    if len(data) > expected:
        raise MeshFormatError(
            f"facet count mismatch: declared {count} facets but file has "
            f"{len(data) - expected} trailing bytes after byte {expected}"
        )
    rec = np.frombuffer(data, _FACET_DTYPE, count=count, offset=84)
    corners = rec["vertices"].astype(np.float64)
    bad = ~np.isfinite(corners).reshape(count, -1).all(axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise MeshFormatError(f"non-finite coordinate in facet {k} at byte {84 + 50 * k}")
    normals = rec["normal"].astype(np.float64)
    normals = np.where(np.isfinite(normals), normals, 0.0)
    return TriangleMesh.from_corners(corners, normals)


_FLOAT = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?(?:nan|inf)\w*)"
_VERTEX_RE = re.compile(rf"^vertex\s+{_FLOAT}\s+{_FLOAT}\s+{_FLOAT}$", re.I)
_NORMAL_RE = re.compile(rf"^facet\s+normal\s+{_FLOAT}\s+{_FLOAT}\s+{_FLOAT}$", re.I)


def _read_ascii_stl(text: str) -> TriangleMesh:
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines or not lines[0][1].lower().startswith("solid"):
        raise MeshFormatError("line 1: expected 'solid'")
    corners, normals = [], []
    k = 1
    while k < len(lines):
        lineno, ln = lines[k]
        low = ln.lower()
        if low.startswith("endsolid"):
            break
        m = _NORMAL_RE.match(ln)
        if not m:
            raise MeshFormatError(f"line {lineno}: expected 'facet normal', got {ln!r}")
        nrm = [float(g) for g in m.groups()]
        k += 1
        if k >= len(lines) or lines[k][1].lower() != "outer loop":
            raise MeshFormatError(f"line {lines[min(k, len(lines) - 1)][0]}: expected 'outer loop'")
        k += 1
        tri = []
        for _ in range(3):
            if k >= len(lines):
                raise MeshFormatError(f"line {lines[-1][0]}: unexpected end of file in facet")
            lineno, ln = lines[k]
            m = _VERTEX_RE.match(ln)
            if not m:
                raise MeshFormatError(f"line {lineno}: expected 'vertex x y z', got {ln!r}")
            xyz = [float(g) for g in m.groups()]
            if not all(np.isfinite(xyz)):
                raise MeshFormatError(f"line {lineno}: non-finite coordinate")
            tri.append(xyz)
            k += 1
        for word in ("endloop", "endfacet"):
            if k >= len(lines) or lines[k][1].lower() != word:
                where = lines[min(k, len(lines) - 1)][0]
                raise MeshFormatError(f"line {where}: expected {word!r}")
            k += 1
        corners.append(tri)
        normals.append([v if np.isfinite(v) else 0.0 for v in nrm])
    else:
        raise MeshFormatError(f"line {lines[-1][0]}: missing 'endsolid'")
    return TriangleMesh.from_corners(
        np.array(corners, dtype=np.float64).reshape(-1, 3, 3),
        np.array(normals, dtype=np.float64).reshape(-1, 3),
    )


def read_stl(path) -> TriangleMesh:
    """Read a binary or ASCII STL file.

    A file whose size matches its binary facet count is read as binary even
    if the header starts with ``solid``.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) >= 84:
        count = int(np.frombuffer(data, "<u4", count=1, offset=80)[0])
        if len(data) == 84 + 50 * count:
            return _read_binary_stl(data)
    if data.lstrip()[:5].lower() == b"solid":
        try:
            text = data.decode("ascii")
        except UnicodeDecodeError:
            return _read_binary_stl(data)
        return _read_ascii_stl(text)
    return _read_binary_stl(data)


def write_stl(mesh: TriangleMesh, path, ascii: bool = False, name: str = "kneadforge"):
    corners = mesh.corners
    normals = mesh.normals if mesh.normals is not None else _facet_normals(corners)
    if ascii:
        out = [f"solid {name}"]
        for tri, n in zip(corners.tolist(), normals.tolist()):
            out.append(f"  facet normal {n[0]!r} {n[1]!r} {n[2]!r}")
            out.append("    outer loop")
            for v in tri:
                out.append(f"      vertex {v[0]!r} {v[1]!r} {v[2]!r}")
            out.append("    endloop")
            out.append("  endfacet")
        out.append(f"endsolid {name}")
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(out) + "\n")
        return
    rec = np.zeros(len(corners), dtype=_FACET_DTYPE)
    rec["normal"] = normals
    rec["vertices"] = corners
    header = name.encode("ascii")[:80].ljust(80, b" ")
    if header.lower().startswith(b"solid"):
        header = b"binary " + header[:73]
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.uint32(len(corners)).astype("<u4").tobytes())
        fh.write(rec.tobytes())


# ------------------------------------------------------------------------ clouds


def _fmt(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower().replace("_", "-")
        if fmt in ("ply", "ply-ascii"):
            return "ply-ascii"
        if fmt == "csv":
            return "csv"
        raise ValueError(f"unknown cloud format {fmt!r}")
    ext = os.path.splitext(str(path))[1].lower()
    return "ply-ascii" if ext == ".ply" else "csv"


def write_cloud(cloud: PointCloud, path, format: str | None = None):
    """Write ``cloud`` as CSV (``x,y,z[,layer]``) or ASCII PLY.

    Floats are written with their shortest round-trip representation, so
    reading the file back reproduces every coordinate exactly.
    """
    fmt = _infer_format(path, format)
    pts = cloud.points
    lay = cloud.layers
    rows = []
    if lay is None:
        for x, y, z in pts.tolist():
            rows.append(f"{_fmt(x)},{_fmt(y)},{_fmt(z)}")
    else:
        for (x, y, z), k in zip(pts.tolist(), lay.tolist()):
            rows.append(f"{_fmt(x)},{_fmt(y)},{_fmt(z)},{k}")
    if fmt == "csv":
        header = "x,y,z" + (",layer" if lay is not None else "")
        body = [header] + rows
    else:
        header = [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(pts)}",
            "property double x",
            "property double y",
            "property double z",
        ]
        if lay is not None:
            header.append("property int layer")
        header.append("end_header")
        body = header + [r.replace(",", " ") for r in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(body) + "\n")


def _parse_rows(lines, first_lineno, ncols, sep):
    pts, lay = [], []
    for offset, ln in enumerate(lines):
        lineno = first_lineno + offset
        if not ln.strip():
            continue
        parts = ln.strip().split(sep) if sep else ln.split()
        if len(parts) != ncols:
            raise CloudFormatError(f"line {lineno}: expected {ncols} fields, got {len(parts)}")
        try:
            xyz = [float(p) for p in parts[:3]]
        except ValueError:
            raise CloudFormatError(f"line {lineno}: unparseable coordinate in {ln.strip()!r}") from None
        if not all(np.isfinite(xyz)):
            raise CloudFormatError(f"line {lineno}: non-finite coordinate")
        pts.append(xyz)
        if ncols == 4:
            try:
                k = int(parts[3])
            except ValueError:
                raise CloudFormatError(f"line {lineno}: bad layer index {parts[3]!r}") from None
            if k < 0:
                raise CloudFormatError(f"line {lineno}: negative layer index")
            lay.append(k)
    pts = np.array(pts, dtype=np.float64).reshape(-1, 3)
    return PointCloud(pts, np.array(lay, dtype=np.int64) if ncols == 4 else None)


def read_cloud(path, format: str | None = None) -> PointCloud:
    fmt = _infer_format(path, format)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if fmt == "csv":
        head = lines[0].strip().replace(" ", "") if lines else ""
        if head not in ("x,y,z", "x,y,z,layer"):
            raise CloudFormatError("line 1: missing header 'x,y,z[,layer]'")
        return _parse_rows(lines[1:], 2, 4 if head.endswith("layer") else 3, ",")
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError("line 1: missing 'ply' magic")
    props, count, k = [], None, 1
    while k < len(lines):
        ln = lines[k].strip()
        k += 1
        if ln == "end_header":
            break
        words = ln.split()
        if words[:1] == ["format"] and words[1:2] != ["ascii"]:
            raise CloudFormatError(f"line {k}: only ascii PLY is supported")
        if words[:2] == ["element", "vertex"]:
            count = int(words[2])
        elif words[:1] == ["property"]:
            props.append(words[-1])
    else:
        raise CloudFormatError("missing 'end_header'")
    if count is None or props[:3] != ["x", "y", "z"]:
        raise CloudFormatError("PLY header must declare vertex x, y, z")
    ncols = 4 if props[3:4] == ["layer"] else 3
    body = lines[k : k + count]
    if len([b for b in body if b.strip()]) != count:
        raise CloudFormatError(f"PLY declares {count} vertices, found fewer")
    return _parse_rows(body, k + 1, ncols, None)
