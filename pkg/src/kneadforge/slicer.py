"""Layered contour extraction: slice a mesh, hull each layer, resample."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh_io import PointCloud, TriangleMesh

__all__ = [
    "DegenerateLayerError",
    "Layer",
    "LayeredContourCloud",
    "RawLayer",
    "slice_mesh",
    "hull_layer",
    "resample_contour",
    "polygon_centroid",
    "slice_to_cloud",
]

SNAP = 1e-9


class DegenerateLayerError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    z: float
    r: np.ndarray
    theta: np.ndarray
    center: np.ndarray
    perimeter: float

    def xy(self) -> np.ndarray:
        return self.center + np.column_stack((self.r * np.cos(self.theta), self.r * np.sin(self.theta)))


class LayeredContourCloud:
    """Per-layer polar contour samples sharing one point count.

    ``r`` and ``theta`` are ``(layers, N)`` arrays measured about each
    layer's ``centers`` row; ``theta`` lies in (-pi, pi] and runs CCW.
    """

    def __init__(self, z, r, theta, centers, perimeters):
        z = np.array(z, dtype=float).reshape(-1)
        r = np.array(r, dtype=float)
        r = r.reshape(len(z), -1) if len(z) else r.reshape(0, r.shape[-1] if r.ndim > 1 else 0)
        theta = np.array(theta, dtype=float).reshape(r.shape)
        centers = np.array(centers, dtype=float).reshape(len(z), 2)
        perimeters = np.array(perimeters, dtype=float).reshape(len(z))
        if len(z) > 1 and np.any(np.diff(z) <= 0):
            raise ValueError("layer heights must be strictly increasing")
        if r.size and r.min() < 0:
            raise ValueError("radii must be non-negative")
        for a in (z, r, theta, centers, perimeters):
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite contour data")
            a.setflags(write=False)
        self.z, self.r, self.theta, self.centers, self.perimeters = z, r, theta, centers, perimeters

    def __len__(self):
        return len(self.z)

    def __getitem__(self, k) -> Layer:
        return Layer(float(self.z[k]), self.r[k], self.theta[k], self.centers[k], float(self.perimeters[k]))

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def n_points(self) -> int:
        return self.r.shape[1]

    @property
    def layer_step(self) -> float:
        if len(self.z) < 2:
            return 0.0
        return float((self.z[-1] - self.z[0]) / (len(self.z) - 1))

    def xyz(self) -> np.ndarray:
        """(layers, N, 3) Cartesian samples."""
        x = self.centers[:, :1] + self.r * np.cos(self.theta)
        y = self.centers[:, 1:] + self.r * np.sin(self.theta)
        z = np.broadcast_to(self.z[:, None], self.r.shape)
        return np.stack((x, y, z), axis=-1)

    def to_point_cloud(self) -> PointCloud:
        pts = self.xyz().reshape(-1, 3)
        layers = np.repeat(np.arange(len(self)), self.n_points)
        return PointCloud(pts, layers)

    @classmethod
    def from_layers(cls, layers) -> "LayeredContourCloud":
        layers = list(layers)
        return cls(
            [l.z for l in layers],
            np.array([l.r for l in layers]),
            np.array([l.theta for l in layers]),
            np.array([l.center for l in layers]),
            [l.perimeter for l in layers],
        )

    @classmethod
    def from_point_cloud(cls, cloud: PointCloud) -> "LayeredContourCloud":
        """Rebuild from a cloud whose layers hold ordered contour samples."""
        if cloud.layers is None:
            raise ValueError("point cloud carries no layer indices")
        out = []
        for k in np.unique(cloud.layers):
            pts = cloud.points[cloud.layers == k]
            xy = pts[:, :2]
            c = polygon_centroid(xy)
            d = xy - c
            closed = np.vstack((xy, xy[:1]))
            out.append(
                Layer(
                    float(pts[:, 2].mean()),
                    np.hypot(d[:, 0], d[:, 1]),
                    np.arctan2(d[:, 1], d[:, 0]),
                    c,
                    float(np.linalg.norm(np.diff(closed, axis=0), axis=1).sum()),
                )
            )
        return cls.from_layers(out)


@dataclass(frozen=True)
class RawLayer:
    z: float
    points: np.ndarray  # (k, 2) XY intersections
    gap: bool = False


def _layer_heights(zmin, zmax, step):
    n = int(np.floor((zmax - zmin) / step + 1e-9))
    return zmin + step * np.arange(n + 1)


def slice_mesh(mesh: TriangleMesh, layer_step: float = 0.1) -> list[RawLayer]:
    """Intersect the mesh with horizontal planes from min-z to max-z.

    Edges crossing a plane with a strict sign change contribute the linearly
    interpolated point; vertices lying on a plane contribute themselves once.
    An interior plane that hits nothing is returned with ``gap=True``.
    """
    if len(mesh) == 0:
        raise ValueError("empty mesh")
    if layer_step <= 0:
        raise ValueError("layer_step must be positive")
    c = mesh.corners
    edges = np.concatenate((c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]))
    ea, eb = edges[:, 0], edges[:, 1]
    lo = np.minimum(ea[:, 2], eb[:, 2])
    hi = np.maximum(ea[:, 2], eb[:, 2])
    verts = mesh.vertices
    zmin, zmax = float(verts[:, 2].min()), float(verts[:, 2].max())
    heights = _layer_heights(zmin, zmax, layer_step)
    out = []
    for h in heights:
        sel = (lo < h - SNAP) & (hi > h + SNAP)
        pa, pb = ea[sel], eb[sel]
        t = (h - pa[:, 2]) / (pb[:, 2] - pa[:, 2])
        pts = pa[:, :2] + t[:, None] * (pb[:, :2] - pa[:, :2])
        on = np.abs(verts[:, 2] - h) <= SNAP
        if on.any():
            pts = np.vstack((pts, np.unique(verts[on, :2], axis=0)))
        interior = zmin + SNAP < h < zmax - SNAP
        out.append(RawLayer(float(h), pts, gap=bool(interior and len(pts) == 0)))
    return out


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def hull_layer(points) -> np.ndarray:
    """Convex hull by Andrew's monotone chain; CCW, collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) < 3:
        raise DegenerateLayerError("fewer than 3 distinct points")
    pl = [tuple(p) for p in pts.tolist()]  # lexicographically sorted by np.unique
    lower, upper = [], []
    for p in pl:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pl):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateLayerError("all points collinear")
    return np.array(hull)


def polygon_centroid(poly) -> np.ndarray:
    """Area-weighted centroid of a simple polygon (vertex mean if area is 0)."""
    p = np.asarray(poly, dtype=float)
    q = np.roll(p, -1, axis=0)
    cr = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
    a = cr.sum() / 2.0
    if abs(a) < 1e-15 * max(1.0, np.abs(p).max() ** 2):
        return p.mean(axis=0)
    cx = ((p[:, 0] + q[:, 0]) * cr).sum() / (6.0 * a)
    cy = ((p[:, 1] + q[:, 1]) * cr).sum() / (6.0 * a)
    return np.array([cx, cy])


def _ray_start(poly, c):
    """Arc-length position where the ray from ``c`` along +x leaves the polygon."""
    q = np.roll(poly, -1, axis=0)
    seg = np.linalg.norm(q - poly, axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    best = None
    for k in range(len(poly)):
        a, b = poly[k] - c, q[k] - c
        if (a[1] > 0) == (b[1] > 0) and a[1] != 0 and b[1] != 0:
            continue
        dy = b[1] - a[1]
        if dy == 0:
            if a[1] == 0 and max(a[0], b[0]) > 0:
                s = 0.0 if a[0] > 0 else -a[0] / (b[0] - a[0])
                x = a[0] + s * (b[0] - a[0])
            else:
                continue
        else:
            s = -a[1] / dy
            x = a[0] + s * (b[0] - a[0])
        if x > 0 and (best is None or x > best[0]):
            best = (x, cum[k] + s * seg[k])
    if best is None:
        return 0.0
    return float(best[1]) % cum[-1]


def resample_contour(polygon, n: int = 400, z: float = 0.0) -> Layer:
    """Resample a closed CCW polygon into ``n`` points of equal arc spacing.

    Sampling starts where the ray theta = 0 from the area centroid meets the
    boundary; samples are returned as polar coordinates about that centroid.
    """
    poly = np.asarray(polygon, dtype=float).reshape(-1, 2)
    if n < 3:
        raise ValueError("need at least 3 samples")
    q = np.roll(poly, -1, axis=0)
    seg = np.linalg.norm(q - poly, axis=1)
    length = float(seg.sum())
    if not length > 0:
        raise DegenerateLayerError("zero-perimeter contour")
    c = polygon_centroid(poly)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    s = (_ray_start(poly, c) + length * np.arange(n) / n) % length
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(poly) - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(seg[k] > 0, (s - cum[k]) / seg[k], 0.0)
    pts = poly[k] + f[:, None] * (q[k] - poly[k])
    d = pts - c
    return Layer(float(z), np.hypot(d[:, 0], d[:, 1]), np.arctan2(d[:, 1], d[:, 0]), c, length)


def slice_to_cloud(mesh: TriangleMesh, layer_step: float = 0.1, n: int = 400) -> LayeredContourCloud:
    """Slice, hull and resample every layer of ``mesh``."""
    layers = []
    for raw in slice_mesh(mesh, layer_step):
        if raw.gap:
            raise DegenerateLayerError(f"mesh gap: no intersection at z={raw.z:g}")
        try:
            hull = hull_layer(raw.points)
        except DegenerateLayerError as exc:
            raise DegenerateLayerError(f"layer z={raw.z:g}: {exc}") from None
        layers.append(resample_contour(hull, n, raw.z))
    return LayeredContourCloud.from_layers(layers)
