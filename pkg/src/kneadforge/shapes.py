"""Parametric reference geometries and their layered contour clouds.

Five shape families are supported: square prism, cylinder, slim waist
(B-spline radius profile revolved about Z), helical truncated octagonal
frustum, and the concave cylinder whose circular sections slide along a
parabola in the YOZ plane.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .mesh_io import TriangleMesh
from .slicer import Layer, LayeredContourCloud, resample_contour

__all__ = [
    "BSplineCurve",
    "clamped_uniform_knots",
    "bspline_basis",
    "eval_bspline",
    "SquarePrism",
    "Cylinder",
    "SlimWaist",
    "HelicalFrustum",
    "ConcaveCylinder",
    "shape_from_dict",
    "shape_to_dict",
    "load_geometries",
    "gen_shape",
    "cloud_to_mesh",
    "shape_volume",
]


def clamped_uniform_knots(n_ctrl: int, degree: int = 3) -> np.ndarray:
    inner = n_ctrl - degree - 1
    mid = np.arange(1, inner + 1) / (inner + 1)
    return np.concatenate((np.zeros(degree + 1), mid, np.ones(degree + 1)))


@dataclass(frozen=True)
class BSplineCurve:
    control_points: np.ndarray
    degree: int = 3
    knots: np.ndarray | None = None

    def __post_init__(self):
        cp = np.array(self.control_points, dtype=float).reshape(-1, 2)
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if len(cp) < self.degree + 1:
            raise ValueError("need at least degree + 1 control points")
        knots = clamped_uniform_knots(len(cp), self.degree) if self.knots is None else np.array(self.knots, dtype=float)
        if len(knots) != len(cp) + self.degree + 1:
            raise ValueError("knot count must equal control points + degree + 1")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        cp.setflags(write=False)
        knots.setflags(write=False)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "knots", knots)


def bspline_basis(knots, degree: int, t: float) -> np.ndarray:
    """All degree-``degree`` basis values N_i(t) by the Cox-de Boor recursion.

    The last non-empty knot span is treated as closed so that t equal to the
    final knot evaluates to the end control point.
    """
    u = np.asarray(knots, dtype=float)
    m = len(u) - 1
    n0 = np.zeros(m)
    last = max(i for i in range(m) if u[i] < u[i + 1])
    for i in range(m):
        if u[i] <= t < u[i + 1] or (i == last and t == u[i + 1]):
            n0[i] = 1.0
    basis = n0
    for p in range(1, degree + 1):
        nxt = np.zeros(m - p)
        for i in range(m - p):
            left = u[i + p] - u[i]
            right = u[i + p + 1] - u[i + 1]
            a = (t - u[i]) / left * basis[i] if left > 0 else 0.0
            b = (u[i + p + 1] - t) / right * basis[i + 1] if right > 0 else 0.0
            nxt[i] = a + b
        basis = nxt
    return basis


def eval_bspline(curve: BSplineCurve, t: float) -> np.ndarray:
    u = curve.knots
    if not (u[curve.degree] <= t <= u[-curve.degree - 1]):
        raise ValueError(f"parameter {t} outside curve domain")
    return bspline_basis(u, curve.degree, t) @ curve.control_points


# ----------------------------------------------------------------- shape specs


def _positive(**dims):
    for k, v in dims.items():
        if not v > 0:
            raise ValueError(f"{k} must be positive, got {v}")


@dataclass(frozen=True)
class SquarePrism:
    side: float
    height: float

    def __post_init__(self):
        _positive(side=self.side, height=self.height)


@dataclass(frozen=True)
class Cylinder:
    diameter: float
    height: float

    def __post_init__(self):
        _positive(diameter=self.diameter, height=self.height)


@dataclass(frozen=True)
class SlimWaist:
    profile: BSplineCurve
    height: float

    def __post_init__(self):
        _positive(height=self.height)

    def radius(self, z: float) -> float:
        # radius is the profile's x coordinate at t(z) = z / height
        t = min(max(z / self.height, 0.0), 1.0)
        return float(eval_bspline(self.profile, t)[0])


@dataclass(frozen=True)
class HelicalFrustum:
    r1: float
    r2: float
    total_twist: float
    layers: int
    height: float

    def __post_init__(self):
        _positive(r1=self.r1, r2=self.r2, height=self.height)
        if self.layers < 2:
            raise ValueError("layers must be >= 2")

    def vertices(self, z: float) -> np.ndarray:
        t = z / self.height
        r = self.r1 + (self.r2 - self.r1) * t
        phi = 2 * np.pi * np.arange(8) / 8 + self.total_twist * t
        return np.column_stack((r * np.cos(phi), r * np.sin(phi)))


@dataclass(frozen=True)
class ConcaveCylinder:
    radius: float
    height: float
    max_offset: float

    def __post_init__(self):
        _positive(radius=self.radius, height=self.height)

    def center_offset(self, z: float) -> float:
        s = z / self.height
        return 4.0 * self.max_offset * s * (1.0 - s)


_KINDS = {
    "square_prism": SquarePrism,
    "cylinder": Cylinder,
    "slim_waist": SlimWaist,
    "helical_frustum": HelicalFrustum,
    "concave_cylinder": ConcaveCylinder,
}
_KEYS = {"totalTwist": "total_twist", "maxOffset": "max_offset"}


def shape_from_dict(d: dict):
    """Build a shape spec from its JSON object (``{"type": ..., fields}``)."""
    d = dict(d)
    kind = d.pop("type", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown shape type {kind!r}; expected one of {sorted(_KINDS)}")
    kw = {_KEYS.get(k, k): v for k, v in d.items()}
    if kind == "slim_waist":
        prof = kw.pop("profile")
        kw["profile"] = BSplineCurve(
            prof["controlPoints"], prof.get("degree", 3), prof.get("knots")
        )
    try:
        return _KINDS[kind](**kw)
    except TypeError as exc:
        raise ValueError(f"bad fields for {kind}: {exc}") from None


def shape_to_dict(spec) -> dict:
    inv = {v: k for k, v in _KEYS.items()}
    kind = next(k for k, cls in _KINDS.items() if isinstance(spec, cls))
    out = {"type": kind}
    for f in spec.__dataclass_fields__:
        v = getattr(spec, f)
        if isinstance(v, BSplineCurve):
            v = {"controlPoints": v.control_points.tolist(), "degree": v.degree, "knots": v.knots.tolist()}
        out[inv.get(f, f)] = v
    return out


def load_geometries() -> dict:
    """Preset geometries A-E with their billets and default strategies."""
    text = resources.files("kneadforge").joinpath("data/geometries.json").read_text()
    raw = json.loads(text)
    return {
        name: {
            "shape": shape_from_dict(g["shape"]),
            "billet": shape_from_dict(g["billet"]),
            "strategy": g["strategy"],
            "enveloping": g["enveloping"],
            "description": g.get("description", ""),
        }
        for name, g in raw.items()
    }


# ------------------------------------------------------------------ sampling


def _heights(height, step):
    n = int(math.floor(height / step + 1e-9))
    return step * np.arange(n + 1)


def _circle_layer(z, radius, n, center=(0.0, 0.0)):
    theta = 2 * np.pi * np.arange(n) / n
    theta = np.where(theta > np.pi, theta - 2 * np.pi, theta)
    return Layer(float(z), np.full(n, float(radius)), theta, np.asarray(center, dtype=float),
                 float(n * 2 * radius * math.sin(math.pi / n)))


def _square(side):
    a = side / 2.0
    return np.array([[a, -a], [a, a], [-a, a], [-a, -a]])


def shape_layer(spec, z: float, n: int) -> Layer:
    if isinstance(spec, Cylinder):
        return _circle_layer(z, spec.diameter / 2.0, n)
    if isinstance(spec, SlimWaist):
        return _circle_layer(z, spec.radius(z), n)
    if isinstance(spec, ConcaveCylinder):
        return _circle_layer(z, spec.radius, n, (0.0, spec.center_offset(z)))
    if isinstance(spec, SquarePrism):
        return resample_contour(_square(spec.side), n, z)
    if isinstance(spec, HelicalFrustum):
        return resample_contour(spec.vertices(z), n, z)
    raise TypeError(f"unsupported shape {type(spec).__name__}")


def gen_shape(spec, layer_step: float = 0.1, points_per_layer: int = 400) -> LayeredContourCloud:
    """Sample ``spec`` into layers at z = 0, step, ... <= height."""
    if layer_step <= 0:
        raise ValueError("layer_step must be positive")
    if points_per_layer < 3:
        raise ValueError("points_per_layer must be >= 3")
    return LayeredContourCloud.from_layers(
        shape_layer(spec, z, points_per_layer) for z in _heights(spec.height, layer_step)
    )


def shape_volume(spec) -> float:
    """Analytic volume in mm^3 (slim waist by quadrature of its profile)."""
    if isinstance(spec, Cylinder):
        return math.pi * (spec.diameter / 2) ** 2 * spec.height
    if isinstance(spec, SquarePrism):
        return spec.side ** 2 * spec.height
    if isinstance(spec, ConcaveCylinder):
        return math.pi * spec.radius ** 2 * spec.height
    if isinstance(spec, HelicalFrustum):
        # regular octagon with circumradius r has area 2*sqrt(2)*r^2
        r1, r2 = spec.r1, spec.r2
        return 2 * math.sqrt(2) * spec.height * (r1 * r1 + r1 * r2 + r2 * r2) / 3
    if isinstance(spec, SlimWaist):
        from scipy.integrate import quad

        return quad(lambda z: math.pi * spec.radius(z) ** 2, 0, spec.height, limit=200)[0]
    raise TypeError(f"unsupported shape {type(spec).__name__}")


def cloud_to_mesh(cloud: LayeredContourCloud, caps: bool = True) -> TriangleMesh:
    """Triangulate consecutive rings into a closed, outward-facing mesh."""
    v = cloud.xyz()
    nl, n = v.shape[:2]
    verts = [v.reshape(-1, 3)]
    idx = np.arange(nl * n).reshape(nl, n)
    j = np.arange(n)
    jp = (j + 1) % n
    tris = []
    for k in range(nl - 1):
        a, b, c, d = idx[k, j], idx[k, jp], idx[k + 1, jp], idx[k + 1, j]
        tris.append(np.column_stack((a, b, c)))
        tris.append(np.column_stack((a, c, d)))
    if caps:
        base = nl * n
        centers = np.array([[*cloud.centers[0], cloud.z[0]], [*cloud.centers[-1], cloud.z[-1]]])
        verts.append(centers)
        tris.append(np.column_stack((np.full(n, base), idx[0, jp], idx[0, j])))
        tris.append(np.column_stack((np.full(n, base + 1), idx[-1, j], idx[-1, jp])))
    return TriangleMesh(np.vstack(verts), np.vstack(tris))
