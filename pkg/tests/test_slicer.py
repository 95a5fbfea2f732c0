import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kneadforge.mesh_io import TriangleMesh
from kneadforge.shapes import Cylinder, cloud_to_mesh, gen_shape
from kneadforge.slicer import (
    DegenerateLayerError, LayeredContourCloud, hull_layer, polygon_centroid, resample_contour, slice_mesh,
    slice_to_cloud,
)


def _cube():
    v = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float)
    faces = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]]
    tris = [[a, b, c] for f in faces for a, b, c in ((f[0], f[1], f[2]), (f[0], f[2], f[3]))]
    return TriangleMesh(v, tris)


def test_triangle_midpoints():
    m = TriangleMesh([[0, 0, 0], [1, 0, 1], [0, 1, 1]], [[0, 1, 2]])
    layer = next(l for l in slice_mesh(m, 0.5) if abs(l.z - 0.5) < 1e-12)
    got = sorted(map(tuple, np.round(layer.points, 12)))
    assert got == [(0.0, 0.5), (0.5, 0.0)]


def test_cube_layers_are_unit_square():
    for raw in slice_mesh(_cube(), 0.1)[1:-1]:
        hull = hull_layer(raw.points)
        assert sorted(map(tuple, hull.tolist())) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_cylinder_mesh_within_sagitta():
    n = 180
    mesh = cloud_to_mesh(gen_shape(Cylinder(60, 10), 1.0, n))
    cloud = slice_to_cloud(mesh, 0.5, 400)
    sagitta = 30 * (1 - math.cos(math.pi / n))
    assert np.all(np.abs(cloud.r - 30) <= sagitta + 1e-9)


def test_slice_then_resample_matches_generated():
    mesh = cloud_to_mesh(gen_shape(Cylinder(60, 10), 1.0, 400))
    sliced = slice_to_cloud(mesh, 1.0, 400)
    direct = gen_shape(Cylinder(60, 10), 1.0, 400)
    assert np.allclose(sliced.r, direct.r, atol=30 * (1 - math.cos(math.pi / 400)) + 1e-9)


def test_gap_is_flagged():
    # two separate slabs with nothing between z=1 and z=2
    a = _cube()
    b = TriangleMesh(a.vertices + [0, 0, 2], a.triangles)
    both = TriangleMesh(np.vstack((a.vertices, b.vertices)), np.vstack((a.triangles, b.triangles + 8)))
    layers = slice_mesh(both, 0.5)
    assert any(l.gap for l in layers)
    with pytest.raises(DegenerateLayerError, match="gap"):
        slice_to_cloud(both, 0.5)


def test_hull_square_with_center():
    pts = [[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]]
    assert sorted(map(tuple, hull_layer(pts).tolist())) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_hull_regular_polygon_keeps_all():
    t = 2 * np.pi * np.arange(400) / 400
    pts = np.column_stack((np.cos(t), np.sin(t)))
    h = hull_layer(pts)
    assert len(h) == 400
    ang = np.unwrap(np.arctan2(h[:, 1], h[:, 0]))
    assert np.all(np.diff(ang) > 0)  # CCW


def _inside(hull, p):
    q = np.roll(hull, -1, axis=0)
    cross = (q[:, 0] - hull[:, 0]) * (p[1] - hull[:, 1]) - (q[:, 1] - hull[:, 1]) * (p[0] - hull[:, 0])
    return np.all(cross >= -1e-12)


def test_hull_random_disc(rng):
    r = np.sqrt(rng.uniform(size=1000))
    t = rng.uniform(0, 2 * np.pi, 1000)
    pts = np.column_stack((r * np.cos(t), r * np.sin(t)))
    h = hull_layer(pts)
    src = {tuple(p) for p in pts.tolist()}
    assert all(tuple(p) in src for p in h.tolist())
    assert all(_inside(h, p) for p in pts)


def test_hull_collinear_raises():
    with pytest.raises(DegenerateLayerError):
        hull_layer([[0, 0], [1, 1], [2, 2], [3, 3]])


pts2d = st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=60, unique=True)


@settings(max_examples=100, deadline=None)
@given(pts2d)
def test_hull_idempotent(pts):
    try:
        h = hull_layer(pts)
    except DegenerateLayerError:
        return
    assert np.array_equal(hull_layer(h), h)


def test_square_spacing_one_mm():
    sq = np.array([[50, -50], [50, 50], [-50, 50], [-50, -50]], dtype=float)
    layer = resample_contour(sq, 400)
    xy = layer.xy()
    gaps = np.linalg.norm(np.diff(np.vstack((xy, xy[:1])), axis=0), axis=1)
    assert layer.perimeter == pytest.approx(400)
    # chords equal arc length except across the four corners
    assert np.sum(np.abs(gaps - 1.0) > 1e-9) <= 4
    assert layer.theta[0] == pytest.approx(0.0, abs=1e-12)


def test_circle_resample():
    t = 2 * np.pi * np.arange(400) / 400
    layer = resample_contour(np.column_stack((30 * np.cos(t), 30 * np.sin(t))), 400)
    assert np.allclose(layer.r, 30)
    assert np.allclose(np.diff(np.unwrap(layer.theta)), 2 * np.pi / 400)


def _arc_positions(poly, pts):
    q = np.roll(poly, -1, axis=0)
    seg = np.linalg.norm(q - poly, axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    out = []
    for p in pts:
        e, w = q - poly, p - poly
        d = np.abs(e[:, 0] * w[:, 1] - e[:, 1] * w[:, 0]) / seg
        k = int(np.argmin(d))
        out.append(cum[k] + np.linalg.norm(p - poly[k]))
    return np.array(out), cum[-1]


def test_arc_length_gaps_equal(rng):
    t = np.sort(rng.uniform(0, 2 * np.pi, 12))
    poly = hull_layer(np.column_stack((40 * np.cos(t), 25 * np.sin(t))))
    layer = resample_contour(poly, 97)
    s, length = _arc_positions(poly, layer.xy())
    gaps = np.mod(np.diff(np.append(s, s[0] + length)), length)
    assert np.allclose(gaps, length / 97, atol=1e-9)


def test_resampled_perimeter_close(rng):
    t = np.sort(rng.uniform(0, 2 * np.pi, 30))
    poly = hull_layer(np.column_stack((30 * np.cos(t), 20 * np.sin(t))))
    layer = resample_contour(poly, 400)
    xy = layer.xy()
    chords = np.linalg.norm(np.diff(np.vstack((xy, xy[:1])), axis=0), axis=1).sum()
    assert abs(chords - layer.perimeter) / layer.perimeter < 1e-3


def test_zero_perimeter():
    with pytest.raises(DegenerateLayerError):
        resample_contour([[1, 1], [1, 1], [1, 1]], 10)


def test_centroid_of_offset_square():
    sq = np.array([[1, 1], [3, 1], [3, 3], [1, 3]], dtype=float)
    assert np.allclose(polygon_centroid(sq), [2, 2])


def test_cloud_invariants():
    with pytest.raises(ValueError):
        LayeredContourCloud([1, 0], np.ones((2, 3)), np.zeros((2, 3)), np.zeros((2, 2)), [1, 1])
    with pytest.raises(ValueError):
        LayeredContourCloud([0], -np.ones((1, 3)), np.zeros((1, 3)), np.zeros((1, 2)), [1])


def test_point_cloud_roundtrip():
    c = gen_shape(Cylinder(60, 5), 1.0, 64)
    back = LayeredContourCloud.from_point_cloud(c.to_point_cloud())
    assert np.allclose(back.r, c.r) and np.allclose(back.z, c.z)
