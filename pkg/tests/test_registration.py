import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from conftest import target
from kneadforge.ideal import ideal_cloud
from kneadforge.mesh_io import PointCloud
from kneadforge.planner import PlannerConfig, plan
from kneadforge.registration import (
    best_fit_transform, compensate, default_thresholds, icp, initial_alignment, nearest_distances, sweep,
)
from kneadforge.shapes import Cylinder, SquarePrism, gen_shape


def _cloud(shape=SquarePrism(40, 20), step=2.0, n=120):
    return gen_shape(shape, step, n).to_point_cloud()


def _asym(rng, n=600):
    # anisotropic blob: distinct principal axes and no symmetry
    p = rng.normal(size=(n, 3)) * [30, 15, 6]
    return p + 0.002 * p[:, :1] ** 2


def test_identity():
    c = _cloud()
    r = icp(c, c, 1.0)
    assert r.fitness == 1.0 and r.rmse == 0.0


def test_kabsch_exact(rng):
    p = rng.normal(size=(50, 3))
    rot = Rotation.random(random_state=1).as_matrix()
    q = p @ rot.T + [1, 2, 3]
    r, t = best_fit_transform(p, q)
    assert np.allclose(r, rot) and np.allclose(t, [1, 2, 3])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_rigid_recovery(seed):
    rng = np.random.default_rng(seed)
    src = _asym(rng)
    rot = Rotation.random(random_state=seed).as_matrix()
    t = rng.uniform(-20, 20, 3)
    res = icp(src, src @ rot.T + t, threshold=5.0, max_iter=100, tol=0)
    assert np.max(np.abs(res.translation - t)) < 1e-5
    ang = Rotation.from_matrix(res.rotation @ rot.T).magnitude()
    assert ang < 1e-6


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_equivariance(seed):
    rng = np.random.default_rng(seed)
    s = _asym(rng)
    a = Rotation.random(random_state=seed + 1).as_matrix()
    g = s @ a.T + rng.uniform(-5, 5, 3)
    base = icp(s, g, 3.0, max_iter=100, tol=0)
    rot = Rotation.random(random_state=seed + 2).as_matrix()
    tr = rng.uniform(-50, 50, 3)
    moved = icp(s @ rot.T + tr, g @ rot.T + tr, 3.0, max_iter=100, tol=0)
    # conjugated transform: T M T^-1
    assert np.allclose(moved.rotation, rot @ base.rotation @ rot.T, atol=1e-8)
    assert np.allclose(moved.translation, rot @ base.translation + tr - rot @ base.rotation @ rot.T @ tr, atol=1e-6)


def test_rmse_history_non_increasing(rng):
    s = _asym(rng)
    g = s @ Rotation.from_euler("z", 0.2).as_matrix().T + [2, 0, 0] + rng.normal(scale=0.05, size=s.shape)
    res = icp(s, g, 4.0, max_iter=60, tol=0, init=(np.eye(3), np.zeros(3)))
    h = np.array(res.rmse_history)
    assert np.all(np.diff(h) <= 1e-12)


@pytest.mark.parametrize("name", ["A", "B"])
def test_fitness_monotone(name):
    ideal = ideal_cloud(plan(target(name), PlannerConfig(), "envelope"))
    curve = sweep(ideal, target(name).to_point_cloud(), default_thresholds(0.1, 3.0))
    f = [s[1] for s in curve.samples]
    assert all(b >= a for a, b in zip(f, f[1:]))


def test_identical_grid_compensation_zero():
    c = _cloud()
    curve = sweep(c, c, (0.1, 1.0, 10.0))
    assert all(s[1] == 1.0 for s in curve.samples)
    assert curve.compensation_value == 0.0 and curve.complete


def test_inflated_copy_compensation():
    tgt = _cloud(Cylinder(60, 20), 1.0, 400)
    big = _cloud(Cylinder(62, 20), 1.0, 400)
    grid = default_thresholds(0.1, 3.0)
    curve = sweep(big, tgt, grid)
    # polygon sampling puts nearest target points slightly beyond 1 mm
    d = nearest_distances(big, tgt)
    assert curve.full_fitness_threshold == min(t for t in grid if t >= d.max())
    assert curve.compensation_value == pytest.approx(np.sqrt(np.mean(d**2)), abs=1e-3)
    assert curve.compensation_value == pytest.approx(1.0, abs=0.02)


def test_incomplete_curve_flagged():
    a = _cloud(Cylinder(60, 20), 2.0, 200)
    b = _cloud(Cylinder(70, 20), 2.0, 200)
    curve = sweep(a, b, (0.5, 1.0, 2.0))
    assert not curve.complete and curve.compensation_value is None


def test_compensate_cylinder():
    c31 = _cloud(Cylinder(62, 10), 1.0, 200)
    out = compensate(c31, 1.0)
    r = np.hypot(out.points[:, 0], out.points[:, 1])
    assert np.allclose(r, 30) and np.array_equal(out.points[:, 2], c31.points[:, 2])
    assert np.array_equal(compensate(c31, 0.0).points, c31.points)
    assert np.array_equal(out.layers, c31.layers)


def test_compensate_about_layer_centroid():
    pts = gen_shape(Cylinder(20, 4), 1.0, 100).to_point_cloud()
    shifted = PointCloud(pts.points + [5, -3, 0], pts.layers)
    out = compensate(shifted, 2.0)
    r = np.hypot(out.points[:, 0] - 5, out.points[:, 1] + 3)
    assert np.allclose(r, 8)


def test_compensate_scale_mode():
    c = _cloud(Cylinder(62, 10), 1.0, 200)
    out = compensate(c, 1.0, mode="scale")
    assert np.allclose(np.hypot(out.points[:, 0], out.points[:, 1]), 30)
    with pytest.raises(ValueError):
        compensate(c, 1.0, mode="warp")
    with pytest.raises(ValueError):
        compensate(c, -1.0)


def test_compensation_improves_inflated():
    tgt = _cloud(Cylinder(60, 20), 1.0, 400)
    k = _cloud(Cylinder(61.2, 20), 1.0, 400)
    c = sweep(k, tgt, default_thresholds(0.1, 3.0)).compensation_value
    after = sweep(compensate(k, c), tgt, default_thresholds(0.01, 3.0, 0.01)).compensation_value
    assert after < c


def test_compensate_shrinks_volume():
    c = gen_shape(SquarePrism(40, 10), 1.0, 200)
    from scipy.spatial import ConvexHull

    before = ConvexHull(c.to_point_cloud().points).volume
    after = ConvexHull(compensate(c.to_point_cloud(), 0.5).points).volume
    assert after < before


def test_table_row_b_at_threshold_one():
    ideal = ideal_cloud(plan(target("B"), PlannerConfig(), "envelope"))
    curve = sweep(ideal, target("B").to_point_cloud(), default_thresholds(0.1, 1.0))
    t, f, rmse = curve.samples[-1]
    assert f == 1.0
    assert rmse == pytest.approx(0.316, rel=0.3)


def test_input_validation():
    c = _cloud()
    with pytest.raises(ValueError):
        icp(c, c, 0.0)
    with pytest.raises(ValueError):
        icp(np.zeros((2, 3)), c, 1.0)
    line = np.column_stack((np.arange(10.0), np.zeros(10), np.zeros(10)))
    with pytest.raises(ValueError, match="degenerate"):
        icp(line, c, 1.0)
    with pytest.raises(ValueError):
        sweep(c, c, ())
    with pytest.raises(ValueError):
        sweep(c, c, (1.0, 0.5))


def test_initial_alignment_recovers_large_rotation(rng):
    s = _asym(rng)
    rot = Rotation.from_euler("z", 2.5).as_matrix()
    g = s @ rot.T
    r, t = initial_alignment(s, g)
    assert np.allclose(r, rot, atol=0.1)


def test_default_grid():
    g = default_thresholds()
    assert g[0] == 0.1 and g[-1] == 20.0 and len(g) == 200
