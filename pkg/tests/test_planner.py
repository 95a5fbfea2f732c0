import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import target
from kneadforge.planner import (
    InfeasibleBilletError, KneadingProgram, PlannerConfig, envelope_plan, gradient_plan, knead_count,
    knead_stride, pair_fingers, plan, plan_cycles, plan_program, polar_area, raw_depth, swap_fingers,
)
from kneadforge.shapes import Cylinder, gen_shape
from kneadforge.slicer import LayeredContourCloud

CYL = gen_shape(Cylinder(60, 40), 1.0, 400)


def test_pair_fingers_400():
    left, right = pair_fingers(400)
    assert left == tuple(range(1, 201)) and right == tuple(range(201, 401))
    assert swap_fingers(*swap_fingers(left, right)) == (left, right)
    assert set(left) | set(right) == set(range(1, 401)) and not set(left) & set(right)
    with pytest.raises(ValueError):
        pair_fingers(399)


def test_raw_depth():
    cfg = PlannerConfig(finger_width=100)
    assert raw_depth(30, cfg) == 20
    d = np.linspace(0, 40, 9)
    assert np.allclose(raw_depth(d, cfg) - raw_depth(d, PlannerConfig(finger_width=100, mold_scale=2)), 2)
    s = PlannerConfig(finger_width=100, center_offset=3, mold_scale=1)
    assert raw_depth(3, s) == 50 - 1


def test_knead_count_cylinder():
    c = 2 * math.pi * 30
    assert knead_count(c, 4, False) == 48 and knead_stride(400, 48) == 8
    assert knead_count(c, 4, True) == 95 and knead_stride(400, 95) == 4


def test_polar_area_closed_forms():
    t = 2 * np.pi * np.arange(400) / 400
    assert polar_area(np.ones(400), t) == pytest.approx(0.5 * 400 * math.sin(2 * math.pi / 400), abs=1e-12)
    assert polar_area(np.ones(4), np.array([0, 0.5, 1, 1.5]) * np.pi) == pytest.approx(2, abs=1e-15)


def test_polar_area_matches_green(rng):
    t = np.sort(rng.uniform(-np.pi, np.pi, 50))
    r = 20 + rng.uniform(0, 1, 50)
    x, y = r * np.cos(t), r * np.sin(t)
    green = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    assert polar_area(r, t) == pytest.approx(green, rel=1e-12)


def test_zero_compensation_identity_heights():
    for p in (envelope_plan(CYL), gradient_plan(target("C"))):
        assert p.alpha == (1.0,)
    assert np.allclose(envelope_plan(CYL).compressed_heights, CYL.z)
    g = gradient_plan(target("C"), PlannerConfig())
    assert g.compressed_heights[-1] <= 40 + 1e-9


def _envelope_volumes(cloud, dr):
    d = cloud.r.max(axis=1)
    return np.sum(np.pi * d ** 2), np.sum(np.pi * (d + dr) ** 2)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from("ABCDE"), st.floats(0.0, 15.0))
def test_alpha_volume_identity(name, dr):
    cloud = target(name)
    cfg = PlannerConfig(radial_compensation=dr, mold_scale=0.5)
    a = envelope_plan(cloud, cfg).alpha[0]
    v0, v1 = _envelope_volumes(cloud, dr)
    assert abs(a * v1 - v0) / v0 <= 1e-9
    g = gradient_plan(cloud, cfg).alpha[0]
    a0 = polar_area(cloud.r, cloud.theta).sum()
    a1 = polar_area(cloud.r + dr, cloud.theta).sum()
    assert abs(g * a1 - a0) / a0 <= 1e-9


@settings(max_examples=20, deadline=None)
@given(st.sampled_from("ABCDE"), st.floats(0.1, 15.0))
def test_compressed_heights_order(name, dr):
    cloud = target(name)
    h = np.array(envelope_plan(cloud, PlannerConfig(radial_compensation=dr)).compressed_heights)
    assert h[0] == cloud.z[0] and np.all(np.diff(h) > 0) and h[-1] < cloud.z[-1]


def test_commands_pairing_and_count():
    p = envelope_plan(CYL, PlannerConfig(mold_scale=1.0))
    by_h = {}
    for c in p.commands:
        assert 1 <= c.i <= 400 and 1 <= c.j <= 400
        assert (c.j - c.i) % 400 == 200
        by_h.setdefault(c.h, []).append(c)
    stride = knead_stride(400, knead_count(2 * math.pi * 30, 4, False))
    assert all(len(v) == math.ceil(400 / stride) for v in by_h.values())


def test_command_contact_on_target():
    p = envelope_plan(CYL)
    for c in p.commands[:50]:
        for x, y in c.contacts():
            assert math.hypot(x, y) == pytest.approx(30)


def test_gradient_source_mapping():
    cloud = target("C")
    p = gradient_plan(cloud, PlannerConfig(radial_compensation=4.0, mold_scale=0.5), height_step=3.0)
    a = p.alpha[0]
    hc = cloud.z[0] + (cloud.z[-1] - cloud.z[0]) * a
    assert max(c.h for c in p.commands) == pytest.approx(hc)
    assert min(c.h for c in p.commands) == pytest.approx(3.0)


def test_plan_cycles_examples():
    cyc = plan_cycles(40, 26.5)
    assert len(cyc) == 15 and all(c.feed_depth == 1 and c.height_step == 3 and c.radial_step == 4 for c in cyc[:-1])
    assert cyc[-1].finishing and cyc[-1].height_step == 2 and cyc[-1].radial_step == 2
    only = plan_cycles(30, 30)
    assert len(only) == 1 and only[0].height_step == 2
    assert len(plan_cycles(30.4, 30)) == 2
    with pytest.raises(InfeasibleBilletError):
        plan_cycles(20, 30)


def test_program_json_roundtrip_and_determinism():
    p1 = plan_program(target("D"), 37.5, PlannerConfig(), "envelope")
    p2 = plan_program(target("D"), 37.5, PlannerConfig(), "envelope")
    assert p1.to_json() == p2.to_json()
    back = KneadingProgram.from_json(p1.to_json())
    assert back.to_json() == p1.to_json()
    d = json.loads(p1.to_json())
    assert {"strategy", "config", "cycles", "commands"} <= set(d)
    assert {"h", "i", "dRawL", "j", "dRawR", "targetR"} <= set(d["commands"][0])


def test_program_cycles_ordered():
    p = plan_program(target("B"), 42.4, PlannerConfig(), "envelope")
    cyc = [c.cycle for c in p.commands]
    assert cyc == sorted(cyc)
    assert p.cycles[-1].finishing and all(c.feed_depth == 1 for c in p.cycles[:-1])


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(effector_diameter=0)
    with pytest.raises(ValueError):
        PlannerConfig(radial_compensation=-1)
    with pytest.raises(ValueError, match="nope"):
        PlannerConfig.from_dict({"nope": 1})
    with pytest.raises(ValueError):
        plan(CYL, strategy="spiral")


def test_empty_target():
    empty = LayeredContourCloud([], np.empty((0, 4)), np.empty((0, 4)), np.empty((0, 2)), [])
    with pytest.raises(ValueError):
        envelope_plan(empty)
