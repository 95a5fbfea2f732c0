import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kneadforge.planner import KneadCommand, KneadingProgram, PlannerConfig
from kneadforge.shapes import Cylinder, SquarePrism, gen_shape
from kneadforge.sim import (
    BilletState, apply_command, grid_area, init_billet, knead, run_program, size_billet, volume_above,
)
from kneadforge.slicer import _layer_heights


def _polygon_volume(r, n, h):
    return 0.5 * n * math.sin(2 * math.pi / n) * r * r * h


def _cmd(h, r, i=1, n=400):
    return KneadCommand(h, i, 50.0, i + n // 2, 50.0, r, r, n)


def test_disk_billet():
    b = init_billet(Cylinder(80, 40), eps=0.0)
    assert np.all(b.r == 40) and b.n_layers == 80 and b.height == pytest.approx(40)
    assert b.volume == pytest.approx(_polygon_volume(40, 400, 40), rel=1e-12)
    assert b.volume == pytest.approx(201061.93, rel=1e-4)


def test_cube_billet():
    b = init_billet(SquarePrism(60, 60))
    assert b.max_radius == pytest.approx(30 * math.sqrt(2), abs=1e-9)
    assert b.r.min() == pytest.approx(30)
    assert b.volume == pytest.approx(60 ** 3, rel=1e-12)


def test_partial_top_layer():
    b = init_billet(Cylinder(80, 10.2), dz=0.5)
    assert b.n_layers == 21 and b.top_fraction == pytest.approx(0.4)
    assert b.height == pytest.approx(10.2)


def test_grid_area_square():
    b = init_billet(SquarePrism(10, 1), n=8)
    assert grid_area(b.r[0]) == pytest.approx(100)


def test_no_op_command():
    b = init_billet(Cylinder(80, 20), eps=0.0)
    out = apply_command(b, _cmd(10, 45), 2.0)
    assert np.array_equal(out.r, b.r) and out.top_fraction == b.top_fraction


def test_clamp_with_rebound():
    b = init_billet(Cylinder(80, 20), eps=0.3)
    out = apply_command(b, _cmd(10, 30), 2.0)
    band = out.r[16:20]  # slab mids 8.25..9.75 lie in (8, 10]
    assert band.min() == pytest.approx(30.3)
    assert np.array_equal(out.r[:16], b.r[:16])
    assert out.height > b.height


def test_window_width():
    b = init_billet(Cylinder(80, 20), eps=0.0)
    out = apply_command(b, _cmd(10, 30), 2.0)
    clamped = np.count_nonzero(out.r[17] == 30)
    # two fingers, each covering |dtheta| <= (4/2)/30 rad
    half = 2.0 / 30
    assert clamped == 2 * (2 * int(half / (2 * math.pi / 400)) + 1)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 30), st.floats(20, 45), st.integers(1, 400)), min_size=1, max_size=12),
       st.floats(0, 0.5))
def test_volume_conserved(cmds, eps):
    b = init_billet(Cylinder(80, 20), n=400, eps=eps)
    prog = KneadingProgram(tuple(_cmd(h, r, i) for h, r, i in cmds), (), "envelope")
    final, _, drift = run_program(b, prog, check_volume=True)
    assert final.volume == pytest.approx(b.volume, rel=1e-9)
    assert drift < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(2, 18), st.floats(25, 39))
def test_band_never_grows(h, r):
    b = init_billet(Cylinder(80, 20), eps=0.2)
    out = apply_command(b, _cmd(h, r), 2.0).r[: b.n_layers]
    mid = (np.arange(b.n_layers) + 0.5) * b.dz
    band = (mid > h - 2.0 + 1e-9) & (mid <= h + 1e-9)
    assert np.all(out[band] <= b.r[band])
    assert np.array_equal(out[mid <= h - 2.0 + 1e-9], b.r[mid <= h - 2.0 + 1e-9])
    assert out[band].min() == pytest.approx(r + 0.2)


def test_contacts_shrink_monotonically():
    b = init_billet(Cylinder(80, 20), eps=0.0)
    s = b
    for r in (38, 35, 31):
        s = apply_command(s, _cmd(10, r), 2.0)
        assert s.r[17].min() == r


def test_empty_program_identity():
    b = init_billet(SquarePrism(60, 10))
    final, cloud, drift = run_program(b, KneadingProgram((), (), "envelope"))
    assert np.array_equal(final.r, b.r) and drift == 0.0


def test_cylinder_knead_eps_zero():
    tgt = gen_shape(Cylinder(60, 20), 1.0, 100)
    b = init_billet(size_billet(Cylinder(80, 1), tgt, 0.0), 100, 0.5, 0.0)
    res = knead(tgt, b, PlannerConfig(), "envelope")
    below = int(20 / 0.5)
    assert np.max(np.abs(res.final.r[:below] - 30)) < 1e-9
    assert res.program_drift < 1e-12 and res.command_drift < 1e-12
    assert res.final.height >= 20
    # everything above the part is surplus billet, close to the casting margin
    part = grid_area(np.full(100, 30.0)) * 20
    assert volume_above(res.final, 20) == pytest.approx(b.volume - part, rel=1e-9)
    assert volume_above(res.final, 20) == pytest.approx(0.5 * math.pi * 40 ** 2, rel=0.02)
    area = [a for _, a in res.area_series()]
    assert len(area) == len(res.program.cycles) + 1


def test_knead_deterministic():
    tgt = gen_shape(Cylinder(60, 10), 1.0, 80)
    b = init_billet(size_billet(SquarePrism(60, 1), tgt, 0.3), 80, 0.5, 0.3)
    a = knead(tgt, b)
    c = knead(tgt, b)
    assert np.array_equal(a.final.r, c.final.r)
    assert a.program.to_json() == c.program.to_json()


def test_slice_contract():
    b = init_billet(Cylinder(80, 10.3), eps=0.0)
    sl = b.slice(1.0)
    assert np.allclose(sl.z, _layer_heights(0.0, 10.3, 1.0))
    assert np.allclose(sl.r, 40)
    assert len(b.to_point_cloud(2.0).points) == len(b.slice(2.0).z) * 400


def test_to_cloud_boundary_rings():
    b = init_billet(Cylinder(80, 4), eps=0.0)
    c = b.to_cloud()
    assert c.z[0] == 0 and c.z[-1] == pytest.approx(4) and len(c.z) == b.n_layers + 2


def test_state_validation():
    with pytest.raises(ValueError):
        BilletState(np.ones((2, 8)), 0.0)
    with pytest.raises(TypeError):
        init_billet(Cylinder(10, 10).__class__.__mro__[1])
