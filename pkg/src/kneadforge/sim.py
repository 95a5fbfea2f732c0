"""Kinematic, volume-conserving kneading simulator.

The billet is a polar radius grid: M layers of thickness dz, each sampled at
N fixed angles about the turntable axis. A command clamps the radii inside
each finger's angular window over the command's height band, then moves the
displaced cross-section area to the layers above (extruding new layers on
top when nothing is above). Volume is conserved by construction.

This is a stand-in for the physical machine, not a plasticity model. The
rebound offset ``eps`` leaves clamped material slightly proud of the
commanded radius.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid

from .mesh_io import PointCloud
from .planner import KneadCommand, KneadingProgram, PlannerConfig, plan, plan_cycles, polar_area
from .shapes import Cylinder, SquarePrism
from .slicer import LayeredContourCloud, _layer_heights, resample_contour

__all__ = [
    "BilletState",
    "SimulationResult",
    "init_billet",
    "size_billet",
    "apply_command",
    "run_program",
    "knead",
    "fit_billet",
    "volume_above",
    "grid_area",
]

DEFAULT_EPS = 0.3


def grid_area(r: np.ndarray) -> np.ndarray:
    """Polar shoelace area of rows sampled at uniform angles 2 pi j / N."""
    r = np.asarray(r, dtype=float)
    n = r.shape[-1]
    return 0.5 * math.sin(2 * math.pi / n) * np.sum(r * np.roll(r, -1, axis=-1), axis=-1)


@dataclass(frozen=True)
class BilletState:
    """Immutable snapshot of the billet grid.

    ``r[l, j]`` is the radius of layer ``l`` at angle 2 pi j / N. Every layer
    is ``dz`` thick except the top one, whose thickness is
    ``top_fraction * dz``; material pushed out of the top grows it upward.
    """

    r: np.ndarray
    dz: float
    eps: float = DEFAULT_EPS
    top_fraction: float = 1.0

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        if r.ndim != 2 or r.shape[0] == 0:
            raise ValueError("billet grid must be 2-D (layers, angles) with at least one layer")
        if r.min() < 0:
            raise ValueError("radii must be non-negative")
        if not self.dz > 0:
            raise ValueError("dz must be positive")
        if not 0 < self.top_fraction <= 1:
            raise ValueError("top_fraction must lie in (0, 1]")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def n_layers(self) -> int:
        return self.r.shape[0]

    @property
    def n_angles(self) -> int:
        return self.r.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_angles) / self.n_angles

    @property
    def thickness(self) -> np.ndarray:
        t = np.full(self.n_layers, self.dz)
        t[-1] = self.top_fraction * self.dz
        return t

    @property
    def z(self) -> np.ndarray:
        """Slab mid-heights."""
        z = (np.arange(self.n_layers) + 0.5) * self.dz
        z[-1] = (self.n_layers - 1 + 0.5 * self.top_fraction) * self.dz
        return z

    @property
    def height(self) -> float:
        return (self.n_layers - 1 + self.top_fraction) * self.dz

    @property
    def areas(self) -> np.ndarray:
        return grid_area(self.r)

    @property
    def volume(self) -> float:
        return float(np.dot(self.areas, self.thickness))

    @property
    def max_radius(self) -> float:
        return float(self.r.max())

    @property
    def grid_diagonal(self) -> float:
        """Diagonal of one grid cell at the outermost radius."""
        return math.hypot(self.dz, self.max_radius * 2 * math.pi / self.n_angles)

    def to_cloud(self) -> LayeredContourCloud:
        """Resample each layer outline at its slab mid-height.

        The bottom and top faces get an extra ring each (z = 0 and z =
        height) so the rings span the whole solid.
        """
        th = self.theta
        zs = np.concatenate(([0.0], self.z, [self.height]))
        rows = np.vstack((self.r[:1], self.r, self.r[-1:]))
        layers = []
        for z, row in zip(zs, rows):
            poly = np.column_stack((row * np.cos(th), row * np.sin(th)))
            layers.append(resample_contour(poly, self.n_angles, float(z)))
        return LayeredContourCloud.from_layers(layers)

    def to_point_cloud(self, layer_step: float | None = None) -> PointCloud:
        """Slicer-style export (see :meth:`slice`), at ``dz`` by default."""
        return self.slice(layer_step or self.dz).to_point_cloud()

    def slice(self, layer_step: float) -> LayeredContourCloud:
        """Rings at z = 0, step, ... <= height, as the slicer samples a mesh.

        Each ring is the outline of the slab holding z (lo < z <= hi), so a
        height on a slab boundary reads the slab below it.
        """
        if not layer_step > 0:
            raise ValueError("layer_step must be positive")
        th = self.theta
        layers = []
        for z in _layer_heights(0.0, self.height, layer_step):
            k = min(max(int(math.ceil(z / self.dz - 1e-9)) - 1, 0), self.n_layers - 1)
            row = self.r[k]
            layers.append(resample_contour(np.column_stack((row * np.cos(th), row * np.sin(th))),
                                           self.n_angles, float(z)))
        return LayeredContourCloud.from_layers(layers)


def init_billet(spec, n: int = 400, dz: float = 0.5, eps: float = DEFAULT_EPS) -> BilletState:
    """Grid sampled from a cylinder or square-prism billet.

    There are ceil(height / dz) layers; the top one takes the remainder of
    the height, so the grid volume is section area x height.
    """
    th = 2 * np.pi * np.arange(n) / n
    if isinstance(spec, Cylinder):
        row = np.full(n, spec.diameter / 2.0)
    elif isinstance(spec, SquarePrism):
        row = (spec.side / 2.0) / np.maximum(np.abs(np.cos(th)), np.abs(np.sin(th)))
    else:
        raise TypeError(f"billet must be a Cylinder or SquarePrism, got {type(spec).__name__}")
    layers = max(1, int(math.ceil(spec.height / dz - 1e-9)))
    top = spec.height / dz - (layers - 1)
    return BilletState(np.tile(row, (layers, 1)), dz, eps, min(max(top, 1e-12), 1.0))


def target_volume(target: LayeredContourCloud, eps: float = 0.0) -> float:
    """Volume under the target's section areas, optionally inflated by ``eps``."""
    a = polar_area(target.r + eps, target.theta)
    return float(trapezoid(a, target.z))


def size_billet(billet, target: LayeredContourCloud, eps: float = 0.0, margin: float = 0.5):
    """Billet of ``billet``'s section whose volume fills the target plus rebound.

    The height is the volume of the target inflated by ``eps`` divided by
    the billet section area, plus a fixed casting ``margin`` in mm.
    """
    if isinstance(billet, Cylinder):
        section = math.pi * (billet.diameter / 2.0) ** 2
    elif isinstance(billet, SquarePrism):
        section = billet.side ** 2
    else:
        raise TypeError(f"billet must be a Cylinder or SquarePrism, got {type(billet).__name__}")
    return replace(billet, height=target_volume(target, eps) / section + margin)


# ------------------------------------------------------------------- kernel


class _Kernel:
    """Mutable grid with spare capacity for extruded layers."""

    def __init__(self, state: BilletState):
        self.n = state.n_angles
        self.dz = state.dz
        self.eps = state.eps
        self.m = state.n_layers
        self.f = state.top_fraction
        self.r = np.zeros((max(2 * self.m, 8), self.n))
        self.r[: self.m] = state.r
        self.theta = state.theta
        self.s = 0.5 * math.sin(2 * math.pi / self.n)

    def snapshot(self) -> BilletState:
        return BilletState(self.r[: self.m].copy(), self.dz, self.eps, self.f)

    def _area(self, rows):
        return self.s * np.sum(rows * np.roll(rows, -1, axis=-1), axis=-1)

    def volume(self) -> float:
        a = self._area(self.r[: self.m])
        return float((a[:-1].sum() + self.f * a[-1]) * self.dz)

    def _grow(self, rows):
        if self.m + rows > len(self.r):
            extra = np.zeros((max(self.m + rows, 2 * len(self.r)) - len(self.r), self.n))
            self.r = np.vstack((self.r, extra))

    def _band(self, h, step):
        """Rows whose slab mid-height lies in (h - step, h]."""
        z = (np.arange(self.m) + 0.5) * self.dz
        z[-1] = (self.m - 1 + 0.5 * self.f) * self.dz
        lo = int(np.searchsorted(z, h - step + 1e-9, side="right"))
        hi = int(np.searchsorted(z, h + 1e-9, side="right")) - 1
        return lo, hi

    def apply(self, cmd: KneadCommand, height_step: float, d_m: float) -> float:
        """Apply ``cmd``; returns the displaced volume."""
        lo, hi = self._band(cmd.h, height_step)
        if lo > hi:
            return 0.0
        band = self.r[lo : hi + 1]
        before = self._area(band)
        for x, y in cmd.contacts():
            rho = math.hypot(x, y)
            limit = max(rho + self.eps, 0.0)
            half = (d_m / 2.0) / rho if rho > 0 else math.pi
            d = np.abs((self.theta - math.atan2(y, x) + np.pi) % (2 * np.pi) - np.pi)
            cols = np.nonzero(d <= half + 1e-12)[0]
            band[:, cols] = np.minimum(band[:, cols], limit)
        thick = np.full(hi - lo + 1, self.dz)
        if hi == self.m - 1:
            thick[-1] = self.f * self.dz
        moved = float(np.dot(before - self._area(band), thick))
        if moved <= 0:
            return 0.0
        self._deposit(hi, moved)
        return moved

    def _deposit(self, top, volume):
        """Spread ``volume`` evenly over the layers above row ``top``.

        Full layers grow radially; the partial top layer (or the touched top
        layer when nothing lies above) grows upward with its own outline.
        """
        above = self.m - top - 1
        if above == 0:
            self._extrude(volume)
            return
        share = volume / above
        full = above - 1
        if full > 0:
            rows = self.r[top + 1 : self.m - 1]
            a = self._area(rows)
            rows *= np.sqrt((a + share / self.dz) / a)[:, None]
        self._extrude(share)

    def _extrude(self, volume):
        template = self.r[self.m - 1].copy()
        a = float(self._area(template))
        cap = a * self.dz
        f = self.f + volume / cap
        extra = int(math.ceil(f - 1 - 1e-12)) if f > 1 else 0
        if extra:
            self._grow(extra)
            self.r[self.m : self.m + extra] = template
            self.m += extra
            f -= extra
        self.f = f


def apply_command(state: BilletState, cmd: KneadCommand, height_step: float, d_m: float = 4.0) -> BilletState:
    """One command applied to a copy of ``state``."""
    k = _Kernel(state)
    k.apply(cmd, height_step, d_m)
    return k.snapshot()


def _cycle_step(program: KneadingProgram, cmd: KneadCommand) -> float:
    if program.cycles and 0 <= cmd.cycle < len(program.cycles):
        return program.cycles[cmd.cycle].height_step
    return program.config.layer_step or program.config.effector_diameter / 2.0


def run_program(state: BilletState, program: KneadingProgram, check_volume: bool = False):
    """Apply every command in order.

    Returns ``(final_state, cloud, max_drift)`` where ``max_drift`` is the
    largest relative volume change over any single command (computed only
    when ``check_volume`` is set, else 0).
    """
    k = _Kernel(state)
    d_m = program.config.effector_diameter
    drift = 0.0
    for cmd in program.commands:
        if check_volume:
            v0 = k.volume()
        k.apply(cmd, _cycle_step(program, cmd), d_m)
        if check_volume:
            drift = max(drift, abs(k.volume() - v0) / v0)
    final = k.snapshot()
    return final, final.to_point_cloud(), drift


@dataclass(frozen=True)
class SimulationResult:
    initial: BilletState
    final: BilletState
    program: KneadingProgram
    snapshots: tuple  # BilletState after each cycle
    command_drift: float  # worst per-command relative volume change
    program_drift: float

    @property
    def cloud(self) -> LayeredContourCloud:
        return self.final.to_cloud()

    def area_series(self):
        """(cycle, lateral area) after every cycle, cycle 0 being the billet."""
        from .metrics import ring_mesh_area

        states = (self.initial,) + self.snapshots
        return tuple((c, ring_mesh_area(s.to_cloud())) for c, s in enumerate(states))


def _top_off(kernel, commands, step, d_m, check_volume, max_passes=1000):
    """Re-knead accumulated material above the last commanded height.

    The top layer's commands are replayed one ``step`` higher each pass
    until the billet no longer rises past the commanded height. Returns the
    replayed commands and the worst per-command volume drift.
    """
    top_h = max(c.h for c in commands)
    last = [c for c in commands if c.h == top_h]
    out, drift, h = [], 0.0, top_h
    for _ in range(max_passes):
        stack_top = (kernel.m - 1 + kernel.f) * kernel.dz
        if stack_top <= h + 1e-9:
            break
        h += step
        for cmd in last:
            c2 = replace(cmd, h=h)
            v0 = kernel.volume() if check_volume else 0.0
            kernel.apply(c2, step, d_m)
            if check_volume:
                drift = max(drift, abs(kernel.volume() - v0) / v0)
            out.append(c2)
    return out, drift


def knead(target: LayeredContourCloud, billet: BilletState, cfg: PlannerConfig = PlannerConfig(),
          strategy: str = "envelope", roughing_mold_scale: float = 0.5,
          check_volume: bool = True, top_off: bool = True) -> SimulationResult:
    """Rough down to the target in 1 mm feeds, then finish, re-planning each cycle.

    The cycle count comes from the billet's initial surplus over the target's
    smallest radius. Before each roughing cycle the contour inflation is
    re-derived from the simulated billet: the smaller of the scheduled
    surplus and the current surplus, each less one feed. With ``top_off``
    the finishing pass continues above the part with the top layer's
    commands until the accumulated material has been kneaded into a cap of
    the top outline.
    """
    cycles = plan_cycles(billet.max_radius, float(target.r.min()), cfg)
    surplus0 = billet.max_radius - float(target.r.min())
    k = _Kernel(billet)
    d_m = cfg.effector_diameter
    v_start = k.volume()
    commands, snapshots, drift = [], [], 0.0
    for c, cyc in enumerate(cycles):
        if cyc.finishing:
            ccfg = replace(cfg, radial_compensation=0.0, mold_scale=0.0)
        else:
            current = float(k.r[: k.m].max()) - float(target.r.min())
            dr = max(min(surplus0 - (c + 1) * cyc.feed_depth, current - cyc.feed_depth), 0.0)
            ccfg = replace(cfg, radial_compensation=dr, mold_scale=roughing_mold_scale)
        step = cfg.layer_step or cyc.height_step
        p = plan(target, ccfg, strategy, finishing=cyc.finishing, height_step=step, cycle=c)
        for cmd in p.commands:
            v0 = k.volume() if check_volume else 0.0
            k.apply(cmd, step, d_m)
            if check_volume:
                drift = max(drift, abs(k.volume() - v0) / v0)
        commands += p.commands
        if cyc.finishing and top_off and p.commands:
            extra, d2 = _top_off(k, p.commands, step, d_m, check_volume)
            commands += extra
            drift = max(drift, d2)
        snapshots.append(k.snapshot())
    final = k.snapshot()
    program = KneadingProgram(tuple(commands), cycles, strategy, (), cfg, ())
    return SimulationResult(billet, final, program, tuple(snapshots), drift,
                            abs(final.volume - v_start) / v_start)


def volume_above(state: BilletState, height: float) -> float:
    """Material volume above ``height``."""
    lo = np.arange(state.n_layers) * state.dz
    hi = lo + state.thickness
    part = np.clip(hi - np.maximum(lo, height), 0.0, None)
    return float(np.dot(state.areas, part))


def _section(billet) -> float:
    if isinstance(billet, Cylinder):
        return math.pi * (billet.diameter / 2.0) ** 2
    return billet.side ** 2


def fit_billet(target: LayeredContourCloud, billet, cfg: PlannerConfig = PlannerConfig(),
               strategy: str = "envelope", eps: float = DEFAULT_EPS, n: int = 400, dz: float = 0.5,
               margin: float = 0.5, rounds: int = 2) -> BilletState:
    """Billet whose volume matches the part the program actually leaves.

    Starts from :func:`size_billet`, kneads, and corrects the billet height
    so the material left above the target equals a casting ``margin`` (mm
    of billet height). The commanded part differs from the target where
    bands are clamped to one layer's outline, so this is tighter than
    sizing by the target volume alone.
    """
    spec = size_billet(billet, target, eps, margin)
    section = _section(billet)
    top = float(target.z[-1])
    for _ in range(rounds):
        res = knead(target, init_billet(spec, n, dz, eps), cfg, strategy, check_volume=False)
        surplus = volume_above(res.final, top) - margin * section
        spec = replace(spec, height=max(spec.height - surplus / section, dz))
    return init_billet(spec, n, dz, eps)
