"""Kneading command generation.

Two strategies turn a target contour cloud into finger commands:

* ``envelope``: per-layer maximum radii drive the volume ratio, and every
  layer height is remapped by that ratio.
* ``gradient``: per-layer polar shoelace areas drive the ratio, and a
  uniform compressed height grid is mapped back onto the source layers.

Both emit, per commanded layer, one command every ``s_h`` contour points
pairing the left finger at index ``i`` with the right finger half a turn
away. Roughing passes feed 1 mm per cycle; the finishing pass (zero mold
scale) halves the knead pitch.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .slicer import LayeredContourCloud

__all__ = [
    "PlannerConfig",
    "FeedCycle",
    "KneadCommand",
    "KneadingProgram",
    "InfeasibleBilletError",
    "pair_fingers",
    "swap_fingers",
    "raw_depth",
    "polar_area",
    "knead_count",
    "knead_stride",
    "envelope_plan",
    "gradient_plan",
    "plan",
    "plan_cycles",
    "plan_program",
]

STRATEGIES = ("envelope", "gradient")


class InfeasibleBilletError(ValueError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    finger_width: float = 160.0
    mold_scale: float = 0.0
    center_offset: float = 0.0
    effector_diameter: float = 4.0
    radial_compensation: float = 0.0
    layer_step: float | None = None  # command height pitch; None follows the feed cycle

    def __post_init__(self):
        if not self.effector_diameter > 0:
            raise ValueError("effector_diameter must be positive")
        if not self.finger_width > 0:
            raise ValueError("finger_width must be positive")
        if self.radial_compensation < 0:
            raise ValueError("radial_compensation must be >= 0")
        if self.layer_step is not None and not self.layer_step > 0:
            raise ValueError("layer_step must be positive")

    def to_dict(self):
        return {
            "fingerWidth": self.finger_width,
            "moldScale": self.mold_scale,
            "centerOffset": self.center_offset,
            "endEffectorDiameter": self.effector_diameter,
            "radialCompensation": self.radial_compensation,
            "layerStep": self.layer_step,
        }

    @classmethod
    def from_dict(cls, d):
        keys = {
            "fingerWidth": "finger_width",
            "moldScale": "mold_scale",
            "centerOffset": "center_offset",
            "endEffectorDiameter": "effector_diameter",
            "radialCompensation": "radial_compensation",
            "layerStep": "layer_step",
        }
        unknown = sorted(set(d) - set(keys) - set(keys.values()))
        if unknown:
            raise ValueError(f"unknown planner keys: {', '.join(unknown)}")
        return cls(**{keys.get(k, k): v for k, v in d.items()})


@dataclass(frozen=True)
class FeedCycle:
    feed_depth: float
    height_step: float
    radial_step: float

    @property
    def finishing(self) -> bool:
        return self.feed_depth == 0.0


@dataclass(frozen=True)
class KneadCommand:
    """One paired squeeze. Indices are 1-based contour positions.

    A command carries no angle: index ``i`` of an ``n_points`` contour maps
    back to the polar direction 2 pi (i - 1) / n_points about ``center``.
    """

    h: float
    i: int
    d_raw_left: float
    j: int
    d_raw_right: float
    target_radius: float
    target_radius_right: float
    n_points: int
    center: tuple = (0.0, 0.0)
    cycle: int = 0

    @property
    def theta_left(self) -> float:
        return 2 * math.pi * (self.i - 1) / self.n_points

    @property
    def theta_right(self) -> float:
        return 2 * math.pi * (self.j - 1) / self.n_points

    def contacts(self):
        """Absolute XY contact points of the left and right fingers."""
        cx, cy = self.center
        tl, tr = self.theta_left, self.theta_right
        return (
            (cx + self.target_radius * math.cos(tl), cy + self.target_radius * math.sin(tl)),
            (cx + self.target_radius_right * math.cos(tr), cy + self.target_radius_right * math.sin(tr)),
        )

    def to_dict(self):
        return {
            "h": self.h, "i": self.i, "dRawL": self.d_raw_left, "j": self.j, "dRawR": self.d_raw_right,
            "targetR": self.target_radius, "targetRR": self.target_radius_right, "n": self.n_points,
            "cx": self.center[0], "cy": self.center[1], "cycle": self.cycle,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["h"], d["i"], d["dRawL"], d["j"], d["dRawR"], d["targetR"],
                   d.get("targetRR", d["targetR"]), d["n"],
                   (d.get("cx", 0.0), d.get("cy", 0.0)), d.get("cycle", 0))


@dataclass(frozen=True)
class KneadingProgram:
    commands: tuple
    cycles: tuple
    strategy: str
    compressed_heights: tuple = ()
    config: PlannerConfig = field(default_factory=PlannerConfig)
    alpha: tuple = ()

    def __len__(self):
        return len(self.commands)

    def cycle_commands(self, cycle: int):
        return [c for c in self.commands if c.cycle == cycle]

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "config": self.config.to_dict(),
            "alpha": list(self.alpha),
            "cycles": [{"feedDepth": c.feed_depth, "heightStep": c.height_step, "radialStep": c.radial_step}
                       for c in self.cycles],
            "compressedHeights": list(self.compressed_heights),
            "commands": [c.to_dict() for c in self.commands],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(KneadCommand.from_dict(c) for c in d["commands"]),
            tuple(FeedCycle(c["feedDepth"], c["heightStep"], c["radialStep"]) for c in d["cycles"]),
            d["strategy"],
            tuple(d.get("compressedHeights", ())),
            PlannerConfig.from_dict(d.get("config", {})),
            tuple(d.get("alpha", ())),
        )

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))


# ------------------------------------------------------------------ primitives


def pair_fingers(n_points: int):
    """1-based index sets (left, right): first and second half of the contour."""
    if n_points % 2:
        raise ValueError(f"finger pairing needs an even point count, got {n_points}")
    half = n_points // 2
    return tuple(range(1, half + 1)), tuple(range(half + 1, n_points + 1))


def swap_fingers(left, right):
    """Second half-revolution: the two fingers exchange contour halves."""
    return right, left


def raw_depth(d, cfg: PlannerConfig, mold_scale: float | None = None):
    """Finger displacement W/2 - |D - s| - m (negative values allowed)."""
    m = cfg.mold_scale if mold_scale is None else mold_scale
    return cfg.finger_width / 2.0 - np.abs(np.asarray(d, dtype=float) - cfg.center_offset) - m


def polar_area(r, theta):
    """Polar shoelace area 1/2 sum r_i r_{i+1} sin(theta_{i+1} - theta_i), last axis closed."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    r2 = np.roll(r, -1, axis=-1)
    t2 = np.roll(theta, -1, axis=-1)
    return 0.5 * np.sum(r * r2 * np.sin(t2 - theta), axis=-1)


def knead_count(circumference: float, d_m: float, finishing: bool) -> int:
    pitch = d_m / 2.0 if finishing else d_m
    return int(math.ceil(circumference / pitch - 1e-12))


def knead_stride(n_points: int, count: int) -> int:
    return max(1, n_points // count)


# ------------------------------------------------------------------- planning


def _command_heights(h_min, h_max, step):
    """Band tops h_min + step, h_min + 2 step, ... with h_max always included."""
    n = int(math.floor((h_max - h_min) / step + 1e-9))
    hs = [h_min + step * k for k in range(1, n + 1)]
    if not hs or hs[-1] < h_max - 1e-9:
        hs.append(h_max)
    return hs


def _layer_commands(target, k, h, cfg, finishing, cycle, delta_r):
    n = target.n_points
    pair_fingers(n)
    r = target.r[k] + delta_r
    m = 0.0 if finishing else cfg.mold_scale
    count = knead_count(2 * math.pi * float(r.max()), cfg.effector_diameter, finishing)
    stride = knead_stride(n, count)
    d_raw = raw_depth(r, cfg, m)
    reach = r + m
    center = (float(target.centers[k, 0]), float(target.centers[k, 1]))
    out = []
    half = n // 2
    for i in range(0, n, stride):
        j = (i + half) % n
        out.append(KneadCommand(
            float(h), i + 1, float(d_raw[i]), j + 1, float(d_raw[j]),
            float(reach[i]), float(reach[j]), n, center, cycle,
        ))
    return out


def _height_step(cfg, finishing):
    if cfg.layer_step is not None:
        return cfg.layer_step
    d = cfg.effector_diameter
    return d / 2.0 if finishing else d - 1.0


def _check_target(target):
    if target is None or len(target) == 0:
        raise ValueError("empty target cloud")


def envelope_plan(target: LayeredContourCloud, cfg: PlannerConfig = PlannerConfig(), *,
                  finishing: bool | None = None, height_step: float | None = None, cycle: int = 0):
    """Envelope-shaping-first pass.

    Volumes use the per-layer maximum radius, V = sum(pi D^2 dh); heights are
    compressed by alpha = V_orig / V_scaled about the base layer.
    """
    _check_target(target)
    finishing = cfg.mold_scale == 0 if finishing is None else finishing
    step = height_step or _height_step(cfg, finishing)
    dr = cfg.radial_compensation
    d_max = target.r.max(axis=1)
    dh = target.layer_step or 1.0
    v_orig = float(np.sum(np.pi * d_max ** 2 * dh))
    v_scaled = float(np.sum(np.pi * (d_max + dr) ** 2 * dh))
    alpha = v_orig / v_scaled
    h1 = float(target.z[0])
    compressed = h1 + alpha * (target.z - h1)
    commands = []
    for h in _command_heights(h1, float(compressed[-1]), step):
        k = int(np.argmin(np.abs(compressed - h)))
        commands += _layer_commands(target, k, h, cfg, finishing, cycle, dr)
    cyc = FeedCycle(0.0 if finishing else 1.0, step, cfg.effector_diameter / (2.0 if finishing else 1.0))
    return KneadingProgram(tuple(commands), (cyc,), "envelope", tuple(float(c) for c in compressed), cfg, (alpha,))


def gradient_plan(target: LayeredContourCloud, cfg: PlannerConfig = PlannerConfig(), *,
                  finishing: bool | None = None, height_step: float | None = None, cycle: int = 0):
    """Similar-gradient pass.

    Per-layer shoelace areas give alpha; the compressed grid
    H_k = H_min + k dH (k = 0..N-1, H_{N-1} <= H_max^c) maps to source layer
    floor(k / N * N_layers), the last grid layer pinned to the last source
    layer. The base grid layer (k = 0) carries no commands because its lower
    band lies below the part.
    """
    _check_target(target)
    if len(target) < 2:
        raise ValueError("gradient plan needs at least 2 layers")
    finishing = cfg.mold_scale == 0 if finishing is None else finishing
    step = height_step or _height_step(cfg, finishing)
    dr = cfg.radial_compensation
    a_orig = polar_area(target.r, target.theta)
    a_scaled = polar_area(target.r + dr, target.theta)
    alpha = float(a_orig.sum() / a_scaled.sum())
    h_min, h_max = float(target.z[0]), float(target.z[-1])
    hc_max = h_min + (h_max - h_min) * alpha
    n = int(math.floor((hc_max - h_min) / step + 1e-9)) + 1
    grid = h_min + step * np.arange(n)
    n_layers = len(target)
    idx = np.floor(np.arange(n) / n * n_layers).astype(int)
    idx[-1] = n_layers - 1
    heights = list(grid[1:])
    sources = list(idx[1:])
    if not heights or heights[-1] < hc_max - 1e-9:
        heights.append(hc_max)
        sources.append(n_layers - 1)
    commands = []
    for h, k in zip(heights, sources):
        commands += _layer_commands(target, int(k), h, cfg, finishing, cycle, dr)
    cyc = FeedCycle(0.0 if finishing else 1.0, step, cfg.effector_diameter / (2.0 if finishing else 1.0))
    return KneadingProgram(tuple(commands), (cyc,), "gradient", tuple(float(g) for g in grid), cfg, (alpha,))


def plan(target, cfg: PlannerConfig = PlannerConfig(), strategy: str = "envelope", **kw):
    if strategy == "envelope":
        return envelope_plan(target, cfg, **kw)
    if strategy == "gradient":
        return gradient_plan(target, cfg, **kw)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def plan_cycles(billet_max_r: float, target_min_r: float, cfg: PlannerConfig = PlannerConfig()):
    """Roughing cycles at 1 mm feed until the radial surplus is gone, then a finish."""
    if target_min_r < 0:
        raise ValueError("target radius must be >= 0")
    if billet_max_r < target_min_r:
        raise InfeasibleBilletError(
            f"billet radius {billet_max_r:g} mm is smaller than the target minimum {target_min_r:g} mm"
        )
    d = cfg.effector_diameter
    surplus = billet_max_r - target_min_r
    n = int(math.ceil(surplus - 1e-9)) if surplus > 0 else 0
    rough = [FeedCycle(1.0, d - 1.0, d) for _ in range(n)]
    return tuple(rough) + (FeedCycle(0.0, d / 2.0, d / 2.0),)


def plan_program(target: LayeredContourCloud, billet_max_r: float, cfg: PlannerConfig = PlannerConfig(),
                 strategy: str = "envelope", roughing_mold_scale: float = 0.5):
    """Full multi-cycle program.

    Roughing cycle ``c`` targets the contour inflated by the remaining radial
    surplus ``max(surplus - c, 0)`` with heights compressed to match; the
    final cycle is a finishing pass onto the target itself.
    """
    cycles = plan_cycles(billet_max_r, float(target.r.min()), cfg)
    surplus = billet_max_r - float(target.r.min())
    commands, heights, alphas = [], [], []
    for c, cyc in enumerate(cycles):
        if cyc.finishing:
            ccfg = replace(cfg, radial_compensation=0.0, mold_scale=0.0)
        else:
            ccfg = replace(cfg, radial_compensation=max(surplus - (c + 1) * cyc.feed_depth, 0.0),
                           mold_scale=roughing_mold_scale)
        p = plan(target, ccfg, strategy, finishing=cyc.finishing,
                 height_step=cfg.layer_step or cyc.height_step, cycle=c)
        commands += p.commands
        heights += p.compressed_heights
        alphas += p.alpha
    return KneadingProgram(tuple(commands), cycles, strategy, tuple(heights), cfg, tuple(alphas))
