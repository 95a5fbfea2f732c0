"""Ideal machining point cloud: the surface the fingers would leave behind.

Each contact point is stamped with a sampled disc of the end-effector's
diameter, standing vertical and facing the turntable axis. Only the lower
half of every disc is kept, since the layer above re-forms the upper half.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh_io import PointCloud
from .planner import KneadingProgram

__all__ = ["EndEffectorSpec", "footprint_template", "disc_footprint", "ideal_cloud"]

UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class EndEffectorSpec:
    diameter: float = 4.0
    footprint_points: int = 40
    min_ring_points: int = 8

    def __post_init__(self):
        if not self.diameter > 0:
            raise ValueError("diameter must be positive")
        if self.footprint_points < 4:
            raise ValueError("footprint_points must be >= 4")
        if self.min_ring_points < 3:
            raise ValueError("min_ring_points must be >= 3")


def ring_layout(spec: EndEffectorSpec):
    """(radius, point count) for each concentric ring of the footprint."""
    rings = int(math.isqrt(spec.footprint_points))
    root = math.sqrt(spec.footprint_points)
    big_r = spec.diameter / 2.0
    out = []
    for k in range(1, rings + 1):
        rk = spec.diameter * k / (2 * rings)
        out.append((rk, max(spec.min_ring_points, int(2 * math.pi * rk / (big_r / root)))))
    return out


def footprint_template(spec: EndEffectorSpec, lower_half: bool = False) -> np.ndarray:
    """In-plane (up, side) offsets of the footprint samples, centre first."""
    pts = [(0.0, 0.0)]
    for rk, n in ring_layout(spec):
        th = 2 * np.pi * np.arange(n) / n
        pts.extend(zip((rk * np.cos(th)).tolist(), (rk * np.sin(th)).tolist()))
    pts = np.array(pts)
    if lower_half:
        pts = pts[pts[:, 0] <= 1e-12]
    return pts


def _side_axis(normal):
    v = np.cross(normal, UP)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("disc normal is vertical; footprint plane undefined")
    return v / n


def disc_footprint(center, normal, spec: EndEffectorSpec = EndEffectorSpec(), lower_half: bool = False) -> PointCloud:
    """Full (or lower-half) disc of samples centred at ``center``.

    The disc plane contains the vertical u = (0, 0, 1) and v = n x u / |n x u|.
    """
    c = np.asarray(center, dtype=float)
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    v = _side_axis(n)
    t = footprint_template(spec, lower_half)
    return PointCloud(c + t[:, :1] * UP + t[:, 1:] * v)


def ideal_cloud(program: KneadingProgram, spec: EndEffectorSpec = EndEffectorSpec(),
                cycle: int | None = None) -> PointCloud:
    """Stamp lower half-discs at every distinct contact point of ``program``.

    ``cycle`` restricts stamping to one feed cycle (e.g. the finishing pass
    of a multi-cycle program). Contact points repeated by the swapped
    half-revolution are stamped once, in command order.
    """
    seen = set()
    contacts = []
    for cmd in program.commands:
        if cycle is not None and cmd.cycle != cycle:
            continue
        for xy in cmd.contacts():
            key = (cmd.cycle, cmd.h, round(xy[0], 9), round(xy[1], 9))
            if key not in seen:
                seen.add(key)
                contacts.append((xy[0], xy[1], cmd.h))
    if not contacts:
        return PointCloud(np.empty((0, 3)))
    c = np.array(contacts)
    normal = np.zeros_like(c)
    normal[:, :2] = -c[:, :2]
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    side = _side_axis(normal)
    t = footprint_template(spec, lower_half=True)
    pts = c[:, None, :] + t[None, :, :1] * UP + t[None, :, 1:] * side[:, None, :]
    return PointCloud(pts.reshape(-1, 3))
