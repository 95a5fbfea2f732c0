"""Surface area, utilisation, error statistics and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import ndtr

from .mesh_io import PointCloud
from .slicer import LayeredContourCloud

__all__ = [
    "ring_mesh_area",
    "utilization",
    "MAX_LOSS_G",
    "mann_whitney_u",
    "stars",
    "error_distribution",
    "hausdorff",
    "MetricsReport",
    "emit_report",
    "line_plot_svg",
]

MAX_LOSS_G = 5.0


def ring_mesh_area(cloud) -> float:
    """Lateral area of consecutive contour rings split into triangle pairs.

    Each quad (k, j), (k, j+), (k+1, j+), (k+1, j) with j+ = (j + 1) mod M
    contributes the areas of triangles (A, B, C) and (A, C, D). Caps are
    not included. Accepts a :class:`LayeredContourCloud` or an (L, M, 3)
    array of ordered rings.
    """
    if isinstance(cloud, LayeredContourCloud):
        v = cloud.xyz()
    else:
        v = np.asarray(cloud, dtype=float)
        if v.ndim != 3 or v.shape[-1] != 3:
            raise ValueError("rings must be an (L, M, 3) array (equal point count per layer)")
    if v.shape[0] < 2:
        raise ValueError("need at least 2 layers")
    a = v[:-1]
    b = np.roll(v[:-1], -1, axis=1)
    c = np.roll(v[1:], -1, axis=1)
    d = v[1:]
    t1 = np.linalg.norm(np.cross(b - a, c - a), axis=-1)
    t2 = np.linalg.norm(np.cross(c - a, d - a), axis=-1)
    return float(0.5 * (t1.sum() + t2.sum()))


def utilization(mass_in: float, mass_out: float) -> float:
    if not mass_in > 0:
        raise ValueError("input mass must be positive")
    if not 0 <= mass_out <= mass_in:
        raise ValueError(f"output mass must lie in [0, {mass_in}], got {mass_out}")
    return mass_out / mass_in


def utilization_summary(mass_in: float, mass_out: float) -> dict:
    loss = mass_in - mass_out
    return {"massIn": mass_in, "massOut": mass_out, "utilization": utilization(mass_in, mass_out),
            "loss": loss, "lossWithinBound": loss <= MAX_LOSS_G}


def _rank(x):
    """Average ranks (1-based) with tie groups, plus the tie correction sum."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    edges = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [len(x)]))
    sizes = ends - starts
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, sizes)
    return ranks, float(np.sum(sizes ** 3 - sizes))


def mann_whitney_u(a, b):
    """Two-sided Mann-Whitney U test, normal approximation with tie correction.

    Returns ``(U1, p)`` where U1 is the statistic for sample ``a``; the
    continuity correction of 0.5 is applied. Identical constant samples give
    p = 1.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    ranks, ties = _rank(np.concatenate((a, b)))
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2
    mu = n1 * n2 / 2.0
    var = n1 * n2 / 12.0 * ((n + 1) - ties / (n * (n - 1)))
    if var <= 0:
        return u1, 1.0
    z = (abs(u1 - mu) - 0.5) / math.sqrt(var)
    p = float(min(1.0, 2.0 * ndtr(-z)))
    return u1, p


def stars(p: float) -> str:
    for cut, label in ((1e-4, "****"), (1e-3, "***"), (1e-2, "**"), (0.05, "*")):
        if p < cut:
            return label
    return "ns"


def _points(c):
    if isinstance(c, PointCloud):
        return c.points
    if isinstance(c, LayeredContourCloud):
        return c.xyz().reshape(-1, 3)
    return np.asarray(c, dtype=float).reshape(-1, 3)


def error_distribution(cloud_a, cloud_b, target) -> dict:
    """Nearest-neighbour distances of both clouds to ``target`` and their test."""
    pa, pb, pt = _points(cloud_a), _points(cloud_b), _points(target)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("clouds must be non-empty")
    if len(pt) < 3:
        raise ValueError("target cloud is degenerate")
    tree = cKDTree(pt)
    da, db = tree.query(pa)[0], tree.query(pb)[0]
    u, p = mann_whitney_u(da, db)
    return {"meanNN": [float(da.mean()), float(db.mean())],
            "medianNN": [float(np.median(da)), float(np.median(db))],
            "U": u, "pValue": p, "stars": stars(p)}


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two point sets."""
    pa, pb = _points(a), _points(b)
    return float(max(cKDTree(pb).query(pa)[0].max(), cKDTree(pa).query(pb)[0].max()))


# -------------------------------------------------------------------- reports


def _json_safe(obj):
    """Replace non-finite floats (unmatched RMSE) with None for JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


@dataclass
class MetricsReport:
    surface_area: float | None = None
    target_area: float | None = None
    volume: float | None = None
    utilization: dict | None = None
    area_series: list = field(default_factory=list)  # (cycle, mm^2)
    error_stats: dict | None = None
    registration: dict = field(default_factory=dict)  # name -> {samples, compensationValue, complete}
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return _json_safe({
            "surfaceArea": self.surface_area,
            "targetArea": self.target_area,
            "volume": self.volume,
            "utilization": self.utilization,
            "areaSeries": [[int(c), float(a)] for c, a in self.area_series],
            "errorStats": self.error_stats,
            "registration": self.registration,
            "extra": self.extra,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".") if math.isfinite(v) else "0"


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def line_plot_svg(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
                  hline: float | None = None, width: int = 480, height: int = 320) -> str:
    """Deterministic SVG 1.1 line plot; axes span the data with a 5% margin."""
    pad_l, pad_r, pad_t, pad_b = 60, 20, 30, 45
    xs = [x for pts in series.values() for x, y in pts if math.isfinite(y)]
    ys = [y for pts in series.values() for x, y in pts if math.isfinite(y)]
    if hline is not None:
        ys.append(hline)
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    dx = (x1 - x0) or 1.0
    dy = (y1 - y0) or 1.0
    x0, x1 = x0 - 0.05 * dx, x1 + 0.05 * dx
    y0, y1 = y0 - 0.05 * dy, y1 + 0.05 * dy
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return pad_t + (y1 - y) / (y1 - y0) * ph

    palette = ["#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" data-xrange="{_fmt(x0)} {_fmt(x1)}" data-yrange="{_fmt(y0)} {_fmt(y1)}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{pad_l + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="11">{xlabel}</text>',
        f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {pad_t + ph / 2:.1f})">{ylabel}</text>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.2f}" y="{pad_t + ph + 15}" text-anchor="middle" font-size="10">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{pad_l - 5}" y="{sy(t) + 3:.2f}" text-anchor="end" font-size="10">{_fmt(t)}</text>')
    if hline is not None:
        out.append(f'<line x1="{pad_l}" y1="{sy(hline):.2f}" x2="{pad_l + pw}" y2="{sy(hline):.2f}" '
                   f'stroke="red" stroke-dasharray="4 3"/>')
    for k, (name, pts) in enumerate(series.items()):
        pts = [(x, y) for x, y in pts if math.isfinite(y)]
        if not pts:
            continue
        color = palette[k % len(palette)]
        path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        out.append(f'<text x="{pad_l + 8}" y="{pad_t + 14 + 13 * k}" font-size="10" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(report: MetricsReport, out_dir, prefix: str = "report") -> dict:
    """Write ``<prefix>.json``, area and registration CSVs and SVG plots.

    Returns a mapping of artefact kind to path.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    def write(name, text):
        p = os.path.join(out_dir, name)
        with open(p, "w", newline="") as fh:
            fh.write(text)
        return p

    paths["json"] = write(f"{prefix}.json", report.to_json() + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cycle", "area_mm2"])
    for c, a in report.area_series:
        w.writerow([int(c), repr(float(a))])
    paths["area_csv"] = write(f"{prefix}_area.csv", buf.getvalue())
    if report.area_series:
        paths["area_svg"] = write(f"{prefix}_area.svg", line_plot_svg(
            {"simulated": [(float(c), float(a)) for c, a in report.area_series]},
            "Lateral surface area", "cycle", "area (mm^2)", hline=report.target_area))
    for name, reg in sorted(report.registration.items()):
        rows = ["threshold,fitness,rmse"] + [f"{t!r},{f!r},{r!r}" for t, f, r in reg["samples"]]
        paths[f"{name}_csv"] = write(f"{prefix}_{name}_curve.csv", "\n".join(rows) + "\n")
    if report.registration:
        rmse = {n: [(t, r) for t, f, r in reg["samples"]] for n, reg in sorted(report.registration.items())}
        paths["rmse_svg"] = write(f"{prefix}_rmse.svg", line_plot_svg(
            rmse, "RMSE vs threshold", "threshold (mm)", "RMSE (mm)"))
    return paths
