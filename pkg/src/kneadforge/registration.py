"""Point-to-point ICP, threshold sweeps and radial compensation.

Fitness is the fraction of source points that have a target point within
the distance threshold; RMSE is taken over those inliers only.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh_io import PointCloud

__all__ = [
    "RegistrationResult",
    "RegistrationCurve",
    "best_fit_transform",
    "initial_alignment",
    "icp",
    "sweep",
    "default_thresholds",
    "compensate",
    "nearest_distances",
]


@dataclass(frozen=True)
class RegistrationResult:
    rotation: np.ndarray
    translation: np.ndarray
    fitness: float
    rmse: float
    threshold: float
    iterations: int
    rmse_history: tuple = ()

    def apply(self, points):
        pts = _points(points)
        return pts @ self.rotation.T + self.translation

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class RegistrationCurve:
    samples: tuple  # (threshold, fitness, rmse)
    compensation_value: float | None
    complete: bool
    results: tuple = ()

    @property
    def full_fitness_threshold(self):
        for t, f, _ in self.samples:
            if f >= 1.0:
                return t
        return None

    def to_csv(self) -> str:
        rows = ["threshold,fitness,rmse"]
        rows += [f"{t!r},{f!r},{r!r}" for t, f, r in self.samples]
        return "\n".join(rows) + "\n"


def _points(cloud):
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=float).reshape(-1, 3)


def _check_cloud(p, name):
    if len(p) < 3:
        raise ValueError(f"{name} cloud needs at least 3 points")
    s = np.linalg.svd(p - p.mean(axis=0), compute_uv=False)
    if s[1] <= 1e-12 * max(1.0, s[0]):
        raise ValueError(f"{name} cloud is degenerate (collinear)")


def best_fit_transform(src, dst):
    """Least-squares rigid motion (R, t) taking ``src`` onto ``dst`` (Kabsch)."""
    ca, cb = src.mean(axis=0), dst.mean(axis=0)
    h = (src - ca).T @ (dst - cb)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, cb - r @ ca


def _evaluate(tree, src, rot, trans, threshold):
    moved = src @ rot.T + trans
    d, idx = tree.query(moved, distance_upper_bound=np.nextafter(threshold, np.inf))
    ok = d <= threshold
    n = int(ok.sum())
    rmse = math.sqrt(float(np.mean(d[ok] ** 2))) if n else math.inf
    return n / len(src), rmse, ok, idx


def _principal_axes(p):
    w, v = np.linalg.eigh(np.cov((p - p.mean(axis=0)).T))
    return w[::-1], v[:, ::-1]


def initial_alignment(source, target, tree=None, gap: float = 0.05):
    """Coarse pose: match centroids, then principal axes when they are distinct.

    Principal axes are only trusted when neighbouring variances differ by
    more than ``gap`` (relative); among the sign choices the one with the
    lowest mean nearest-neighbour distance wins, and plain centroid
    matching stays a candidate.
    """
    src, dst = _points(source), _points(target)
    tree = tree or cKDTree(dst)
    cs, ct = src.mean(axis=0), dst.mean(axis=0)
    candidates = [np.eye(3)]
    ws, vs = _principal_axes(src)
    wt, vt = _principal_axes(dst)
    scale = max(ws[0], wt[0], 1e-300)
    distinct = all(
        abs(w[k] - w[k + 1]) > gap * scale for w in (ws, wt) for k in range(2)
    )
    if distinct:
        for signs in itertools.product((1.0, -1.0), repeat=3):
            r = vt @ np.diag(signs) @ vs.T
            if np.linalg.det(r) > 0:
                candidates.append(r)
    sample = src if len(src) <= 2000 else src[np.linspace(0, len(src) - 1, 2000).astype(int)]
    best = None
    for r in candidates:
        t = ct - r @ cs
        d, _ = tree.query(sample @ r.T + t)
        score = float(np.mean(d))
        if best is None or score < best[0] - 1e-12:
            best = (score, r, t)
    return best[1], best[2]


def icp(source, target, threshold: float, max_iter: int = 50, tol: float = 1e-10,
        init=None, tree=None) -> RegistrationResult:
    """Point-to-point ICP with correspondences capped at ``threshold``.

    ``init`` is an (R, t) pair; by default :func:`initial_alignment` is used.
    Iteration stops when the RMSE improves by less than ``tol``. If no point
    matches, fitness is 0 and RMSE is ``inf``.
    """
    src, dst = _points(source), _points(target)
    _check_cloud(src, "source")
    _check_cloud(dst, "target")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    tree = tree or cKDTree(dst)
    rot, trans = init if init is not None else initial_alignment(src, dst, tree)
    rot, trans = np.asarray(rot, float), np.asarray(trans, float)
    fitness, rmse, ok, idx = _evaluate(tree, src, rot, trans, threshold)
    history = [rmse]
    it = 0
    while it < max_iter and ok.sum() >= 3:
        it += 1
        r_new, t_new = best_fit_transform(src[ok], dst[idx[ok]])
        f_new, e_new, ok_new, idx_new = _evaluate(tree, src, r_new, t_new, threshold)
        if f_new < fitness or (f_new == fitness and e_new > rmse):
            break
        improvement = rmse - e_new if f_new == fitness else math.inf
        rot, trans, fitness, rmse, ok, idx = r_new, t_new, f_new, e_new, ok_new, idx_new
        history.append(rmse)
        if improvement < tol:
            break
    return RegistrationResult(rot, trans, fitness, rmse, float(threshold), it, tuple(history))


def default_thresholds(start: float = 0.1, stop: float = 20.0, step: float = 0.1):
    n = int(round((stop - start) / step))
    return tuple(round(start + k * step, 10) for k in range(n + 1))


def sweep(source, target, thresholds=None, max_iter: int = 30, tol: float = 1e-8,
          stop_at_full: bool = False) -> RegistrationCurve:
    """ICP at each threshold, each run warm-started from the previous pose.

    A run never ends worse than its warm start evaluated at the new
    threshold, so fitness is non-decreasing along the curve. The
    compensation value is the RMSE at the first threshold reaching
    fitness 1.0.
    """
    thresholds = default_thresholds() if thresholds is None else tuple(thresholds)
    if not thresholds:
        raise ValueError("empty threshold grid")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    src, dst = _points(source), _points(target)
    tree = cKDTree(dst)
    pose = initial_alignment(src, dst, tree)
    samples, results = [], []
    comp = None
    for t in thresholds:
        res = icp(src, dst, t, max_iter, tol, init=pose, tree=tree)
        pose = (res.rotation, res.translation)
        samples.append((float(t), res.fitness, res.rmse))
        results.append(res)
        if comp is None and res.fitness >= 1.0:
            comp = res.rmse
            if stop_at_full:
                break
    return RegistrationCurve(tuple(samples), comp, comp is not None, tuple(results))


def _layer_groups(cloud: PointCloud):
    if cloud.layers is not None:
        keys = cloud.layers
    else:
        keys = np.round(cloud.points[:, 2], 6)
    _, inv = np.unique(keys, return_inverse=True)
    return inv


def compensate(cloud: PointCloud, value: float, mode: str = "offset") -> PointCloud:
    """Pull every layer radially inward about its own centroid.

    ``offset`` moves each point ``value`` mm toward the layer axis
    (r' = max(r - value, 0)); ``scale`` applies the single factor
    (R - value) / R, with R the cloud's mean radius. Heights are unchanged.
    """
    if value < 0:
        raise ValueError("compensation value must be >= 0")
    if mode not in ("offset", "scale"):
        raise ValueError(f"unknown compensation mode {mode!r}")
    pts = cloud.points.copy()
    if value == 0 or len(pts) == 0:
        return PointCloud(pts, cloud.layers)
    groups = _layer_groups(cloud)
    centers = np.zeros((groups.max() + 1, 2))
    np.add.at(centers, groups, pts[:, :2])
    centers /= np.bincount(groups)[:, None]
    d = pts[:, :2] - centers[groups]
    r = np.hypot(d[:, 0], d[:, 1])
    if mode == "offset":
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(r > 0, np.maximum(r - value, 0.0) / r, 0.0)
    else:
        mean_r = float(r.mean())
        f = np.full_like(r, max(mean_r - value, 0.0) / mean_r if mean_r > 0 else 0.0)
    pts[:, :2] = centers[groups] + d * f[:, None]
    return PointCloud(pts, cloud.layers)


def nearest_distances(source, target) -> np.ndarray:
    return cKDTree(_points(target)).query(_points(source))[0]
