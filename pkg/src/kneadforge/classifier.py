"""Enveloping vs non-enveloping shape classification.

A shape admits the envelope-first strategy when its mean-radius gradient
has no jumps, its section area is monotone in z, its layer-to-layer twist
rate is continuous, and its section centers stay on one vertical axis.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .planner import polar_area
from .slicer import LayeredContourCloud

__all__ = [
    "ENVELOPING",
    "NON_ENVELOPING",
    "ClassifierTolerances",
    "ShapeSignature",
    "Classification",
    "signature",
    "layer_twist",
    "classify",
]

ENVELOPING = "Enveloping"
NON_ENVELOPING = "NonEnveloping"


@dataclass(frozen=True)
class ClassifierTolerances:
    grad_jump: float = 0.5  # mm/mm, largest allowed step in d(mean r)/dz
    sign_flips: int = 0  # allowed sign changes of dA/dz
    area_noise: float = 1e-6  # mm^2/mm, |dA/dz| below this counts as zero
    torsion_jump: float = 0.05  # rad/mm
    center_drift: float = 1.0  # mm
    twist_window: float = 0.25  # rad, largest per-layer rotation searched

    def scaled(self, k: float) -> "ClassifierTolerances":
        """Tolerances for the same shape with every length multiplied by ``k``."""
        return replace(self, area_noise=self.area_noise * k, torsion_jump=self.torsion_jump / k,
                       center_drift=self.center_drift * k)

    def to_dict(self):
        return {"gradJump": self.grad_jump, "signFlips": self.sign_flips, "areaNoise": self.area_noise,
                "torsionJump": self.torsion_jump, "centerDrift": self.center_drift,
                "twistWindow": self.twist_window}

    @classmethod
    def from_dict(cls, d):
        keys = {"gradJump": "grad_jump", "signFlips": "sign_flips", "areaNoise": "area_noise",
                "torsionJump": "torsion_jump", "centerDrift": "center_drift", "twistWindow": "twist_window"}
        unknown = sorted(set(d) - set(keys))
        if unknown:
            raise ValueError(f"unknown classifier keys: {', '.join(unknown)}")
        return cls(**{keys[k]: v for k, v in d.items()})


@dataclass(frozen=True)
class ShapeSignature:
    z: np.ndarray
    mean_radius: np.ndarray
    area: np.ndarray
    torsion: np.ndarray  # rad/mm, one per layer (last repeats the previous)
    centers: np.ndarray

    @property
    def dz(self) -> np.ndarray:
        return np.diff(self.z)


@dataclass(frozen=True)
class Classification:
    label: str
    criteria: tuple  # dicts {name, pass, statistic, tolerance}

    @property
    def enveloping(self) -> bool:
        return self.label == ENVELOPING

    @property
    def failed(self):
        return [c["name"] for c in self.criteria if not c["pass"]]

    def to_dict(self):
        return {"label": self.label, "criteria": [dict(c) for c in self.criteria]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _uniform_profiles(cloud: LayeredContourCloud, m: int) -> np.ndarray:
    grid = 2 * np.pi * np.arange(m) / m
    out = np.empty((len(cloud), m))
    for k in range(len(cloud)):
        th = np.mod(cloud.theta[k], 2 * np.pi)
        order = np.argsort(th)
        out[k] = np.interp(grid, th[order], cloud.r[k][order], period=2 * np.pi)
    return out


def layer_twist(profiles: np.ndarray, window: float = 0.25) -> np.ndarray:
    """Rotation between consecutive uniform-angle radius profiles.

    For each pair the angle d minimising sum |r_{k+1}(t) - r_k(t - d)|^2 over
    |d| <= window is found: a coarse scan of the cross-correlation followed
    by a bounded scalar refinement. Profiles are normalised by their mean;
    nearly circular layers report 0.
    """
    p = np.asarray(profiles, dtype=float)
    p = p / p.mean(axis=1, keepdims=True)
    spec = np.fft.rfft(p - p.mean(axis=1, keepdims=True), axis=1)
    w = np.arange(spec.shape[1])
    g = spec[1:] * np.conj(spec[:-1])
    flat = np.sum(np.abs(spec) ** 2, axis=1) < 1e-18 * p.shape[1] ** 2
    coarse = np.linspace(-window, window, 401)
    score = np.real(g @ np.exp(1j * np.outer(w, coarse)))
    out = np.zeros(len(g))
    step = coarse[1] - coarse[0]
    for k in range(len(g)):
        if flat[k] or flat[k + 1]:
            continue
        c = coarse[int(np.argmax(score[k]))]
        res = minimize_scalar(lambda d: -np.real(np.sum(g[k] * np.exp(1j * w * d))),
                              bounds=(max(c - step, -window), min(c + step, window)),
                              method="bounded", options={"xatol": 1e-10})
        out[k] = res.x
    return out


def signature(cloud: LayeredContourCloud, window: float = 0.25) -> ShapeSignature:
    """Per-layer mean radius, polar section area, twist rate and center."""
    if len(cloud) < 3:
        raise ValueError("signature needs at least 3 layers")
    area = polar_area(cloud.r, cloud.theta)
    if np.any(area <= 0):
        k = int(np.argmax(area <= 0))
        raise ValueError(f"degenerate layer at z={cloud.z[k]:g}: non-positive area")
    twist = layer_twist(_uniform_profiles(cloud, cloud.n_points), window)
    rate = twist / np.diff(cloud.z)
    torsion = np.append(rate, rate[-1])
    return ShapeSignature(cloud.z.copy(), cloud.r.mean(axis=1), area, torsion, cloud.centers.copy())


def _sign_changes(values, noise):
    s = np.sign(values[np.abs(values) > noise])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def classify(sig: ShapeSignature, tol: ClassifierTolerances = ClassifierTolerances()) -> Classification:
    """Apply the four criteria; all must pass for an enveloping label.

    * ``radius_gradient``: largest step between consecutive d(mean r)/dz values.
    * ``area_monotone``: sign changes of dA/dz, ignoring |dA/dz| <= area_noise.
    * ``torsion_continuity``: largest step between consecutive twist rates.
    * ``center_drift``: largest distance of a section center from the mean axis.
    """
    dz = sig.dz
    grad = np.diff(sig.mean_radius) / dz
    jump = float(np.max(np.abs(np.diff(grad)))) if len(grad) > 1 else 0.0
    flips = _sign_changes(np.diff(sig.area) / dz, tol.area_noise)
    tjump = float(np.max(np.abs(np.diff(sig.torsion)))) if len(sig.torsion) > 1 else 0.0
    axis = sig.centers.mean(axis=0)
    drift = float(np.max(np.hypot(*(sig.centers - axis).T)))
    criteria = (
        {"name": "radius_gradient", "pass": jump <= tol.grad_jump, "statistic": jump, "tolerance": tol.grad_jump},
        {"name": "area_monotone", "pass": flips <= tol.sign_flips, "statistic": flips, "tolerance": tol.sign_flips},
        {"name": "torsion_continuity", "pass": tjump <= tol.torsion_jump, "statistic": tjump,
         "tolerance": tol.torsion_jump},
        {"name": "center_drift", "pass": drift <= tol.center_drift, "statistic": drift,
         "tolerance": tol.center_drift},
    )
    label = ENVELOPING if all(c["pass"] for c in criteria) else NON_ENVELOPING
    return Classification(label, criteria)
