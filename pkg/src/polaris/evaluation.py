"""Absolute trajectory errors, gating, aggregate metrics and empirical CCDFs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2, wrap_angle
from .simulator import GtQuality

COMPONENTS = ("long", "lat", "rot")


@dataclass(frozen=True)
class TrajectoryErrorSample:
    t: float
    eps_long: float
    eps_lat: float
    eps_rot: float
    gt_quality: GtQuality
    speed: float

    def component(self, name: str) -> float:
        return {"long": self.eps_long, "lat": self.eps_lat, "rot": self.eps_rot}[name]


def pose_error(est: Pose2, gt: Pose2) -> tuple[float, float, float]:
    """(longitudinal, lateral, rotational) error of ``est`` expressed in the gt frame."""
    dx, dy = est.x - gt.x, est.y - gt.y
    c, s = math.cos(gt.yaw), math.sin(gt.yaw)
    # |wrap(dyaw)| equals arccos(0.5 tr(R_gt^T R_est)) without arccos' loss of precision near 0
    return c * dx + s * dy, -s * dx + c * dy, abs(wrap_angle(est.yaw - gt.yaw))


def compute_errors(estimate, ground_truth, rate: float = 10.0):
    """Align each estimate to the nearest gt sample within half a period.

    ``estimate`` is a sequence of (t, Pose2); ``ground_truth`` a sequence of
    TrajectorySample. Returns (samples, number of skipped estimates).
    """
    gt_t = np.array([g.t for g in ground_truth], dtype=float)
    if gt_t.size == 0:
        return [], len(estimate)
    order = np.argsort(gt_t, kind="stable")
    gt_sorted = gt_t[order]
    tol = 1.0 / (2.0 * rate) + 1e-9
    out, skipped = [], 0
    for t, pose in estimate:
        k = int(np.searchsorted(gt_sorted, t))
        cand = [c for c in (k - 1, k) if 0 <= c < gt_sorted.size]
        best = min(cand, key=lambda c: (abs(gt_sorted[c] - t), c))
        if abs(gt_sorted[best] - t) > tol:
            skipped += 1
            continue
        g = ground_truth[int(order[best])]
        el, ea, er = pose_error(pose, g.pose)
        out.append(TrajectoryErrorSample(float(t), el, ea, er, GtQuality(g.gt_quality), abs(g.motion.v)))
    return out, skipped


@dataclass(frozen=True)
class Metrics:
    rmse_long: float
    max_long: float
    rmse_lat: float
    max_lat: float
    rmse_rot: float
    max_rot: float
    reliable_fraction: float
    n_used: int

    empty = False


@dataclass(frozen=True)
class EmptyMetrics:
    """Marker for a sample set in which nothing survived the gates."""

    reliable_fraction: float
    n_used: int = 0

    empty = True


def gate(samples, v_min: float = 0.5) -> list[TrajectoryErrorSample]:
    return [s for s in samples if s.gt_quality == GtQuality.CARRIER and s.speed > v_min]


def aggregate(samples, v_min: float = 0.5):
    """RMSE and max-abs per component over Carrier samples faster than ``v_min``."""
    samples = list(samples)
    used = gate(samples, v_min)
    frac = len(used) / len(samples) if samples else 0.0
    if not used:
        return EmptyMetrics(frac)
    vals = {c: np.array([s.component(c) for s in used]) for c in COMPONENTS}
    stats = {}
    for c, v in vals.items():
        stats[f"rmse_{c}"] = float(np.sqrt(np.mean(v**2)))
        stats[f"max_{c}"] = float(np.max(np.abs(v)))
    return Metrics(reliable_fraction=frac, n_used=len(used), **stats)


def ccdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Empirical complementary CDF evaluated at the sorted distinct values.

    Returns (eps, P(X > eps)); between knots the curve is constant from the
    left knot (right-continuous).
    """
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if v.size == 0:
        return np.zeros(0), np.zeros(0)
    eps = np.unique(v)
    return eps, 1.0 - np.searchsorted(v, eps, side="right") / v.size


def ccdf_at(values, eps) -> np.ndarray:
    """P(X > eps) for arbitrary query points."""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if v.size == 0:
        return np.full(np.shape(eps), np.nan)
    return 1.0 - np.searchsorted(v, np.asarray(eps, float), side="right") / v.size


def speed_correlation(samples, component: str = "long") -> float:
    """Pearson correlation between |error component| and speed (nan if undefined)."""
    samples = list(samples)
    if len(samples) < 2:
        return float("nan")
    e = np.abs([s.component(component) for s in samples])
    v = np.array([s.speed for s in samples])
    if np.std(e) == 0 or np.std(v) == 0:
        return float("nan")
    return float(np.corrcoef(e, v)[0, 1])
