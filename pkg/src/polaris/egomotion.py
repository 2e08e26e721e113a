"""Instantaneous ego-motion from Doppler detections.

Each static detection constrains the vehicle motion linearly:
``vr = a(theta) * v + b(theta) * omega`` with ``theta`` the ray angle in the
vehicle frame. A two-point RANSAC over (optionally Nyquist-augmented)
detections finds the dominant static consensus.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sensors import Detections, MotionState, SensorMount


class EmptyHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class EgoParams:
    inlier_threshold: float = 0.1
    iterations: int = 200
    early_exit_ratio: float = 0.8
    a_max: float = 5.0
    alpha_max: float = 2.0
    v_max: float = 20.0
    omega_max: float = 1.5
    augment: bool = True
    v_unamb: float = 5.0


def zone_range(v_max: float, v_unamb: float) -> tuple[int, int]:
    k = int(math.ceil(v_max / (2.0 * v_unamb)))
    return -k, k


def model_coefficients(mount: SensorMount, azimuth):
    """Coefficients (a, b) with vr = a*v + b*omega for rays at ``azimuth``."""
    th = mount.yaw + np.asarray(azimuth, dtype=float)
    c, s = np.cos(th), np.sin(th)
    return -c, mount.y * c - mount.x * s


def predict_radial_velocity(mount: SensorMount, motion: MotionState, azimuth):
    """Radial velocity of a static target seen at ``azimuth`` (sensor frame)."""
    a, b = model_coefficients(mount, azimuth)
    out = a * motion.v + b * motion.omega
    return float(out) if np.ndim(out) == 0 else out


def augment_nyquist(dets: Detections, v_unamb: float, zones: tuple[int, int]) -> tuple[Detections, np.ndarray]:
    """Replicate every detection at vr + 2k*v_unamb for each zone k.

    Returns the augmented list and, per row, the index of its source detection.
    Rows are grouped by zone with k = 0 first.
    """
    k_min, k_max = zones
    if not k_min <= 0 <= k_max:
        raise ValueError("zone range must contain 0")
    ks = [0] + [k for k in range(k_min, k_max + 1) if k != 0]
    n = len(dets)
    if n == 0:
        return Detections(), np.zeros(0, dtype=np.int64)
    src = np.tile(np.arange(n), len(ks))
    shift = np.repeat(np.asarray(ks, float) * 2.0 * v_unamb, n)
    aug = dets.subset(src).with_vr(dets.vr[src] + shift)
    return aug, src


def extrapolate_motion(history, t: float, params: EgoParams = EgoParams()) -> MotionState:
    """Constant-acceleration prediction from the last two states, clamped."""
    if not history:
        raise EmptyHistoryError("no motion history to extrapolate from")
    last = history[-1]
    acc = alpha = 0.0
    if len(history) >= 2:
        prev = history[-2]
        dt = last.t - prev.t
        if dt > 0:
            acc = float(np.clip((last.v - prev.v) / dt, -params.a_max, params.a_max))
            alpha = float(np.clip((last.omega - prev.omega) / dt, -params.alpha_max, params.alpha_max))
    h = t - last.t
    v = float(np.clip(last.v + acc * h, -params.v_max, params.v_max))
    w = float(np.clip(last.omega + alpha * h, -params.omega_max, params.omega_max))
    return MotionState(v, w, t, degraded=True)


@dataclass(frozen=True)
class EgoResult:
    motion: MotionState
    inliers: np.ndarray  # boolean mask over the input detections
    status: str  # "ok", "gated", "fallback" or "degraded"


def _stack_rows(dets: Detections, mounts, shift_motion=None, t_ref=None):
    a = np.empty(len(dets))
    b = np.empty(len(dets))
    vr = dets.vr.copy()
    for sid in np.unique(dets.sensor_id):
        m = dets.sensor_id == sid
        a[m], b[m] = model_coefficients(mounts[int(sid)], dets.azimuth[m])
    if shift_motion is not None:
        # bring older triggers to the reference time using the predicted motion change
        m_ref, m_fn = shift_motion
        old = dets.t < t_ref
        for t_i in np.unique(dets.t[old]):
            sel = dets.t == t_i
            m_i = m_fn(float(t_i))
            vr[sel] += a[sel] * (m_ref.v - m_i.v) + b[sel] * (m_ref.omega - m_i.omega)
    return a, b, vr


def _canonical_order(dets: Detections) -> np.ndarray:
    return np.lexsort((dets.vr, dets.azimuth, dets.range, dets.t, dets.sensor_id))


def _fit(a, b, y):
    A = np.column_stack([a, b])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    return sol


def ransac_motion(a, b, vr, src, n_orig, params: EgoParams, seed: int):
    """Two-point RANSAC; returns (v, omega, inlier mask over originals) or None."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0xE60]))
    m = a.shape[0]
    i = rng.integers(0, m, params.iterations)
    j = (i + 1 + rng.integers(0, m - 1, params.iterations)) % m
    det = a[i] * b[j] - a[j] * b[i]
    valid = (src[i] != src[j]) & (np.abs(det) >= 1e-6)
    det = np.where(valid, det, 1.0)
    v = (vr[i] * b[j] - vr[j] * b[i]) / det
    w = (a[i] * vr[j] - a[j] * vr[i]) / det
    valid &= (np.abs(v) <= params.v_max) & (np.abs(w) <= params.omega_max)
    if not np.any(valid):
        return None
    v, w = v[valid], w[valid]
    res = np.abs(vr[None, :] - a[None, :] * v[:, None] - b[None, :] * w[:, None]) <= params.inlier_threshold
    hit = np.zeros((v.size, n_orig), dtype=bool)
    rows, cols = np.nonzero(res)
    hit[rows, src[cols]] = True
    counts = hit.sum(axis=1)
    # sequential semantics: first hypothesis reaching the early-exit target, else the best
    reached = np.flatnonzero(counts >= params.early_exit_ratio * n_orig)
    k = int(reached[0]) if reached.size else int(np.argmax(counts))
    best = (v[k], w[k])
    v, w = best
    for _ in range(2):
        res = np.abs(vr - a * v - b * w)
        # per original detection keep the best-fitting zone copy
        order = np.lexsort((res, src))
        first = np.ones(order.size, dtype=bool)
        first[1:] = src[order[1:]] != src[order[:-1]]
        rows = order[first]
        rows = rows[res[rows] <= params.inlier_threshold]
        if rows.size < 2:
            break
        v, w = _fit(a[rows], b[rows], vr[rows])
    res = np.abs(vr - a * v - b * w) <= params.inlier_threshold
    hit = np.zeros(n_orig, dtype=bool)
    hit[src[res]] = True
    return float(v), float(w), hit


def estimate_motion(dets: Detections, mounts, history=(), params: EgoParams = EgoParams(),
                    frame_id: int = 0, t: float | None = None) -> EgoResult:
    """Estimate (v, omega) from all sensors' detections of one cycle."""
    history = list(history)
    n = len(dets)
    if t is None:
        t = float(dets.t.max()) if n else (history[-1].t if history else 0.0)

    def fallback():
        if history:
            return EgoResult(extrapolate_motion(history, t, params), np.zeros(n, bool), "fallback")
        return EgoResult(MotionState(0.0, 0.0, t, degraded=True), np.zeros(n, bool), "degraded")

    if n < 2:
        return fallback()
    order = _canonical_order(dets)
    sd = dets.subset(order)
    shift = None
    if history and np.any(sd.t < t):
        m_ref = extrapolate_motion(history, t, params)
        shift = (m_ref, lambda ti: extrapolate_motion(history, ti, params))
    a, b, vr = _stack_rows(sd, mounts, shift, t)
    src = np.arange(n)
    if params.augment:
        k_min, k_max = zone_range(params.v_max, params.v_unamb)
        ks = [0] + [k for k in range(k_min, k_max + 1) if k != 0]
        src = np.tile(np.arange(n), len(ks))
        vr = vr[src] + np.repeat(np.asarray(ks, float) * 2.0 * params.v_unamb, n)
        a, b = a[src], b[src]
    fit = ransac_motion(a, b, vr, src, n, params, frame_id)
    if fit is None:
        return fallback()
    v, w, hit = fit
    inliers = np.zeros(n, dtype=bool)
    inliers[order] = hit
    est = MotionState(v, w, t)
    if history:
        prev = history[-1]
        dt = t - prev.t
        if dt > 0 and (abs(v - prev.v) / dt > params.a_max or abs(w - prev.omega) / dt > params.alpha_max):
            return EgoResult(extrapolate_motion(history, t, params), inliers, "gated")
    return EgoResult(est, inliers, "ok")
