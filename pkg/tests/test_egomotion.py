import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polaris.egomotion import (EgoParams, EmptyHistoryError, augment_nyquist, estimate_motion, extrapolate_motion,
                               predict_radial_velocity)
from polaris.sensors import DEFAULT_MOUNTS, Detections, MotionState, SensorMount, fold_velocity


def static_detections(motion, n=100, seed=0, n_outliers=0, v_unamb=5.0, mounts=DEFAULT_MOUNTS, fold=True,
                      fov_deg=60.0):
    """Exact Doppler of static targets spread over the field of view, optionally with outliers."""
    rng = np.random.default_rng(seed)
    sid = rng.integers(0, len(mounts), n)
    az = rng.uniform(-math.radians(fov_deg), math.radians(fov_deg), n)
    vr = np.array([predict_radial_velocity(mounts[s], motion, a) for s, a in zip(sid, az)])
    if n_outliers:
        k = rng.choice(n, n_outliers, replace=False)
        vr[k] = rng.uniform(-15, 15, n_outliers)
    if fold:
        vr = fold_velocity(vr, v_unamb)
    return Detections(sid, rng.uniform(2, 40, n), az, vr, np.zeros((n, 4)), np.full(n, motion.t))


# ---------------------------------------------------------------- prediction

def test_predict_examples():
    m = SensorMount()
    assert predict_radial_velocity(m, MotionState(10, 0), 0.0) == -10.0
    assert abs(predict_radial_velocity(m, MotionState(10, 0), math.radians(60)) + 5.0) < 1e-12
    assert abs(predict_radial_velocity(SensorMount(3.5, 0.0), MotionState(0, 0.5), math.pi / 2) + 1.75) < 1e-12


@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(-1.0, 1.0), st.floats(-20, 20), st.floats(-1, 1),
       st.floats(-20, 20), st.floats(-1, 1))
def test_predict_linear(mx, my, az, v1, w1, v2, w2):
    m = SensorMount(mx, my, 0.3)
    lhs = predict_radial_velocity(m, MotionState(v1 + v2, w1 + w2), az)
    rhs = predict_radial_velocity(m, MotionState(v1, w1), az) + predict_radial_velocity(m, MotionState(v2, w2), az)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


# ---------------------------------------------------------------- augmentation

def one(vr):
    return Detections([0], [10.0], [0.0], [vr], np.zeros((1, 4)), [0.0])


def test_augment_examples():
    aug, src = augment_nyquist(one(4.0), 5.0, (-1, 1))
    assert sorted(aug.vr) == [-6.0, 4.0, 14.0]
    assert list(src) == [0, 0, 0]
    same, _ = augment_nyquist(one(4.0), 5.0, (0, 0))
    assert list(same.vr) == [4.0]
    empty, _ = augment_nyquist(Detections(), 5.0, (-1, 1))
    assert len(empty) == 0


# ---------------------------------------------------------------- estimation

def test_exact_static_detections():
    truth = MotionState(8.0, 0.1, 0.0)
    res = estimate_motion(static_detections(truth), DEFAULT_MOUNTS)
    assert res.status == "ok"
    assert abs(res.motion.v - 8.0) < 1e-6 and abs(res.motion.omega - 0.1) < 1e-6


def test_outliers_monte_carlo():
    truth = MotionState(8.0, 0.1, 0.0)
    good = 0
    for seed in range(100):
        dets = static_detections(truth, n=120, seed=seed, n_outliers=20)
        r = estimate_motion(dets, DEFAULT_MOUNTS, frame_id=seed).motion
        good += abs(r.v - 8.0) <= 0.05 and abs(r.omega - 0.1) <= 0.005
    assert good >= 95


def test_augmentation_beyond_unambiguous_velocity():
    # narrow forward view: every return aliases, so only the unfolded domain holds the truth
    front = DEFAULT_MOUNTS[:1]
    dets = static_detections(MotionState(6.0, 0.0, 0.0), seed=3, mounts=front, fov_deg=20.0)
    assert np.all(dets.vr > 0)
    on = estimate_motion(dets, front, params=EgoParams(augment=True)).motion
    off = estimate_motion(dets, front, params=EgoParams(augment=False)).motion
    assert abs(on.v - 6.0) <= 0.05
    assert abs(off.v - 6.0) > 1.0


def test_permutation_invariance():
    dets = static_detections(MotionState(7.0, -0.2, 0.0), seed=5, n_outliers=15)
    perm = np.random.default_rng(1).permutation(len(dets))
    a = estimate_motion(dets, DEFAULT_MOUNTS, frame_id=11)
    b = estimate_motion(dets.subset(perm), DEFAULT_MOUNTS, frame_id=11)
    assert a.motion == b.motion
    assert np.array_equal(a.inliers[perm], b.inliers)


def test_augmentation_neutral_below_unambiguous_velocity():
    dets = static_detections(MotionState(3.0, 0.05, 0.0), seed=2, mounts=(SensorMount(),) * 3)
    assert np.all(np.abs(dets.vr) < 5.0)
    on = estimate_motion(dets, DEFAULT_MOUNTS[:1] * 3, params=EgoParams(augment=True)).motion
    off = estimate_motion(dets, DEFAULT_MOUNTS[:1] * 3, params=EgoParams(augment=False)).motion
    assert abs(on.v - off.v) < 1e-9 and abs(on.omega - off.omega) < 1e-9


def test_implausible_acceleration_is_gated():
    history = [MotionState(5.0, 0.0, 0.0)]
    dets = static_detections(MotionState(8.0, 0.0, 0.1), seed=4)
    res = estimate_motion(dets, DEFAULT_MOUNTS, history)
    assert res.status == "gated"
    assert abs(res.motion.v - 5.0) < 1e-12


def test_too_few_detections():
    res = estimate_motion(one(1.0), DEFAULT_MOUNTS, [MotionState(5.0, 0.0, 0.0)], t=0.1)
    assert res.status == "fallback" and res.motion.v == 5.0
    res = estimate_motion(Detections(), DEFAULT_MOUNTS)
    assert res.status == "degraded" and res.motion.v == 0.0 and res.motion.degraded


# ---------------------------------------------------------------- extrapolation

def test_extrapolate_examples():
    assert extrapolate_motion([MotionState(5.0, 0.0, 0.0)], 7.0).v == 5.0
    m = extrapolate_motion([MotionState(4.0, 0.0, 0.0), MotionState(5.0, 0.0, 1.0)], 1.5)
    assert abs(m.v - 5.5) < 1e-12
    m = extrapolate_motion([MotionState(19.0, 0.0, 0.0), MotionState(20.0, 0.0, 1.0)], 3.0, EgoParams(v_max=20.0))
    assert m.v == 20.0
    with pytest.raises(EmptyHistoryError):
        extrapolate_motion([], 0.0)
