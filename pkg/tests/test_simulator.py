import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from polaris.geometry import Pose2, wrap_angle
from polaris.sensors import MotionState, RadarSpec, SensorMount, fold_velocity
from polaris.simulator import (FenceSpec, MotionPhase, SceneSpec, SensorNoise, TrajectorySample, TrajectorySpec,
                               arc_step, dihedral, generate_scene, generate_trajectory, simulate_frame)

RADAR = RadarSpec()


def point_scene(xy, omega):
    from polaris.simulator import Scene
    return Scene(np.array([xy], float), np.array([omega], complex), np.zeros(1, np.int8), np.zeros(1, np.int64),
                 np.zeros((1, 2)), np.zeros(1, bool))


def at_rest(v=0.0, omega=0.0):
    return TrajectorySample(0.0, Pose2(), MotionState(v, omega, 0.0))


# ---------------------------------------------------------------- scenes

def test_empty_scene():
    assert len(generate_scene(1, SceneSpec())) == 0


def test_fence_posts_count_and_collinearity():
    scene = generate_scene(0, SceneSpec(fences=(FenceSpec((0.0, 5.0), (20.0, 5.0), post_spacing=2.0),)))
    posts = scene.posts()
    assert len(posts) == 11
    assert np.allclose(posts[:, 1], 5.0)
    assert np.allclose(np.sort(posts[:, 0]), np.arange(0, 21, 2))


def test_scene_deterministic():
    spec = SceneSpec(fences=(FenceSpec((0.0, 5.0), (20.0, 5.0)),), poles=((3.0, -4.0),), clutter_count=20,
                     clutter_area=(0, -10, 20, 10))
    a, b = generate_scene(7, spec), generate_scene(7, spec)
    assert a.positions.tobytes() == b.positions.tobytes()
    assert a.omega.tobytes() == b.omega.tobytes()


# ---------------------------------------------------------------- trajectories

def test_straight_line_one_second():
    tr = generate_trajectory(0, TrajectorySpec(duration=1.0, rate=10.0, v0=10.0, phases=(MotionPhase(1.0),)))
    assert len(tr) == 11
    end = tr[-1].pose
    assert abs(end.x - 10.0) < 1e-9 and abs(end.y) < 1e-9 and abs(end.yaw) < 1e-12


def test_standstill_keeps_pose():
    tr = generate_trajectory(0, TrajectorySpec(duration=2.0, v0=0.0, phases=(MotionPhase(2.0),)))
    assert all(s.pose == tr[0].pose for s in tr)


def test_half_circle():
    tr = generate_trajectory(0, TrajectorySpec(duration=10.0, v0=math.pi,
                                               phases=(MotionPhase(10.0, 0.0, math.pi / 10),)))
    end = tr[-1].pose
    assert abs(abs(wrap_angle(end.yaw)) - math.pi) < 1e-9
    # radius v / omega = 10 about (0, 10)
    assert abs(end.x) < 1e-9 and abs(end.y - 20.0) < 1e-9


@given(st.integers(0, 1000))
def test_poses_consistent_with_motion(seed):
    tr = generate_trajectory(seed, TrajectorySpec(duration=5.0))
    for a, b in zip(tr, tr[1:]):
        p = arc_step(a.pose, a.motion.v, a.motion.omega, b.t - a.t)
        assert abs(p.x - b.pose.x) < 1e-6 and abs(p.y - b.pose.y) < 1e-6
        assert abs(wrap_angle(p.yaw - b.pose.yaw)) < 1e-6


# ---------------------------------------------------------------- frames

def test_stationary_boresight_detection():
    _, d = simulate_frame(point_scene((10.0, 0.0), [0, 1, 1, 0]), at_rest(), SensorMount(), RADAR, 1,
                          SensorNoise.none())
    assert len(d) == 1
    assert abs(d.range[0] - 10.0) < 1e-12 and abs(d.azimuth[0]) < 1e-12 and abs(d.vr[0]) < 1e-12


def test_folded_radial_velocity():
    _, d = simulate_frame(point_scene((10.0, 0.0), [0, 1, 1, 0]), at_rest(6.0), SensorMount(), RADAR, 1,
                          SensorNoise.none())
    assert abs(d.vr[0] - 4.0) < 1e-12


def test_even_bounce_energy_in_copolar_channels():
    _, d = simulate_frame(point_scene((10.0, 1.0), dihedral(1.0, 0.2)), at_rest(), SensorMount(), RADAR, 1,
                          SensorNoise.none())
    p = np.abs(d.omega[0]) ** 2
    assert p[1] < 1e-20 and p[2] < 1e-20
    assert p[0] > 0.4 and p[3] > 0.4


def test_cube_energy_equals_rcs():
    omega = np.array([0.3, 1.0 + 0.5j, 1.0 + 0.5j, -0.2j])
    cube, _ = simulate_frame(point_scene((12.3, -2.1), omega), at_rest(3.3, 0.1), SensorMount(), RADAR, 4,
                             SensorNoise.none())
    assert np.allclose(np.sum(np.abs(cube.values) ** 2, axis=0), np.abs(omega) ** 2, rtol=1e-9)


def test_frame_deterministic():
    scene = generate_scene(3, SceneSpec(clutter_count=50, clutter_area=(2, -15, 30, 15)))
    a = simulate_frame(scene, at_rest(5.0, 0.1), SensorMount(), RADAR, 99)
    b = simulate_frame(scene, at_rest(5.0, 0.1), SensorMount(), RADAR, 99)
    assert a[1].vr.tobytes() == b[1].vr.tobytes()
    assert a[1].omega.tobytes() == b[1].omega.tobytes()
    assert a[0].keys.tobytes() == b[0].keys.tobytes()


@given(st.floats(-100, 100), st.floats(0.5, 20))
def test_fold_interval_and_congruence(v, vu):
    f = fold_velocity(v, vu)
    assert -vu - 1e-9 < f <= vu + 1e-9
    k = (v - f) / (2 * vu)
    assert abs(k - round(k)) < 1e-9
