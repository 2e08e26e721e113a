"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every check appends one ``criterion N: PASS|FAIL`` line to the summary
printed at the end of the pytest run.
"""
import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE, random_psd
from test_evaluation import fixed_pair_errors, fuzz_ccdf_monotone
from test_matching import brute_force_weight, random_instance
from test_posegraph import jacobian_errors

from polaris.cli import main
from polaris.config import RunConfig
from polaris.egomotion import EgoParams, estimate_motion
from polaris.evaluation import aggregate, compute_errors
from polaris.geometry import Pose2
from polaris.gridmap import CovarianceGrid, GridSpec, default_power_floor, extract_static_surface, scatter_to_grid
from polaris.landmarks import PcfarParams, pcfar_detect
from polaris.matching import max_weight_matching
from polaris.pipeline import run_localization, run_mapping, scenario_drives
from polaris.polarimetry import CIRCULAR, POL_CONFIGS, BasisKind, PolCovariance, transform_basis, wishart_distance
from polaris.sensors import DEFAULT_MOUNTS, MotionState, RadarSpec, SensorMount
from polaris.simulator import (FenceSpec, MotionPhase, SceneSpec, SensorNoise, TrajectorySample, TrajectorySpec,
                               frame_key, generate_scene, generate_trajectory, simulate_frame)


pytestmark = pytest.mark.acceptance


def report(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(ACCEPTANCE[-1])
    assert ok, ACCEPTANCE[-1]


def cov(m):
    return PolCovariance.from_matrix(CIRCULAR, m)


# ---------------------------------------------------------------- 1


def test_criterion_1_wishart_basis_invariance():
    rng = np.random.default_rng(1)
    pairs = [(random_psd(rng, 4), random_psd(rng, 4)) for _ in range(1000)]
    t0 = time.perf_counter()
    worst = 0.0
    for c, s in pairs:
        c, s = cov(c), cov(s)
        d_circ = wishart_distance(c, s)
        d_lin = wishart_distance(transform_basis(c, BasisKind.LINEAR), transform_basis(s, BasisKind.LINEAR))
        worst = max(worst, abs(d_circ - d_lin))
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-9 and dt < 1.0, f"max |d_circ - d_lin| = {worst:.2e} (<= 1e-9), {dt:.2f} s (< 1 s)")


# ---------------------------------------------------------------- 2


def test_criterion_2_jacobians():
    t0 = time.perf_counter()
    worst = jacobian_errors(np.random.default_rng(2))
    dt = time.perf_counter() - t0
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = len(worst) == 5 and err <= 1e-5 and dt < 5.0
    report(2, ok, f"{len(worst)} factor types, worst rel. err {err:.2e} ({name}) (<= 1e-5), {dt:.2f} s (< 5 s)")


# ---------------------------------------------------------------- 3


def nyquist_trial(seed: int, radar: RadarSpec, mount: SensorMount):
    rng = np.random.default_rng(seed)
    poles = tuple(map(tuple, np.column_stack([rng.uniform(5, 40, 60), rng.uniform(-8, 8, 60)])))
    scene = generate_scene(seed, SceneSpec(poles=poles))
    v = 1.2 * radar.v_unamb
    sample = TrajectorySample(0.0, Pose2(), MotionState(v, 0.0, 0.0))
    _, det = simulate_frame(scene, sample, mount, radar, seed)
    on = estimate_motion(det, [mount], params=EgoParams(augment=True, v_unamb=radar.v_unamb), frame_id=seed)
    off = estimate_motion(det, [mount], params=EgoParams(augment=False, v_unamb=radar.v_unamb), frame_id=seed)
    return abs(on.motion.v - v) <= 0.05, abs(off.motion.v - v) > 0.05


def test_criterion_3_nyquist_augmentation():
    radar, mount = RadarSpec(max_range=40.0), SensorMount(3.7, 0.0, 0.0)
    t0 = time.perf_counter()
    res = [nyquist_trial(seed, radar, mount) for seed in range(100)]
    dt = time.perf_counter() - t0
    on_ok, off_fail = sum(r[0] for r in res), sum(r[1] for r in res)
    report(3, on_ok >= 95 and off_fail >= 90 and dt < 10.0,
           f"v = 1.2 v_unamb: on within 0.05 m/s {on_ok}/100 (>= 95), off fails {off_fail}/100 (>= 90), "
           f"{dt:.1f} s (< 10 s)")


# ---------------------------------------------------------------- 4


def fence_counts(seed: int, pols, radar=RadarSpec(max_range=40.0), noise=SensorNoise()):
    """(post recall, false positives) per configuration on one fence-with-posts drive."""
    spec = SceneSpec(fences=(FenceSpec((0.0, 6.0), (60.0, 6.0), post_spacing=3.0),), clutter_count=80,
                     clutter_area=(0.0, -15.0, 60.0, 15.0))
    scene = generate_scene(seed, spec)
    traj = generate_trajectory(seed, TrajectorySpec(duration=6.0, v0=8.0, phases=(MotionPhase(6.0),),
                                                    start=Pose2(-10.0, 0.0, 0.0)))
    grid = CovarianceGrid(GridSpec.covering(-20, -30, 80, 30, 0.15), CIRCULAR)
    floor = default_power_floor(noise.noise_power)
    for k, s in enumerate(traj):
        for sid, m in enumerate(DEFAULT_MOUNTS):
            cube, _ = simulate_frame(scene, s, m, radar, frame_key(seed, k, sid), noise, sid)
            scatter_to_grid(grid, extract_static_surface(cube, s.motion, m), s.pose, m, floor)
    posts = scene.posts()
    out = {}
    for pol in pols:
        cands = pcfar_detect(grid, PcfarParams(noise_power=noise.noise_power), POL_CONFIGS[pol])
        P = np.array([[c.x, c.y] for c in cands]).reshape(-1, 2)
        if len(P) == 0:
            out[pol] = (0.0, 0)
            continue
        d = np.linalg.norm(P[:, None, :] - posts[None], axis=2)
        out[pol] = (float(np.mean(d.min(0) < 0.5)), int(np.sum(d.min(1) >= 0.5)))
    return out


def test_criterion_4_polarimetric_detection_benefit():
    t0 = time.perf_counter()
    runs = [fence_counts(seed, ("full", "single-LR")) for seed in range(20)]
    dt = time.perf_counter() - t0
    rec4, rec1 = (np.mean([r[p][0] for r in runs]) for p in ("full", "single-LR"))
    fp4, fp1 = (sum(r[p][1] for r in runs) for p in ("full", "single-LR"))
    ratio = max(fp4, fp1) / max(1, min(fp4, fp1))
    report(4, rec4 - rec1 >= 0.3 and ratio <= 2.0 and dt < 30.0,
           f"post recall q=4 {rec4:.2f} vs q=1 (LR) {rec1:.2f} (gain >= 0.3), false positives {fp4} vs {fp1} "
           f"(ratio {ratio:.2f} <= 2), {dt:.1f} s (< 30 s)")


# ---------------------------------------------------------------- 5


def test_criterion_5_bipartite_oracle():
    rng = np.random.default_rng(5)
    instances = [(random_instance(rng), int(rng.choice([1, 3]))) for _ in range(500)]
    t0 = time.perf_counter()
    bad = 0
    for counts, min_count in instances:
        m = max_weight_matching(counts, min_count)
        got = sum(counts[(o, l)] for o, l in m.items())
        valid = len(set(m.values())) == len(m) and all(counts[k] >= min_count for k in m.items())
        bad += not valid or got != (brute_force_weight(counts, min_count) if counts else 0)
    dt = time.perf_counter() - t0
    report(5, bad == 0 and dt < 5.0, f"{500 - bad}/500 instances equal the brute-force optimum, {dt:.2f} s (< 5 s)")


# ---------------------------------------------------------------- 6


def terminal_error(est, gt):
    t, p = est[-1]
    g = min(gt, key=lambda s: abs(s.t - t))
    return math.hypot(p.x - g.pose.x, p.y - g.pose.y)


@pytest.fixture(scope="module")
def mixed_run():
    cfg = RunConfig(scenario="mixed", route_length=500.0)
    t0 = time.perf_counter()
    route, drives, left = scenario_drives(cfg)
    maps = run_mapping(cfg, route, drives)
    run = run_localization(cfg, maps, route, left)
    return route, run, time.perf_counter() - t0


def test_criterion_6_end_to_end_localization(mixed_run):
    _, run, dt = mixed_run
    est = [(r.t, r.pose) for r in run.estimates["full"]]
    m = aggregate(compute_errors(est, run.ground_truth)[0])
    loc_end, dr_end = terminal_error(est, run.ground_truth), terminal_error(run.dead_reckoning, run.ground_truth)
    heading = math.degrees(m.rmse_rot)
    ok = (m.rmse_lat <= 0.15 and heading <= 1.0 and m.rmse_long <= 3 * m.rmse_lat and 5 * loc_end <= dr_end
          and dt < 300.0)
    report(6, ok, f"lat RMSE {m.rmse_lat:.3f} m (<= 0.15), heading RMSE {heading:.2f} deg (<= 1), "
                  f"long RMSE {m.rmse_long:.3f} m (<= 3x lat), terminal error {loc_end:.3f} m vs dead reckoning "
                  f"{dr_end:.2f} m (>= 5x), {dt:.0f} s (< 300 s)")


def test_sparse_corridor_error_grows_then_recovers(mixed_run):
    """Not a numbered criterion: the pipeline example for the landmark-sparse corridor."""
    route, run, _ = mixed_run
    samples, _ = compute_errors([(r.t, r.pose) for r in run.estimates["full"]], run.ground_truth)
    x = np.array([g.pose.x for g in run.ground_truth])
    e = np.array([math.hypot(s.eps_long, s.eps_lat) for s in samples])
    c0, c1 = route.corridor
    before = np.sqrt(np.mean(e[(x > 20.0) & (x < c0 - 20.0)] ** 2))
    inside = e[(x >= c0) & (x <= c1)].max()
    after = np.sqrt(np.mean(e[(x > c1 + 20.0) & (x < c1 + 100.0)] ** 2))
    assert inside >= 2.0 * before
    assert after <= 0.5 * inside


# ---------------------------------------------------------------- 7

ABLATION = ("full", "dual-HH.VV", "single-HH", "single-LR", "single-RR")


def ablation_rmse(seed: int) -> dict:
    cfg = RunConfig(scenario="ablation", route_length=150.0, seed=seed, doppler_scale_error=0.01)
    route, drives, left = scenario_drives(cfg)
    maps = run_mapping(cfg, route, drives, ABLATION)
    run = run_localization(cfg, maps, route, left)
    return {p: aggregate(compute_errors([(r.t, r.pose) for r in run.estimates[p]], run.ground_truth)[0]).rmse_long
            for p in ABLATION}


def ordering_holds(r: dict) -> bool:
    return (r["full"] <= r["dual-HH.VV"] <= min(r["single-HH"], r["single-LR"])
            and r["single-RR"] >= max(v for p, v in r.items() if p != "single-RR"))


def test_criterion_7_polarization_ablation():
    t0 = time.perf_counter()
    results = [ablation_rmse(seed) for seed in range(5)]
    dt = time.perf_counter() - t0
    held = [ordering_holds(r) for r in results]
    per_seed = "; ".join(" ".join(f"{results[s][p]:.3f}" for p in ABLATION) + (" ok" if held[s] else " no")
                         for s in range(5))
    report(7, sum(held) >= 4 and dt < 600.0,
           f"ordering held in {sum(held)}/5 seeds (>= 4), {dt:.0f} s (< 600 s); long RMSE "
           f"[{', '.join(ABLATION)}] per seed: {per_seed}")


# ---------------------------------------------------------------- 8


def test_criterion_8_metric_correctness():
    err = fixed_pair_errors()
    mono = fuzz_ccdf_monotone(np.random.default_rng(8), 500)
    report(8, err <= 1e-9 and mono, f"10 fixed pose pairs max error {err:.1e} (<= 1e-9), "
                                    f"CCDF monotone on 500 fuzzed inputs: {mono}")


# ---------------------------------------------------------------- 9


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "run.txt"
    cfg.write_text("route_length = 25.0\nseed = 9\n", encoding="utf-8")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["map", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["localize", "--config", str(cfg), "--out", str(out)]) == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].iterdir() if p.is_file())
    kinds = {"trajectory.csv", "map_full.txt", "metrics.csv"}
    differ = [str(f) for f in files if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes()]
    ok = kinds <= {str(f) for f in files} and not differ
    report(9, ok, f"{len(files)} output files compared (trajectory, map, metrics included), "
                  f"differing: {differ or 'none'}")
