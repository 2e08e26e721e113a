import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polaris import io
from polaris.config import ConfigError, RunConfig, format_config, load_config, parse_config, with_overrides
from polaris.evaluation import EmptyMetrics, Metrics
from polaris.geometry import Pose2
from polaris.gridmap import CovarianceGrid, GridSpec
from polaris.polarimetry import CIRCULAR
from polaris.sensors import Detections, MotionState
from polaris.simulator import GtQuality, TrajectorySample

# ---------------------------------------------------------------- config


def test_defaults_round_trip():
    cfg = RunConfig()
    assert parse_config(format_config(cfg)) == cfg


def test_parse_comments_types_and_overrides():
    cfg = parse_config("""
        # scenario
        seed = 7        # trailing comment
        pol = single-RR
        noiseless = yes
        cell_size = 0.2
        max_detections = 0x40
    """)
    assert (cfg.seed, cfg.pol, cfg.noiseless, cfg.cell_size, cfg.max_detections) == (7, "single-RR", True, 0.2, 64)
    assert with_overrides(cfg, seed=3).seed == 3
    assert parse_config(format_config(cfg)) == cfg


@pytest.mark.parametrize("text, line", [
    ("seed = 1\nbogus = 2", 2),
    ("seed = 1\nseed = 2", 2),
    ("\n\nspeed = fast", 3),
    ("noiseless = maybe", 1),
    ("just some words", 1),
])
def test_malformed_config_reports_line(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line_no == line


def test_invalid_choices_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config("pol = quad")
    with pytest.raises(ConfigError):
        parse_config("scenario = desert")
    with pytest.raises(ConfigError):
        with_overrides(RunConfig(), nope=1)
    p = tmp_path / "c.txt"
    p.write_text("seed = 5\n", encoding="utf-8")
    assert load_config(p).seed == 5


def test_derived_parameter_objects():
    cfg = RunConfig()
    assert abs(cfg.radar().fov_azimuth - math.radians(60)) < 1e-15
    assert cfg.sensor_noise().noise_power > 0
    assert RunConfig(noiseless=True).sensor_noise().noise_power == 0
    assert RunConfig(noiseless=True).pcfar_params().noise_power > 0
    assert cfg.noise_config().sigma_ll == cfg.sigma_ll
    assert cfg.match_params().c_unmatched == cfg.c_unmatched


# ---------------------------------------------------------------- files


def samples():
    return [TrajectorySample(0.1 * k, Pose2(k * 1.0, -0.5 * k, 0.01 * k), MotionState(10.0, 0.01, 0.1 * k),
                             GtQuality.CARRIER if k % 3 else GtQuality.STD) for k in range(5)]


def test_trajectory_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    io.write_trajectory(p, samples())
    back = io.read_trajectory(p)
    assert p.read_text().splitlines()[0] == "t,x,y,yaw,v,omega,quality"
    for a, b in zip(samples(), back):
        assert abs(a.pose.x - b.pose.x) < 1e-9 and abs(a.pose.yaw - b.pose.yaw) < 1e-9
        assert a.gt_quality == b.gt_quality and abs(a.motion.v - b.motion.v) < 1e-9


def test_trajectory_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "t.csv"
    io.write_trajectory(p, samples())
    lines = p.read_text().splitlines()
    lines[3] = lines[3].replace("Carrier", "Sometimes").replace("Std", "Sometimes")
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(io.FormatError) as exc:
        io.read_trajectory(p)
    assert exc.value.line_no == 4
    p.write_text("a,b\n1,2\n")
    with pytest.raises(io.FormatError):
        io.read_trajectory(p)


def test_estimates_and_poses(tmp_path):
    class Row:
        def __init__(self, t, pose):
            self.t, self.pose, self.converged, self.n_landmarks = t, pose, True, 3

    p = tmp_path / "e.csv"
    io.write_estimates(p, [Row(0.0, Pose2(1, 2, 0.3)), Row(0.1, Pose2(1.5, 2, 0.3))])
    rows = io.read_estimates(p)
    assert rows[1][1] == Pose2(1.5, 2, 0.3) and rows[0][2] is True and rows[0][3] == 3
    io.write_poses(p, [(0.0, Pose2(1, 2, 3))])
    assert io.read_estimates(p)[0][1] == Pose2(1, 2, 3)


def test_detection_log_layout(tmp_path):
    det = Detections(range=np.array([5.0, 7.5]), azimuth=np.array([0.1, -0.2]), vr=np.array([-9.9, -9.5]),
                     omega=np.array([[1 + 1j, 0, 0, 2j], [0, 1, 1, 0]], dtype=complex),
                     sensor_id=np.array([0, 2]))
    p = tmp_path / "d.csv"
    io.write_detections(p, [(0.5, det)])
    rows = p.read_text().splitlines()
    assert rows[0] == "t,sensor_id,range,azimuth,vr,re0,im0,re1,im1,re2,im2,re3,im3"
    f = rows[1].split(",")
    assert f[1] == "0" and float(f[2]) == 5.0 and float(f[5]) == 1.0 and float(f[12]) == 2.0


def test_grid_dump_round_trip(tmp_path):
    spec = GridSpec((0.0, 0.0), 0.5, 10, 10)
    g = CovarianceGrid(spec, CIRCULAR)
    rng = np.random.default_rng(0)
    for _ in range(20):
        om = rng.normal(size=4) + 1j * rng.normal(size=4)
        g.add_samples(rng.integers(0, 10, 1), rng.integers(0, 10, 1), om[None])
    p = tmp_path / "g.txt"
    io.write_grid(p, g)
    head, ix, iy, n, sums = io.read_grid(p)
    assert head[-2:] == [CIRCULAR.kind.value, "4"]
    gix, giy, gsums, gn = g.cells()
    assert np.array_equal(ix, gix) and np.array_equal(n, gn) and np.allclose(sums, gsums, atol=1e-8)


def test_metrics_rows(tmp_path):
    p = tmp_path / "m.csv"
    m = Metrics(0.1, 0.2, 0.05, 0.1, 0.01, 0.02, 0.9, 100)
    io.write_metrics(p, [("r", "d", "full", m), ("r", "d", "single-RR", EmptyMetrics(0.0))])
    rows = io.read_metrics(p)
    assert rows[0]["rmse_long"] == 0.1 and rows[0]["reliable_fraction"] == 0.9
    assert math.isnan(rows[1]["rmse_lat"]) and rows[1]["reliable_fraction"] == 0.0
    io.write_ccdf(tmp_path / "c.csv", [1.0, 2.0], [0.5, 0.0])
    assert (tmp_path / "c.csv").read_text() == "eps,ccdf\n1.000000000,0.500000000\n2.000000000,0.000000000\n"


@given(st.integers(0, 2**31), st.sampled_from(["full", "dual-LL.RR", "single-HH"]), st.booleans(),
       st.floats(0.05, 0.5))
def test_config_round_trip_property(seed, pol, noiseless, cell):
    cfg = RunConfig(seed=seed, pol=pol, noiseless=noiseless, cell_size=cell)
    assert parse_config(format_config(cfg)) == cfg
