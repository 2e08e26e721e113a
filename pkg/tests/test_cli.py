import pytest

from polaris import io
from polaris.cli import main
from polaris.mapping import load_map

SMALL = "route_length = 25.0\nseed = 3\n"


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "run.txt"
    p.write_text(SMALL, encoding="utf-8")
    return p


def run_all(cfg, out):
    assert main(["map", "--config", str(cfg), "--out", str(out), "--pol", "full", "--pol", "single-RR"]) == 0
    assert main(["localize", "--config", str(cfg), "--out", str(out), "--pol", "full", "--pol", "single-RR"]) == 0
    assert main(["eval", "--out", str(out / "eval"), str(out)]) == 0


@pytest.fixture(scope="module")
def two_runs(small_config, tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    run_all(small_config, a)
    run_all(small_config, b)
    return a, b


def test_outputs_written(two_runs):
    a, _ = two_runs
    for name in ("map_full.txt", "map_single-RR.txt", "trajectory.csv", "estimates_full.csv",
                 "associations_full.log", "metrics.csv", "eval/metrics.csv", "eval/ccdf_lat_full.csv"):
        assert (a / name).is_file(), name
    assert load_map(a / "map_full.txt").metadata["drives"] == "drive0,drive1,drive2"
    rows = io.read_metrics(a / "metrics.csv")
    assert [r["config"] for r in rows] == ["dead-reckoning", "full", "single-RR"]
    assert len(io.read_estimates(a / "estimates_full.csv")) == len(io.read_trajectory(a / "trajectory.csv"))


def test_runs_are_byte_identical(two_runs):
    a, b = two_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_simulate_and_dump(small_config, tmp_path):
    assert main(["simulate", "--config", str(small_config), "--out", str(tmp_path)]) == 0
    assert len(io.read_trajectory(tmp_path / "trajectory_drive3.csv")) > 0
    assert (tmp_path / "detections_drive0.csv").read_text().startswith("t,sensor_id,range,azimuth,vr,re0,im0")


def test_errors_exit_with_status_two(tmp_path, small_config, capsys):
    assert main(["localize", "--config", str(small_config), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("seed = 1\nwho = 2\n")
    assert main(["map", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err
    corrupt = tmp_path / "m.txt"
    corrupt.write_text("polaris-map v1\nP 1 2\n")
    assert main(["localize", "--config", str(small_config), "--out", str(tmp_path), "--map", str(corrupt)]) == 2
    with pytest.raises(SystemExit):
        main(["map", "--pol", "quad"])
