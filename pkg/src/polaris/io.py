"""Text formats for trajectories, estimates, detections, logs, grid dumps and metrics.

Floats are written with fixed precision so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .evaluation import Metrics
from .geometry import Pose2
from .gridmap import CovarianceGrid
from .sensors import MotionState
from .simulator import GtQuality, TrajectorySample


class FormatError(ValueError):
    def __init__(self, path, line_no: int, msg: str):
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {msg}")


def _f(v: float) -> str:
    return "nan" if v != v else f"{v:.9f}"


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != list(header):
        raise FormatError(path, 1, f"expected header {','.join(header)}")
    for no, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise FormatError(path, no, f"expected {len(header)} fields, got {len(row)}")
        yield no, row


# ---------------------------------------------------------------- trajectories

TRAJECTORY_HEADER = ("t", "x", "y", "yaw", "v", "omega", "quality")
ESTIMATE_HEADER = ("t", "x", "y", "yaw", "converged", "n_landmarks")


def write_trajectory(path, samples) -> None:
    _write_rows(path, TRAJECTORY_HEADER, [
        (_f(s.t), _f(s.pose.x), _f(s.pose.y), _f(s.pose.yaw), _f(s.motion.v), _f(s.motion.omega),
         GtQuality(s.gt_quality).value) for s in samples])


def read_trajectory(path) -> list[TrajectorySample]:
    out = []
    for no, r in _read_rows(path, TRAJECTORY_HEADER):
        try:
            t, x, y, yaw, v, w = (float(c) for c in r[:6])
            q = GtQuality(r[6])
        except ValueError as exc:
            raise FormatError(path, no, str(exc)) from None
        out.append(TrajectorySample(t, Pose2(x, y, yaw), MotionState(v, w, t), q))
    return out


def write_estimates(path, rows) -> None:
    """``rows``: objects with t, pose, converged and n_landmarks."""
    _write_rows(path, ESTIMATE_HEADER, [
        (_f(r.t), _f(r.pose.x), _f(r.pose.y), _f(r.pose.yaw), int(bool(r.converged)), int(r.n_landmarks))
        for r in rows])


def read_estimates(path) -> list[tuple[float, Pose2, bool, int]]:
    out = []
    for no, r in _read_rows(path, ESTIMATE_HEADER):
        try:
            t, x, y, yaw = (float(c) for c in r[:4])
            out.append((t, Pose2(x, y, yaw), r[4] == "1", int(r[5])))
        except ValueError as exc:
            raise FormatError(path, no, str(exc)) from None
    return out


def write_poses(path, poses) -> None:
    """(t, Pose2) sequence in the estimate layout, e.g. a dead-reckoning track."""
    _write_rows(path, ESTIMATE_HEADER, [(_f(t), _f(p.x), _f(p.y), _f(p.yaw), 1, 0) for t, p in poses])


# ---------------------------------------------------------------- detections and logs


def write_detections(path, frames) -> None:
    """``frames``: (t, Detections) pairs. One row per detection, channels as re/im pairs."""
    q = 4
    header = ["t", "sensor_id", "range", "azimuth", "vr"]
    for k in range(q):
        header += [f"re{k}", f"im{k}"]
    rows = []
    for t, det in frames:
        for i in range(len(det.range)):
            row = [_f(t), int(det.sensor_id[i]), _f(det.range[i]), _f(det.azimuth[i]), _f(det.vr[i])]
            for c in det.omega[i]:
                row += [_f(c.real), _f(c.imag)]
            rows.append(row)
    _write_rows(path, header, rows)


def write_associations(path, rows) -> None:
    """Association log: ``A <t> <pose_idx> <obs_id> <lm_id> <kind>`` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(f"A {_f(r.t)} {r.pose_idx} {r.obs_id} {r.lm_id} {r.kind}\n")


def write_candidates(path, points, lines) -> None:
    """Candidate dump: ``PC x y score support`` and ``LC xs ys xe ye support``."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in points:
            fh.write(f"PC {_f(p.x)} {_f(p.y)} {_f(p.score)} {p.support}\n")
        for l in lines:
            fh.write(f"LC {_f(l.xs)} {_f(l.ys)} {_f(l.xe)} {_f(l.ye)} {l.support}\n")


def write_grid(path, grid: CovarianceGrid) -> None:
    """Grid dump: a ``grid`` header with the grid geometry, then ``ix iy N re/im...`` per non-empty cell."""
    s = grid.spec
    ix, iy, sums, counts = grid.cells()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"grid {_f(s.origin[0])} {_f(s.origin[1])} {_f(s.cell_size)} {s.width} {s.height} "
                 f"{grid.basis.kind.value} {grid.q}\n")
        for k in range(len(ix)):
            vals = " ".join(f"{_f(c.real)} {_f(c.imag)}" for c in sums[k])
            fh.write(f"{ix[k]} {iy[k]} {counts[k]} {vals}\n")


def read_grid(path):
    """(header fields, ix, iy, counts, sums) of a grid dump."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("grid "):
        raise FormatError(path, 1, "missing grid header")
    head = lines[0].split()
    ix, iy, n, sums = [], [], [], []
    for no, line in enumerate(lines[1:], 2):
        tok = line.split()
        try:
            ix.append(int(tok[0]))
            iy.append(int(tok[1]))
            n.append(int(tok[2]))
            v = np.array(tok[3:], float)
        except (ValueError, IndexError) as exc:
            raise FormatError(path, no, str(exc)) from None
        if v.size % 2:
            raise FormatError(path, no, "odd number of re/im values")
        sums.append(v[0::2] + 1j * v[1::2])
    return head[1:], np.array(ix), np.array(iy), np.array(n), np.array(sums).reshape(len(n), -1)


# ---------------------------------------------------------------- metrics

METRICS_HEADER = ("route", "drive", "config", "rmse_long", "max_long", "rmse_lat", "max_lat",
                  "rmse_rot", "max_rot", "reliable_fraction")
CCDF_HEADER = ("eps", "ccdf")


def metrics_row(route: str, drive: str, config: str, m) -> tuple:
    if isinstance(m, Metrics):
        vals = (m.rmse_long, m.max_long, m.rmse_lat, m.max_lat, m.rmse_rot, m.max_rot)
    else:
        vals = (math.nan,) * 6
    return (route, drive, config) + tuple(_f(v) for v in vals) + (_f(m.reliable_fraction),)


def write_metrics(path, rows) -> None:
    """``rows``: (route, drive, config, Metrics | EmptyMetrics)."""
    _write_rows(path, METRICS_HEADER, [metrics_row(*r) for r in rows])


def read_metrics(path) -> list[dict]:
    out = []
    for no, r in _read_rows(path, METRICS_HEADER):
        d = dict(zip(METRICS_HEADER, r))
        try:
            for k in METRICS_HEADER[3:]:
                d[k] = float(d[k])
        except ValueError as exc:
            raise FormatError(path, no, str(exc)) from None
        out.append(d)
    return out


def write_ccdf(path, eps, values) -> None:
    _write_rows(path, CCDF_HEADER, [(_f(e), _f(c)) for e, c in zip(eps, values)])
