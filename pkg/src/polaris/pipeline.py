"""End-to-end mapping and localization runs on simulated drives."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from . import io
from .egomotion import estimate_motion
from .evaluation import COMPONENTS, aggregate, ccdf, compute_errors, gate
from .geometry import Pose2
from .gridmap import CovarianceGrid, GridSpec, default_power_floor, extract_static_surface, scatter_to_grid
from .landmarks import extract_lines, pcfar_detect
from .mapping import LandmarkMap, consensus_lines, consensus_points
from .matching import AssociationGraph, LocalMapBuilder, Observation, match, temporal_smooth
from .polarimetry import CIRCULAR, POL_CONFIGS
from .posegraph import FactorGraph, NoiseConfig
from .scenarios import Drive, Route, make_drive, make_route
from .sensors import DEFAULT_MOUNTS, Detections, MotionState
from .simulator import TrajectorySample, frame_key, simulate_frame

MAP_VERSION = "1"
log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


@dataclass
class Frame:
    index: int
    sample: TrajectorySample
    cubes: list
    detections: Detections
    motion: MotionState
    ego_status: str


def drive_frames(route: Route, drive: Drive, cfg: RunConfig, mounts=DEFAULT_MOUNTS):
    """Simulate every sensor of every cycle and estimate the ego-motion."""
    radar, noise, ego = cfg.radar(), cfg.sensor_noise(), cfg.ego_params()
    history: list[MotionState] = []
    for k, s in enumerate(drive.trajectory):
        cubes, dets = [], []
        for sid, m in enumerate(mounts):
            cube, d = simulate_frame(route.scene, s, m, radar, frame_key(drive.noise_seed, k, sid), noise, sid)
            cubes.append(cube)
            dets.append(d)
        det = Detections.concat(dets)
        res = estimate_motion(det, mounts, history[-2:], ego, frame_id=k, t=s.t)
        history.append(res.motion)
        yield Frame(k, s, cubes, det, res.motion, res.status)


def route_grid_spec(route: Route, drives, cfg: RunConfig) -> GridSpec:
    P = np.array([[s.pose.x, s.pose.y] for d in drives for s in d.trajectory])
    r = cfg.max_range + 1.0
    return GridSpec.covering(P[:, 0].min() - r, P[:, 1].min() - r, P[:, 0].max() + r, P[:, 1].max() + r,
                             cfg.cell_size)


def _add_frame_to_grid(grid: CovarianceGrid, frame: Frame, pose: Pose2, cfg: RunConfig, mounts, floor: float,
                       window_frame: int | None = None):
    for cube, m in zip(frame.cubes, mounts):
        img = extract_static_surface(cube, frame.motion, m, cfg.max_range)
        scatter_to_grid(grid, img, pose, m, floor, window_frame)


def power_floor(cfg: RunConfig) -> float:
    noise = cfg.sensor_noise().noise_power
    return default_power_floor(noise if noise > 0 else 1e-6, 4, cfg.power_floor_factor)


# ---------------------------------------------------------------- mapping


@dataclass
class DriveCandidates:
    points: dict = field(default_factory=dict)  # pol -> list[PointCandidate]
    lines: dict = field(default_factory=dict)  # pol -> list[LineCandidate]


def map_drive(route: Route, drive: Drive, cfg: RunConfig, spec: GridSpec, pols, mounts=DEFAULT_MOUNTS,
              dump: Path | None = None) -> DriveCandidates:
    """Full-history grid along ground-truth poses, then candidates per polarization configuration."""
    grid = CovarianceGrid(spec, CIRCULAR)
    floor = power_floor(cfg)
    detections = []
    for fr in drive_frames(route, drive, cfg, mounts):
        _add_frame_to_grid(grid, fr, fr.sample.pose, cfg, mounts, floor)
        if dump is not None:
            detections.append((fr.sample.t, fr.detections))
    out = DriveCandidates()
    for pol in pols:
        basis = POL_CONFIGS[pol]
        out.points[pol] = pcfar_detect(grid, cfg.pcfar_params(), basis)
        out.lines[pol] = extract_lines(grid, cfg.ridge_params(), basis)
    if dump is not None:
        io.write_detections(dump / f"detections_{drive.name}.csv", detections)
        io.write_grid(dump / f"grid_{drive.name}.txt", grid)
        for pol in pols:
            io.write_candidates(dump / f"candidates_{drive.name}_{pol}.txt", out.points[pol], out.lines[pol])
    return out


def build_map(cands: list[DriveCandidates], pol: str, cfg: RunConfig, drive_names) -> LandmarkMap:
    if len(cands) < 2:
        raise PipelineError("map construction needs at least two drives")
    pts = consensus_points([c.points[pol] for c in cands], cfg.consensus_d, cfg.consensus_n)
    lns = consensus_lines([c.lines[pol] for c in cands], cfg.line_d_ch, cfg.line_d_prj, cfg.rdp_tol, cfg.trim_tol,
                          cfg.consensus_n)
    meta = {"cell_size": repr(cfg.cell_size), "drives": ",".join(drive_names), "version": MAP_VERSION,
            "config": pol, "datum": "local"}
    return LandmarkMap(pts, lns, meta)


def scenario_drives(cfg: RunConfig) -> tuple[Route, list[Drive], Drive]:
    """Route, mapping drives and the left-out localization drive."""
    route = make_route(cfg.scenario, cfg.seed, cfg.route_length)
    n = cfg.n_map_drives + 1
    drives = [make_drive(route, i, cfg.seed, cfg.speed, cfg.update_rate) for i in range(n)]
    lo = cfg.leave_out % n
    return route, [d for d in drives if d.index != lo], drives[lo]


def run_mapping(cfg: RunConfig, route: Route, drives, pols=None, dump: Path | None = None) -> dict:
    """Maps for each polarization configuration from the same recorded drives."""
    drives = list(drives)
    if len(drives) < 2:
        raise PipelineError("map construction needs at least two drives")
    pols = [cfg.pol] if pols is None else list(pols)
    spec = route_grid_spec(route, drives, cfg)
    cands = [map_drive(route, d, cfg, spec, pols, dump=dump) for d in drives]
    return {p: build_map(cands, p, cfg, [d.name for d in drives]) for p in pols}


# ---------------------------------------------------------------- localization


@dataclass
class EstimateRow:
    t: float
    pose: Pose2
    converged: bool
    n_landmarks: int


@dataclass
class AssociationRow:
    t: float
    pose_idx: int
    obs_id: int
    lm_id: int
    kind: str


def _beyond_segment(p, seg) -> float:
    """Distance along the segment direction by which ``p`` projects outside it (0 if inside)."""
    d = seg[1] - seg[0]
    L = float(np.hypot(*d))
    t = float((np.asarray(p) - seg[0]) @ d) / L
    return max(0.0, -t, t - L)


def extraction_bounds(spec, pose: Pose2, cfg: RunConfig):
    """Inclusive cell box covering [-behind, ahead] x [-ahead, ahead] in the vehicle frame."""
    if cfg.extract_ahead <= 0:
        return None
    a, b = cfg.extract_ahead, cfg.extract_behind
    corners = pose.transform_points(np.array([[-b, -a], [-b, a], [a, -a], [a, a]], float))
    ix, iy = spec.cell_of(corners)
    return int(ix.min()), int(iy.min()), int(ix.max()), int(iy.max())


class Localizer:
    """Per-polarization back end: extraction, matching and the factor graph."""

    def __init__(self, cfg: RunConfig, lmap: LandmarkMap, pol: str):
        self.cfg = cfg
        self.map = lmap
        self.basis = POL_CONFIGS[pol]
        self.params = cfg.match_params()
        self.noise: NoiseConfig = cfg.noise_config()
        self.builder = LocalMapBuilder(self.params)
        self.agraph = AssociationGraph(self.params.horizon_frames)
        self.graph = FactorGraph()
        self.correction = Pose2()  # odometry frame -> map frame
        self.estimates: list[EstimateRow] = []
        self.associations: list[AssociationRow] = []
        self.candidates: list | None = None  # (frame, points, lines) when dumping
        self._endpoint = 0

    def _observe(self, k: int, key, xy_odo, odo: Pose2) -> bool:
        local = odo.inverse_transform_points(np.asarray(xy_odo, float).reshape(1, 2))[0]
        r = float(np.hypot(*local))
        if r < 0.5:
            return False
        self.graph.add_observation_factor(k, key, math.atan2(local[1], local[0]), r, self.noise)
        return True

    def step(self, k: int, t: float, odo: Pose2, z_prev: tuple | None, grid: CovarianceGrid | None,
             init_pose: Pose2 | None = None):
        g = self.graph
        if z_prev is None:
            g.add_pose(k, init_pose)
            g.add_pose_prior(k, init_pose, self.noise.initial_info())
            pred = init_pose
        else:
            motion, dt = z_prev
            pred = g.pose(k - 1).compose(Pose2(motion.v * dt, 0.0, motion.omega * dt))
            g.add_pose(k, pred)
            g.add_odometry_factor(k - 1, k, motion, dt, self.noise)

        if grid is not None:
            box = extraction_bounds(grid.spec, odo, self.cfg)
            points = pcfar_detect(grid, self.cfg.pcfar_params(), self.basis, bounds=box)
            lines = extract_lines(grid, self.cfg.ridge_params(), self.basis, bounds=box)
            for p in points:
                self.builder.add(Observation(self.builder.new_uid(), t, "point", (p.x, p.y)))
            for l in lines:
                self.builder.add(Observation(self.builder.new_uid(), t, "line", (l.xs, l.ys, l.xe, l.ye)))
            if self.candidates is not None:
                self.candidates.append((k, points, lines))
        local = self.builder.build(t)
        assoc, _, _ = match(local, self.map, self.correction, self.params)
        self.agraph.add_frame(k, assoc)
        smooth = temporal_smooth(self.agraph, self.params.min_count)
        clusters = {(c.kind, c.cid): c for c in local.clusters}

        n_points = 0
        for a in smooth:
            c = clusters.get((a.kind, a.obs_id))
            if c is None or a.kind != "point" or c.last_seen != t:
                # only detections of this frame are measured against this pose; older
                # cluster members carry the odometry drift accumulated since then
                continue
            key = ("p", a.lm_id)
            if key not in g.landmarks:
                g.add_landmark(key, self.map.points[a.lm_id].xy)
                # prior added once the observation exists, keeping the invariant
                if not self._observe(k, key, c.latest, odo):
                    del g.landmarks[key]
                    continue
                g.add_point_prior(key, self.map.points[a.lm_id].xy, self.noise)
            elif not self._observe(k, key, c.latest, odo):
                continue
            n_points += 1
            self.associations.append(AssociationRow(t, k, a.obs_id, a.lm_id, "point"))

        if k % self.cfg.line_every == 0 or n_points < self.cfg.min_point_matches:
            for a in smooth:
                c = clusters.get((a.kind, a.obs_id))
                if c is None or a.kind != "line":
                    continue
                seg = self.map.lines[a.lm_id].segment
                ends = np.asarray(c.geom, float).reshape(2, 2)
                keys = []
                for which, e in zip(("start", "end"), ends):
                    local_e = odo.inverse_transform_points(e[None])[0]
                    guess = pred.transform_points(local_e[None])[0]
                    if _beyond_segment(guess, seg) > self.cfg.line_end_gate:
                        # the observed line runs past this map segment: a fragment or a
                        # clipped observation, whose clamped projection would pull along the wall
                        continue
                    key = ("e", self._endpoint)
                    self._endpoint += 1
                    g.add_landmark(key, guess)
                    if self._observe(k, key, e, odo):
                        g.add_line_prior(key, seg, which, self.noise)
                        keys.append(key)
                    else:
                        del g.landmarks[key]
                if keys:
                    self.associations.append(AssociationRow(t, k, a.obs_id, a.lm_id, "line"))

        n_lm = sum(1 for key in g.landmarks if key[0] == "p")
        if n_lm < self.cfg.min_constraint:
            g.add_fallback_pose_prior(k, pred, self.noise)
        g.truncate_window(self.cfg.window_poses)
        res = g.optimize(max_iterations=self.cfg.lm_iterations)
        est = g.pose(k)
        self.correction = est.compose(odo.inverse())
        self.estimates.append(EstimateRow(t, est, res.converged, len(g.landmarks)))


@dataclass
class LocalizationRun:
    estimates: dict  # pol -> list[EstimateRow]
    associations: dict  # pol -> list[AssociationRow]
    dead_reckoning: list  # (t, Pose2)
    ground_truth: list  # TrajectorySample
    ego_status: list


def run_localization(cfg: RunConfig, maps: dict, route: Route, drive: Drive, mounts=DEFAULT_MOUNTS,
                     dump: Path | None = None) -> LocalizationRun:
    """Localize one drive against each map; all back ends share the frames and the grid.

    The gridmap is fed with integrated odometry poses only; estimates never
    flow back into it.
    """
    if not maps:
        raise PipelineError("no map to localize against")
    spec = route_grid_spec(route, [drive], cfg)
    grid = CovarianceGrid(spec, CIRCULAR, window_frames=cfg.window_frames)
    floor = power_floor(cfg)
    locs = {p: Localizer(cfg, m, p) for p, m in maps.items()}
    detections = []
    if dump is not None:
        for loc in locs.values():
            loc.candidates = []
    dr, status = [], []
    odo = prev = None
    dt = 1.0 / cfg.update_rate
    for fr in drive_frames(route, drive, cfg, mounts):
        k = fr.index
        if k == 0:
            odo = fr.sample.pose
            z = None
        else:
            odo = odo.compose(Pose2(prev.v * dt, 0.0, prev.omega * dt))
            z = (prev, dt)
        _add_frame_to_grid(grid, fr, odo, cfg, mounts, floor, k)
        grid.evict_window(k)
        extract = grid if k % cfg.extract_every == 0 else None
        for loc in locs.values():
            loc.step(k, fr.sample.t, odo, z, extract, fr.sample.pose if k == 0 else None)
        dr.append((fr.sample.t, odo))
        status.append(fr.ego_status)
        prev = fr.motion
        if dump is not None:
            detections.append((fr.sample.t, fr.detections))
    if dump is not None:
        io.write_detections(dump / f"detections_{drive.name}.csv", detections)
        io.write_grid(dump / f"grid_window_{drive.name}.txt", grid)
        for p, loc in locs.items():
            with open(dump / f"candidates_{drive.name}_{p}.txt", "w", encoding="utf-8") as fh:
                for k, points, lines in loc.candidates:
                    fh.write(f"# frame {k}\n")
                    for c in points:
                        fh.write(f"PC {c.x:.9f} {c.y:.9f} {c.score:.9f} {c.support}\n")
                    for c in lines:
                        fh.write(f"LC {c.xs:.9f} {c.ys:.9f} {c.xe:.9f} {c.ye:.9f} {c.support}\n")
    return LocalizationRun({p: l.estimates for p, l in locs.items()},
                           {p: l.associations for p, l in locs.items()}, dr, list(drive.trajectory), status)


def run_scenario(cfg: RunConfig, pols=None):
    """Map from the mapping drives, then localize the left-out drive."""
    pols = [cfg.pol] if pols is None else list(pols)
    route, map_drives, loc_drive = scenario_drives(cfg)
    maps = run_mapping(cfg, route, map_drives, pols)
    run = run_localization(cfg, maps, route, loc_drive)
    return route, maps, run


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalRun:
    route: str
    drive: str
    config: str
    estimate: list  # (t, Pose2)
    ground_truth: list  # TrajectorySample


def run_eval(runs, rate: float = 10.0, v_min: float = 0.5):
    """Metrics rows and pooled CCDFs per (configuration, component).

    Runs whose estimate and ground-truth lengths differ are skipped with a
    warning. Returns (rows, ccdfs, skipped run indices).
    """
    rows, pooled, skipped = [], {}, []
    for n, r in enumerate(runs):
        if r.ground_truth is None or len(r.estimate) != len(r.ground_truth):
            log.warning("run %s/%s/%s: %s, skipped", r.route, r.drive, r.config,
                        "no ground truth" if r.ground_truth is None else
                        f"{len(r.estimate)} estimates for {len(r.ground_truth)} ground-truth samples")
            skipped.append(n)
            continue
        samples, _ = compute_errors(r.estimate, r.ground_truth, rate)
        rows.append((r.route, r.drive, r.config, aggregate(samples, v_min)))
        for s in gate(samples, v_min):
            for c in COMPONENTS:
                pooled.setdefault((r.config, c), []).append(abs(s.component(c)))
    ccdfs = {key: ccdf(vals) for key, vals in sorted(pooled.items())}
    return rows, ccdfs, skipped
