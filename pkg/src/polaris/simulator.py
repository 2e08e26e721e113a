"""Synthetic world and polarimetric radar measurement generator.

Scenes are sets of point scatterers (segments are sampled densely) carrying a
circular-basis scattering vector. Frames are produced at detection level plus a
sparse range/azimuth/Doppler cube whose noise is generated procedurally, so any
bin can be evaluated without materializing the full cube.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import lru_cache

import numpy as np

from .geometry import Pose2
from .polarimetry import CIRCULAR, LINEAR, channel_change_matrix, BasisKind
from .sensors import Detections, MotionState, RadarSpec, SensorMount, fold_velocity

WAVELENGTH = 3.0e8 / 77.0e9


class ScatterKind(IntEnum):
    ODD = 0
    EVEN = 1
    MIXED = 2


class GtQuality(str, Enum):
    CARRIER = "Carrier"
    STD = "Std"


# ---------------------------------------------------------------- scattering


def odd_bounce(amplitude: float = 1.0) -> np.ndarray:
    """Circular-basis vector of a trihedral/plate: cross-polar channels only."""
    return np.array([0.0, amplitude, amplitude, 0.0], dtype=complex)


def dihedral(amplitude: float = 1.0, orientation: float = 0.0) -> np.ndarray:
    """Circular-basis vector of a dihedral whose fold line is rotated by ``orientation``."""
    c2, s2 = math.cos(2 * orientation), math.sin(2 * orientation)
    s_lin = amplitude * np.array([c2, s2, s2, -c2], dtype=complex)
    return channel_change_matrix(BasisKind.LINEAR, BasisKind.CIRCULAR) @ s_lin


def mixed(odd_amp: float, even_amp: float, orientation: float, phase: float) -> np.ndarray:
    return odd_bounce(odd_amp) + np.exp(1j * phase) * dihedral(even_amp, orientation)


# ---------------------------------------------------------------- scene


@dataclass
class Scene:
    """Struct-of-arrays scatterer set plus ground-truth landmark geometry."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    omega: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=complex))
    kind: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    object_id: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    opaque: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    # ground truth: point landmarks (x, y) with their role, line landmarks (xs, ys, xe, ye)
    gt_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    gt_point_role: list = field(default_factory=list)
    gt_lines: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def rcs_per_channel(self) -> np.ndarray:
        return np.abs(self.omega) ** 2

    def posts(self) -> np.ndarray:
        idx = [i for i, r in enumerate(self.gt_point_role) if r == "post"]
        return self.gt_points[idx].reshape(-1, 2)

    @staticmethod
    def merge(parts) -> "Scene":
        parts = list(parts)
        if not parts:
            return Scene()
        offset = 0
        oids = []
        for p in parts:
            oids.append(p.object_id + offset)
            offset += int(p.object_id.max()) + 1 if len(p) else 0
        return Scene(
            np.concatenate([p.positions for p in parts]).reshape(-1, 2),
            np.concatenate([p.omega for p in parts]).reshape(-1, 4),
            np.concatenate([p.kind for p in parts]).astype(np.int8),
            np.concatenate(oids).astype(np.int64),
            np.concatenate([p.velocity for p in parts]).reshape(-1, 2),
            np.concatenate([p.opaque for p in parts]).astype(bool),
            np.concatenate([p.gt_points for p in parts]).reshape(-1, 2),
            sum((list(p.gt_point_role) for p in parts), []),
            np.concatenate([p.gt_lines for p in parts]).reshape(-1, 4),
        )


@dataclass(frozen=True)
class FenceSpec:
    start: tuple[float, float]
    end: tuple[float, float]
    post_spacing: float = 2.0  # 0 disables posts
    element_amplitude: float = 0.12  # per sampled fence element
    post_odd_amplitude: float = 0.12
    post_even_amplitude: float = 0.3
    diagonal_post_fraction: float = 0.25  # posts whose dihedral sits at 45 degrees
    sample_spacing: float = 0.07


@dataclass(frozen=True)
class WallSpec:
    start: tuple[float, float]
    end: tuple[float, float]
    element_amplitude: float = 0.15
    sample_spacing: float = 0.07
    opaque: bool = True


@dataclass(frozen=True)
class SceneSpec:
    fences: tuple[FenceSpec, ...] = ()
    walls: tuple[WallSpec, ...] = ()
    poles: tuple[tuple[float, float], ...] = ()
    pole_amplitude: float = 1.0
    clutter_count: int = 0
    clutter_area: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # xmin, ymin, xmax, ymax
    clutter_amplitude: float = 0.3
    movers: tuple[tuple[float, float, float, float], ...] = ()  # x, y, vx, vy
    mover_amplitude: float = 1.0
    # point landmarks with explicit signatures: x, y, odd amplitude, even amplitude, dihedral orientation
    reflectors: tuple[tuple[float, float, float, float, float], ...] = ()


def _segment_samples(a, b, spacing):
    a, b = np.asarray(a, float), np.asarray(b, float)
    length = float(np.hypot(*(b - a)))
    n = max(2, int(math.ceil(length / spacing)) + 1)
    u = np.linspace(0.0, 1.0, n)
    return a + u[:, None] * (b - a)


def _fence_scene(spec: FenceSpec, rng: np.random.Generator) -> Scene:
    a, b = np.asarray(spec.start, float), np.asarray(spec.end, float)
    elems = _segment_samples(a, b, spec.sample_spacing)
    n_e = len(elems)
    omegas = [np.tile(odd_bounce(spec.element_amplitude), (n_e, 1))]
    pos = [elems]
    kinds = [np.full(n_e, ScatterKind.ODD, np.int8)]
    oid = [np.zeros(n_e, np.int64)]
    gt_pts = np.zeros((0, 2))
    if spec.post_spacing > 0:
        length = float(np.hypot(*(b - a)))
        n_p = int(math.floor(length / spec.post_spacing + 1e-9)) + 1
        s = np.arange(n_p) * spec.post_spacing
        posts = a + (s / length)[:, None] * (b - a)
        diag = rng.random(n_p) < spec.diagonal_post_fraction
        orient = np.where(diag, math.pi / 4, rng.uniform(-0.3, 0.3, n_p))
        phase = rng.uniform(0, 2 * math.pi, n_p)
        pom = np.array([mixed(spec.post_odd_amplitude, spec.post_even_amplitude, o, p)
                        for o, p in zip(orient, phase)]).reshape(-1, 4)
        pos.append(posts)
        omegas.append(pom)
        kinds.append(np.full(n_p, ScatterKind.MIXED, np.int8))
        oid.append(np.arange(1, n_p + 1, dtype=np.int64))
        gt_pts = posts
    n = sum(len(p) for p in pos)
    return Scene(
        np.concatenate(pos), np.concatenate(omegas), np.concatenate(kinds), np.concatenate(oid),
        np.zeros((n, 2)), np.zeros(n, bool), gt_pts, ["post"] * len(gt_pts),
        np.concatenate([a, b])[None, :],
    )


def _wall_scene(spec: WallSpec) -> Scene:
    elems = _segment_samples(spec.start, spec.end, spec.sample_spacing)
    n = len(elems)
    return Scene(
        elems, np.tile(odd_bounce(spec.element_amplitude), (n, 1)),
        np.full(n, ScatterKind.ODD, np.int8), np.zeros(n, np.int64), np.zeros((n, 2)),
        np.full(n, spec.opaque), np.zeros((0, 2)), [],
        np.concatenate([np.asarray(spec.start, float), np.asarray(spec.end, float)])[None, :],
    )


def _point_scene(points, omegas, kind, role, velocity=None) -> Scene:
    points = np.asarray(points, float).reshape(-1, 2)
    n = len(points)
    vel = np.zeros((n, 2)) if velocity is None else np.asarray(velocity, float).reshape(n, 2)
    gt = points if role else np.zeros((0, 2))
    return Scene(points, np.asarray(omegas, complex).reshape(n, 4), np.full(n, kind, np.int8),
                 np.arange(n, dtype=np.int64), vel, np.zeros(n, bool), gt,
                 [role] * len(gt) if role else [], np.zeros((0, 4)))


def generate_scene(seed: int, spec: SceneSpec) -> Scene:
    """Build a deterministic scene from fences, walls, poles, clutter and movers."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CE]))
    parts = [_fence_scene(f, rng) for f in spec.fences]
    parts += [_wall_scene(w) for w in spec.walls]
    if spec.poles:
        poles = np.asarray(spec.poles, float).reshape(-1, 2)
        parts.append(_point_scene(poles, np.tile(odd_bounce(spec.pole_amplitude), (len(poles), 1)),
                                  ScatterKind.ODD, "pole"))
    if spec.clutter_count > 0:
        x0, y0, x1, y1 = spec.clutter_area
        pts = np.column_stack([rng.uniform(x0, x1, spec.clutter_count),
                               rng.uniform(y0, y1, spec.clutter_count)])
        amp = spec.clutter_amplitude * rng.rayleigh(1.0, spec.clutter_count)
        even = rng.random(spec.clutter_count) < 0.3
        om = np.array([
            dihedral(a, rng.uniform(-math.pi / 2, math.pi / 2)) if e else odd_bounce(a)
            for a, e in zip(amp, even)
        ]).reshape(-1, 4)
        sc = _point_scene(pts, om, ScatterKind.ODD, None)
        sc.kind = np.where(even, ScatterKind.EVEN, ScatterKind.ODD).astype(np.int8)
        parts.append(sc)
    if spec.reflectors:
        rf = np.asarray(spec.reflectors, float).reshape(-1, 5)
        phase = rng.uniform(0, 2 * math.pi, len(rf))
        om = np.array([mixed(o, e, th, p) for (_, _, o, e, th), p in zip(rf, phase)]).reshape(-1, 4)
        sc = _point_scene(rf[:, :2], om, ScatterKind.MIXED, "reflector")
        sc.kind = np.where(rf[:, 3] == 0, ScatterKind.ODD,
                           np.where(rf[:, 2] == 0, ScatterKind.EVEN, ScatterKind.MIXED)).astype(np.int8)
        parts.append(sc)
    if spec.movers:
        mv = np.asarray(spec.movers, float).reshape(-1, 4)
        parts.append(_point_scene(mv[:, :2], np.tile(odd_bounce(spec.mover_amplitude), (len(mv), 1)),
                                  ScatterKind.ODD, None, velocity=mv[:, 2:]))
    return Scene.merge(parts)


# ---------------------------------------------------------------- trajectories


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    pose: Pose2
    motion: MotionState
    gt_quality: GtQuality = GtQuality.CARRIER


@dataclass(frozen=True)
class MotionPhase:
    """Interval of constant longitudinal acceleration and constant yaw rate."""

    duration: float
    accel: float = 0.0
    omega: float = 0.0


@dataclass(frozen=True)
class TrajectorySpec:
    duration: float = 10.0
    rate: float = 10.0
    v0: float = 10.0
    start: Pose2 = Pose2()
    phases: tuple[MotionPhase, ...] = ()  # empty: random phases drawn from the seed
    v_min: float = 0.0
    v_max: float = 20.0
    max_accel: float = 1.5
    max_omega: float = 0.2
    std_quality_fraction: float = 0.0


def arc_step(pose: Pose2, v: float, omega: float, dt: float) -> Pose2:
    """Exact unicycle integration of constant (v, omega) over dt."""
    th = omega * dt
    if abs(th) < 1e-9:
        dx, dy = v * dt * (1.0 - th * th / 6.0), v * dt * th / 2.0
    else:
        r = v / omega
        dx, dy = r * math.sin(th), r * (1.0 - math.cos(th))
    return pose.compose(Pose2(dx, dy, th))


def _quality_flags(rng, n, fraction):
    flags = np.zeros(n, dtype=bool)
    if fraction <= 0 or n == 0:
        return flags
    target = int(round(fraction * n))
    while flags.sum() < target:
        length = int(rng.integers(5, max(6, n // 5)))
        start = int(rng.integers(0, n))
        flags[start:start + length] = True
    return flags


def generate_trajectory(seed: int, spec: TrajectorySpec) -> list[TrajectorySample]:
    """Piecewise-constant-acceleration unicycle path sampled at ``spec.rate``.

    Motion is held constant within each sample interval, so consecutive poses
    follow exactly from the recorded (v, omega).
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A1]))
    dt = 1.0 / spec.rate
    n = int(round(spec.duration * spec.rate)) + 1
    phases = list(spec.phases)
    if not phases:
        total = 0.0
        while total < spec.duration:
            d = float(rng.uniform(1.0, 4.0))
            phases.append(MotionPhase(d, float(rng.uniform(-spec.max_accel, spec.max_accel)),
                                      float(rng.uniform(-spec.max_omega, spec.max_omega))))
            total += d
    bounds = np.cumsum([p.duration for p in phases])
    std = _quality_flags(rng, n, spec.std_quality_fraction)
    out = []
    pose, v = spec.start, float(spec.v0)
    for k in range(n):
        t = k * dt
        j = int(np.searchsorted(bounds, t + 1e-9 * dt, side="right"))
        ph = phases[min(j, len(phases) - 1)]
        omega = ph.omega if j < len(phases) else 0.0
        q = GtQuality.STD if std[k] else GtQuality.CARRIER
        out.append(TrajectorySample(t, pose, MotionState(v, omega, t), q))
        pose = arc_step(pose, v, omega, dt)
        if j < len(phases):
            v = float(np.clip(v + ph.accel * dt, spec.v_min, spec.v_max))
    return out


# ---------------------------------------------------------------- measurements


@dataclass(frozen=True)
class SensorNoise:
    """Measurement imperfections; ``SensorNoise.none()`` yields ideal data."""

    range_sigma: float = 0.05
    azimuth_sigma: float = math.radians(0.5)
    doppler_sigma: float = 0.03
    snr_db: float = 20.0
    reference_power: float = 1.0
    outlier_rate: float = 0.05
    doppler_scale_error: float = 0.0
    max_detections: int = 150
    occlusion: bool = False
    amplitude_sigma: float = 0.05

    @classmethod
    def none(cls) -> "SensorNoise":
        return cls(0.0, 0.0, 0.0, math.inf, 1.0, 0.0, 0.0, 10**9, False, 0.0)

    @property
    def noise_power(self) -> float:
        """Per-channel complex noise variance in the cube."""
        if math.isinf(self.snr_db):
            return 0.0
        return self.reference_power * 10.0 ** (-self.snr_db / 10.0)


@lru_cache(maxsize=4)
def _noise_table(nr: int, na: int) -> np.ndarray:
    """Unit complex Gaussian field (2nr+1, 2na+1, 4) shared by all frames."""
    gen = np.random.default_rng(np.random.SeedSequence([nr, na, 0x7AB1E]))
    z = gen.standard_normal((2 * nr + 1, 2 * na + 1, 8))
    t = (z[..., :4] + 1j * z[..., 4:]) / math.sqrt(2.0)
    t.setflags(write=False)
    return t


@dataclass
class DataCube:
    """Range x azimuth x Doppler grid of circular-basis scattering vectors.

    Scatterer returns are stored sparsely; complex Gaussian noise is a pure
    function of (key, bin, channel).
    """

    radar: RadarSpec
    keys: np.ndarray  # sorted linear bin indices holding deposits
    values: np.ndarray  # (K, 4) complex sums of deposited returns
    noise_power: float
    noise_key: int
    sensor_id: int = 0
    t: float = 0.0

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.radar.n_range, self.radar.n_azimuth, self.radar.n_doppler

    def linear_index(self, r, a, d) -> np.ndarray:
        _, na, nd = self.shape
        return (np.asarray(r, np.int64) * na + np.asarray(a, np.int64)) * nd + np.asarray(d, np.int64)

    def gather(self, r, a, d) -> np.ndarray:
        """Scattering vectors (..., 4) at bin indices (broadcast)."""
        lin = self.linear_index(r, a, d)
        shape = lin.shape
        lin = lin.reshape(-1)
        out = np.zeros((lin.size, 4), dtype=complex)
        if self.keys.size:
            pos = np.searchsorted(self.keys, lin)
            pos_c = np.minimum(pos, self.keys.size - 1)
            hit = self.keys[pos_c] == lin
            out[hit] = self.values[pos_c[hit]]
        if self.noise_power > 0:
            nr, na, nd = self.shape
            r = lin // (na * nd)
            a = (lin // nd) % na
            d = lin % nd
            # the frame key picks offsets into a tabulated field; each Doppler plane
            # reads it at a plane-specific shift
            table = _noise_table(nr, na)
            pr, pa = table.shape[:2]
            off = self._offsets()
            out += math.sqrt(self.noise_power) * table[(r + off[0] + d * 7919) % pr, (a + off[1] + d * 31) % pa]
        return out.reshape(shape + (4,))

    def _offsets(self) -> np.ndarray:
        return np.random.default_rng(np.random.SeedSequence([self.noise_key, 0xB05E])).integers(0, 1 << 30, 2)

    def doppler_slice(self, d_sel, n_range: int | None = None) -> np.ndarray:
        """(n_range, n_azimuth, 4) values taking Doppler bin ``d_sel[a]`` in azimuth column a.

        Same values as :meth:`gather` on those bins, computed without a search.
        """
        nr, na, nd = self.shape
        n = nr if n_range is None else min(nr, n_range)
        d_sel = np.asarray(d_sel, np.int64).reshape(na)
        out = np.zeros((n, na, 4), dtype=complex)
        if self.keys.size:
            r = self.keys // (na * nd)
            a = (self.keys // nd) % na
            d = self.keys % nd
            hit = (d == d_sel[a]) & (r < n)
            out[r[hit], a[hit]] = self.values[hit]
        if self.noise_power > 0:
            table = _noise_table(nr, na)
            pr, pa = table.shape[:2]
            off = self._offsets()
            ri = (np.arange(n)[:, None] + (off[0] + d_sel * 7919)[None, :]) % pr
            ai = ((np.arange(na) + off[1] + d_sel * 31) % pa)[None, :]
            flat = (ri * pa + ai).reshape(-1)
            noise = np.take(table.reshape(-1, 4), flat, axis=0).reshape(n, na, 4)
            out += math.sqrt(self.noise_power) * noise
        return out

    def dense(self) -> np.ndarray:
        nr, na, nd = self.shape
        r, a, d = np.meshgrid(np.arange(nr), np.arange(na), np.arange(nd), indexing="ij")
        return self.gather(r, a, d)


def frame_key(seed: int, frame: int, sensor_id: int) -> int:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(frame), int(sensor_id)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sensor_pose(sample_pose: Pose2, mount: SensorMount) -> Pose2:
    return sample_pose.compose(mount.as_pose())


def _visible(scene: Scene, spose: Pose2, radar: RadarSpec, occlusion: bool):
    local = spose.inverse_transform_points(scene.positions) if len(scene) else np.zeros((0, 2))
    rng_ = np.hypot(local[:, 0], local[:, 1])
    az = np.arctan2(local[:, 1], local[:, 0])
    vis = (rng_ > 0.5) & (rng_ < radar.max_range) & (np.abs(az) <= radar.fov_azimuth)
    if occlusion and np.any(vis & scene.opaque):
        a_bin = radar.azimuth_bin_index(az)
        first = np.full(radar.n_azimuth, np.inf)
        op = vis & scene.opaque
        np.minimum.at(first, a_bin[op], rng_[op])
        vis &= rng_ <= first[a_bin] + 0.3
    return vis, local, rng_, az


def simulate_frame(scene: Scene, sample: TrajectorySample, mount: SensorMount, radar: RadarSpec,
                   noise_seed: int, noise: SensorNoise = SensorNoise(), sensor_id: int = 0
                   ) -> tuple[DataCube, Detections]:
    """Measure ``scene`` from the sensor at ``mount`` on the vehicle state ``sample``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(noise_seed) & 0xFFFFFFFFFFFFFFFF, 0xD37]))
    spose = sensor_pose(sample.pose, mount)
    vis, local, rng_, az = _visible(scene, spose, radar, noise.occlusion)
    idx = np.flatnonzero(vis)
    r_true, az_true, loc = rng_[idx], az[idx], local[idx]

    # sensor velocity in the vehicle frame, rotated into the sensor frame
    m = sample.motion
    vs_vehicle = np.array([m.v - m.omega * mount.y, m.omega * mount.x])
    c, s = math.cos(mount.yaw), math.sin(mount.yaw)
    vs = np.array([c * vs_vehicle[0] + s * vs_vehicle[1], -s * vs_vehicle[0] + c * vs_vehicle[1]])
    # scatterer velocity (world) rotated into the sensor frame
    cw, sw = math.cos(spose.yaw), math.sin(spose.yaw)
    vel = scene.velocity[idx]
    vt = np.column_stack([cw * vel[:, 0] + sw * vel[:, 1], -sw * vel[:, 0] + cw * vel[:, 1]])
    u = loc / np.maximum(r_true, 1e-12)[:, None]
    vr_true = np.sum((vt - vs[None, :]) * u, axis=1) * (1.0 + noise.doppler_scale_error)

    omega = scene.omega[idx] * np.exp(1j * (4 * math.pi / WAVELENGTH) * r_true)[:, None]

    # cube deposits: nearest range/azimuth bin, power split over the two
    # neighbouring Doppler bins so that the total equals the scatterer RCS
    vf = fold_velocity(vr_true, radar.v_unamb)
    pos = radar.doppler_position(vf)
    d0 = np.floor(pos).astype(np.int64)
    w1 = pos - d0
    rb = radar.range_bin(r_true)
    ab = radar.azimuth_bin_index(az_true)
    ok = rb < radar.n_range
    nd = radar.n_doppler
    lin0 = (rb * radar.n_azimuth + ab) * nd
    keys = np.concatenate([lin0 + np.mod(d0, nd), lin0 + np.mod(d0 + 1, nd)])[np.tile(ok, 2)]
    vals = np.concatenate([np.sqrt(1.0 - w1)[:, None] * omega, np.sqrt(w1)[:, None] * omega])[np.tile(ok, 2)]
    uk, inv = np.unique(keys, return_inverse=True)
    acc = np.zeros((uk.size, 4), dtype=complex)
    np.add.at(acc, inv.reshape(-1), vals)
    cube = DataCube(radar, uk, acc, noise.noise_power,
                    frame_key(noise_seed, 0, sensor_id), sensor_id, sample.t)

    # detection list: one per visible scatterer, capped
    n = idx.size
    sel = np.arange(n)
    if n > noise.max_detections:
        sel = np.sort(rng.choice(n, noise.max_detections, replace=False))
    k = sel.size
    d_r = r_true[sel] + noise.range_sigma * rng.standard_normal(k)
    d_a = az_true[sel] + noise.azimuth_sigma * rng.standard_normal(k)
    d_v = vr_true[sel] + noise.doppler_sigma * rng.standard_normal(k)
    out = rng.random(k) < noise.outlier_rate
    d_v = np.where(out, rng.uniform(-3 * radar.v_unamb, 3 * radar.v_unamb, k), d_v)
    d_v = fold_velocity(d_v, radar.v_unamb)
    amp = omega[sel]
    if noise.amplitude_sigma > 0 and k:
        amp = amp + noise.amplitude_sigma * (rng.standard_normal((k, 4)) + 1j * rng.standard_normal((k, 4))) / math.sqrt(2)
    dets = Detections(np.full(k, sensor_id), np.clip(d_r, 0.0, radar.max_range),
                      np.clip(d_a, -radar.fov_azimuth, radar.fov_azimuth), np.atleast_1d(d_v), amp,
                      np.full(k, sample.t), out)
    return cube, dets
