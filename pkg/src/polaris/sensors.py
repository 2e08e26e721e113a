"""Radar parameters, mounting poses, motion states and detection containers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polarimetry import CIRCULAR, PolarizationBasis


@dataclass(frozen=True)
class RadarSpec:
    """Sensor performance figures; defaults are those of the 77 GHz polarimetric units."""

    max_range: float = 80.0
    range_resolution: float = 0.075
    fov_azimuth: float = math.radians(60.0)
    azimuth_resolution: float = math.radians(3.0)
    v_unamb: float = 5.0
    v_resolution: float = 0.15
    update_rate: float = 10.0
    basis: PolarizationBasis = CIRCULAR
    # processing grid of the cube: azimuth bins are finer than the beamwidth
    azimuth_bin: float = math.radians(0.75)

    def __post_init__(self):
        for name in ("max_range", "range_resolution", "fov_azimuth", "azimuth_resolution",
                     "v_unamb", "v_resolution", "update_rate", "azimuth_bin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.fov_azimuth > math.pi:
            raise ValueError("fov_azimuth must not exceed pi")

    @property
    def n_range(self) -> int:
        return int(math.ceil(self.max_range / self.range_resolution))

    @property
    def n_azimuth(self) -> int:
        return max(1, int(round(2.0 * self.fov_azimuth / self.azimuth_bin)))

    @property
    def n_doppler(self) -> int:
        n = int(round(2.0 * self.v_unamb / self.v_resolution))
        return n if n % 2 == 1 else n + 1

    @property
    def range_centers(self) -> np.ndarray:
        return (np.arange(self.n_range) + 0.5) * self.range_resolution

    @property
    def azimuth_centers(self) -> np.ndarray:
        w = 2.0 * self.fov_azimuth / self.n_azimuth
        return -self.fov_azimuth + (np.arange(self.n_azimuth) + 0.5) * w

    @property
    def doppler_centers(self) -> np.ndarray:
        w = 2.0 * self.v_unamb / self.n_doppler
        return -self.v_unamb + (np.arange(self.n_doppler) + 0.5) * w

    def range_bin(self, r):
        return np.floor(np.asarray(r) / self.range_resolution).astype(np.int64)

    def azimuth_bin_index(self, phi):
        w = 2.0 * self.fov_azimuth / self.n_azimuth
        idx = np.floor((np.asarray(phi) + self.fov_azimuth) / w).astype(np.int64)
        return np.clip(idx, 0, self.n_azimuth - 1)

    def doppler_position(self, v_folded):
        """Continuous Doppler bin coordinate (bin k centered at k)."""
        w = 2.0 * self.v_unamb / self.n_doppler
        return (np.asarray(v_folded) + self.v_unamb) / w - 0.5

    def doppler_bin(self, v_folded):
        """Nearest Doppler bin (wrapping, the spectrum is periodic)."""
        return np.mod(np.rint(self.doppler_position(v_folded)).astype(np.int64), self.n_doppler)


def fold_velocity(v, v_unamb: float):
    """Alias a radial velocity into (-v_unamb, v_unamb]."""
    v = np.asarray(v, dtype=float)
    out = v - 2.0 * v_unamb * np.ceil((v - v_unamb) / (2.0 * v_unamb))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SensorMount:
    """Sensor pose in the vehicle frame (rear-axle origin) and trigger delay."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    time_offset: float = 0.0

    def as_pose(self):
        from .geometry import Pose2

        return Pose2(self.x, self.y, self.yaw)


DEFAULT_MOUNTS = (
    SensorMount(3.7, 0.0, 0.0),
    SensorMount(3.5, 0.8, math.radians(45.0)),
    SensorMount(3.5, -0.8, math.radians(-45.0)),
)


@dataclass(frozen=True)
class MotionState:
    """Forward speed and yaw rate at the rear axle."""

    v: float = 0.0
    omega: float = 0.0
    t: float = 0.0
    degraded: bool = False


@dataclass
class Detections:
    """Struct-of-arrays detection list (one row per detection)."""

    sensor_id: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    range: np.ndarray = field(default_factory=lambda: np.zeros(0))
    azimuth: np.ndarray = field(default_factory=lambda: np.zeros(0))
    vr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    omega: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=complex))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # ground-truth bookkeeping from the simulator (not used by estimators)
    is_outlier: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        self.sensor_id = np.asarray(self.sensor_id, dtype=np.int64).reshape(-1)
        n = self.sensor_id.shape[0]
        self.range = np.asarray(self.range, dtype=float).reshape(n)
        self.azimuth = np.asarray(self.azimuth, dtype=float).reshape(n)
        self.vr = np.asarray(self.vr, dtype=float).reshape(n)
        self.omega = np.asarray(self.omega, dtype=complex).reshape(n, -1) if n else np.zeros((0, 4), complex)
        self.t = np.zeros(n) if np.asarray(self.t).size == 0 else np.asarray(self.t, dtype=float).reshape(n)
        if np.asarray(self.is_outlier).size == 0 and n:
            self.is_outlier = np.zeros(n, dtype=bool)
        self.is_outlier = np.asarray(self.is_outlier, dtype=bool).reshape(n)

    def __len__(self) -> int:
        return int(self.sensor_id.shape[0])

    def subset(self, idx) -> "Detections":
        return Detections(self.sensor_id[idx], self.range[idx], self.azimuth[idx], self.vr[idx],
                          self.omega[idx], self.t[idx], self.is_outlier[idx])

    @staticmethod
    def concat(parts) -> "Detections":
        parts = [p for p in parts if len(p)]
        if not parts:
            return Detections()
        q = max(p.omega.shape[1] for p in parts)
        return Detections(
            np.concatenate([p.sensor_id for p in parts]),
            np.concatenate([p.range for p in parts]),
            np.concatenate([p.azimuth for p in parts]),
            np.concatenate([p.vr for p in parts]),
            np.concatenate([np.pad(p.omega, ((0, 0), (0, q - p.omega.shape[1]))) for p in parts]),
            np.concatenate([p.t for p in parts]),
            np.concatenate([p.is_outlier for p in parts]),
        )

    def with_vr(self, vr) -> "Detections":
        return Detections(self.sensor_id, self.range, self.azimuth, vr, self.omega, self.t, self.is_outlier)
