"""Run configuration: a flat ``key = value`` text file with ``#`` comments."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .egomotion import EgoParams
from .landmarks import PcfarParams, RidgeParams
from .matching import MatchParams
from .polarimetry import POL_CONFIGS
from .posegraph import NoiseConfig
from .sensors import RadarSpec
from .simulator import SensorNoise


class ConfigError(ValueError):
    def __init__(self, msg: str, line_no: int | None = None):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {msg}" if line_no is not None else msg)


@dataclass(frozen=True)
class RunConfig:
    # scenario and drives
    seed: int = 0
    scenario: str = "mixed"  # mixed | ablation | fence
    route_length: float = 500.0  # m; 0 keeps the scenario default
    n_map_drives: int = 3
    leave_out: int = -1  # drive index localized against the other drives' map; -1 = last
    speed: float = 10.0  # m/s
    pol: str = "full"
    # radar
    max_range: float = 40.0
    range_resolution: float = 0.075
    fov_azimuth_deg: float = 60.0
    azimuth_resolution_deg: float = 3.0
    azimuth_bin_deg: float = 0.75
    v_unamb: float = 5.0
    v_resolution: float = 0.15
    update_rate: float = 10.0
    # measurement noise
    snr_db: float = 20.0
    range_sigma: float = 0.05
    azimuth_sigma_deg: float = 0.5
    doppler_sigma: float = 0.03
    outlier_rate: float = 0.05
    doppler_scale_error: float = 0.0
    max_detections: int = 150
    noiseless: bool = False
    # ego-motion
    ego_inlier_threshold: float = 0.1
    ego_iterations: int = 200
    ego_augment: bool = True
    ego_v_max: float = 20.0
    # gridmap
    cell_size: float = 0.15
    window_frames: int = 30
    power_floor_factor: float = 3.0
    # point detector
    pcfar_guard: int = 2
    pcfar_width: int = 3
    pcfar_threshold: float = 1.8
    pcfar_min_area: int = 2
    pcfar_min_samples: int = 5
    # line detector
    ridge_sigma: float = 1.0
    ridge_threshold_factor: float = 3.0
    hough_threshold: int = 10
    line_min_length: float = 1.0
    line_max_gap: float = 0.5
    ridge_prior_weight: float = 5.0
    ridge_min_power_factor: float = 1.0  # times the summed channel noise power
    # map construction
    consensus_d: float = 0.3
    consensus_n: int = 2
    line_d_ch: float = 0.09
    line_d_prj: float = 1.5
    rdp_tol: float = 0.2
    trim_tol: float = 1.0
    # matching and smoothing
    match_window_s: float = 5.0
    cluster_d: float = 0.5
    c_unmatched: float = 2.0
    point_gate: float = 1.0
    line_gate_ch: float = 0.18
    line_gate_prj: float = 3.0
    candidate_radius: float = 3.0
    horizon_frames: int = 30
    min_count: int = 3
    # factor graph
    sigma_lp: float = 0.1
    sigma_ll: float = 0.1
    sigma_xx_t: float = 0.05
    sigma_xx_phi: float = 0.01
    sigma_xlp_r: float = 0.5
    sigma_xlp_phi: float = 0.03
    fallback_t: float = 0.5
    fallback_phi: float = 0.05
    window_poses: int = 100
    line_every: int = 10
    line_end_gate: float = 0.5  # m an observed endpoint may project beyond its map segment
    min_point_matches: int = 5
    min_constraint: int = 2
    lm_iterations: int = 50
    extract_every: int = 1
    extract_ahead: float = 30.0  # m; localization extracts within this box around the vehicle, 0 = whole window
    extract_behind: float = 5.0

    def __post_init__(self):
        if self.pol not in POL_CONFIGS:
            raise ConfigError(f"unknown polarization configuration {self.pol!r}")
        if self.scenario not in ("mixed", "ablation", "fence"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")

    # -- derived parameter objects ------------------------------------
    def radar(self) -> RadarSpec:
        return RadarSpec(self.max_range, self.range_resolution, math.radians(self.fov_azimuth_deg),
                         math.radians(self.azimuth_resolution_deg), self.v_unamb, self.v_resolution,
                         self.update_rate, azimuth_bin=math.radians(self.azimuth_bin_deg))

    def sensor_noise(self) -> SensorNoise:
        if self.noiseless:
            return SensorNoise.none()
        return SensorNoise(self.range_sigma, math.radians(self.azimuth_sigma_deg), self.doppler_sigma,
                           self.snr_db, 1.0, self.outlier_rate, self.doppler_scale_error, self.max_detections)

    def ego_params(self) -> EgoParams:
        return EgoParams(inlier_threshold=self.ego_inlier_threshold, iterations=self.ego_iterations,
                         augment=self.ego_augment, v_max=self.ego_v_max, v_unamb=self.v_unamb)

    def pcfar_params(self) -> PcfarParams:
        noise = self.sensor_noise().noise_power
        return PcfarParams(self.pcfar_guard, self.pcfar_width, self.pcfar_threshold, self.pcfar_min_area,
                           self.pcfar_min_samples, noise_power=noise if noise > 0 else 1e-6)

    def ridge_params(self) -> RidgeParams:
        return RidgeParams(self.ridge_sigma, self.ridge_threshold_factor, self.hough_threshold,
                           self.line_min_length, self.line_max_gap, seed=self.seed,
                           noise_power=self.sensor_noise().noise_power, prior_weight=self.ridge_prior_weight,
                           min_power_factor=self.ridge_min_power_factor)

    def match_params(self) -> MatchParams:
        return MatchParams(self.match_window_s, self.cluster_d, c_unmatched=self.c_unmatched,
                           point_gate=self.point_gate, line_gate_ch=self.line_gate_ch,
                           line_gate_prj=self.line_gate_prj, candidate_radius=self.candidate_radius,
                           horizon_frames=self.horizon_frames, min_count=self.min_count)

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(self.sigma_lp, self.sigma_ll, self.sigma_xx_t, self.sigma_xx_phi,
                           self.sigma_xlp_r, self.sigma_xlp_phi, self.fallback_t, self.fallback_phi)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key: str, raw: str, line_no: int | None):
    default = getattr(RunConfig(), key)
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}", line_no) from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; unknown keys and malformed lines are rejected."""
    values = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", no)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", no)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", no)
        values[key] = _convert(key, raw, no)
    return replace(base or RunConfig(), **values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    unknown = set(kw) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    return replace(cfg, **kw)


def format_config(cfg: RunConfig) -> str:
    """Every key with its value, in declaration order; round-trips through parse_config."""
    out = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        out.append(f"{name} = {repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(out) + "\n"
