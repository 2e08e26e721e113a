"""World-fixed covariance gridmap fed from the static part of the radar cube."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .egomotion import predict_radial_velocity
from .geometry import Pose2
from .polarimetry import CIRCULAR, PolarizationBasis, PolCovariance, n_upper, outer_upper, upper_indices
from .sensors import MotionState, SensorMount, fold_velocity
from .simulator import DataCube


class GridModeError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float] = (0.0, 0.0)
    cell_size: float = 0.15
    width: int = 100
    height: int = 100

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid must have at least one cell")

    @classmethod
    def covering(cls, xmin, ymin, xmax, ymax, cell_size: float) -> "GridSpec":
        w = int(math.ceil((xmax - xmin) / cell_size)) + 1
        h = int(math.ceil((ymax - ymin) / cell_size)) + 1
        return cls((float(xmin), float(ymin)), float(cell_size), w, h)

    def cell_of(self, xy) -> tuple[np.ndarray, np.ndarray]:
        xy = np.asarray(xy, dtype=float)
        ix = np.floor((xy[..., 0] - self.origin[0]) / self.cell_size).astype(np.int64)
        iy = np.floor((xy[..., 1] - self.origin[1]) / self.cell_size).astype(np.int64)
        return ix, iy

    def center_of(self, ix, iy) -> np.ndarray:
        ix = np.asarray(ix, dtype=float)
        iy = np.asarray(iy, dtype=float)
        return np.stack([self.origin[0] + (ix + 0.5) * self.cell_size,
                         self.origin[1] + (iy + 0.5) * self.cell_size], axis=-1)

    def inside(self, ix, iy) -> np.ndarray:
        return (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)


@dataclass
class PolarStaticImage:
    ranges: np.ndarray  # (n_r,)
    azimuths: np.ndarray  # (n_a,)
    values: np.ndarray  # (n_r, n_a, q) complex
    sensor_id: int = 0
    t: float = 0.0
    basis: PolarizationBasis = CIRCULAR


def extract_static_surface(cube: DataCube, motion: MotionState, mount: SensorMount,
                           max_range: float | None = None) -> PolarStaticImage:
    """Pick, per azimuth, the Doppler bin where static reflectors must appear."""
    radar = cube.radar
    az = radar.azimuth_centers
    v_static = fold_velocity(predict_radial_velocity(mount, motion, az), radar.v_unamb)
    d = radar.doppler_bin(v_static)
    ranges = radar.range_centers
    nr = ranges.size if max_range is None else int(min(ranges.size, math.ceil(max_range / radar.range_resolution)))
    vals = cube.doppler_slice(d, nr)
    return PolarStaticImage(ranges[:nr], az, vals, cube.sensor_id, cube.t, CIRCULAR)


class CovarianceGrid:
    """Sparse accumulator of outer-product sums and sample counts per cell.

    ``window_frames=None`` keeps the full history; otherwise each frame's
    contribution is remembered so it can be subtracted exactly once it falls
    out of the window.
    """

    def __init__(self, spec: GridSpec, basis: PolarizationBasis = CIRCULAR, window_frames: int | None = None):
        self.spec = spec
        self.basis = basis
        self.q = basis.q
        self.m = n_upper(self.q)
        self.window_frames = window_frames
        self._keys = np.zeros(0, dtype=np.int64)
        self._sums = np.zeros((0, self.m), dtype=complex)
        self._counts = np.zeros(0, dtype=np.int64)
        self._pending: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._frames: deque = deque()  # (frame, keys, sums, counts) in window mode

    @property
    def sliding(self) -> bool:
        return self.window_frames is not None

    # -- storage -------------------------------------------------------
    def _key(self, ix, iy):
        return np.asarray(ix, np.int64) * self.spec.height + np.asarray(iy, np.int64)

    def _unkey(self, keys):
        return keys // self.spec.height, keys % self.spec.height

    @staticmethod
    def _group(keys, sums, counts):
        uk, inv = np.unique(keys, return_inverse=True)
        inv = inv.reshape(-1)
        m = sums.shape[1]
        out = np.empty((uk.size, m), dtype=complex)
        for j in range(m):
            out[:, j] = np.bincount(inv, sums[:, j].real, uk.size) + 1j * np.bincount(inv, sums[:, j].imag, uk.size)
        cnt = np.bincount(inv, counts, uk.size).astype(np.int64)
        return uk, out, cnt

    def _consolidate(self):
        if not self._pending:
            return
        keys = np.concatenate([self._keys] + [p[0] for p in self._pending])
        sums = np.concatenate([self._sums] + [p[1] for p in self._pending])
        counts = np.concatenate([self._counts] + [p[2] for p in self._pending])
        self._pending.clear()
        k, s, c = self._group(keys, sums, counts)
        keep = c > 0
        self._keys, self._sums, self._counts = k[keep], s[keep], c[keep]

    def add_samples(self, ix, iy, omegas, frame: int | None = None) -> int:
        """Accumulate scattering vectors into cells; returns the number of cells touched."""
        ix = np.asarray(ix, np.int64).reshape(-1)
        iy = np.asarray(iy, np.int64).reshape(-1)
        omegas = np.asarray(omegas, dtype=complex).reshape(ix.size, -1)
        if omegas.shape[1] != self.q:
            raise ValueError("scattering vectors do not match the grid basis")
        ok = self.spec.inside(ix, iy)
        if not np.any(ok):
            return 0
        keys, sums, counts = self._group(self._key(ix[ok], iy[ok]), outer_upper(omegas[ok]),
                                         np.ones(int(ok.sum()), np.int64))
        self._pending.append((keys, sums, counts))
        if self.sliding:
            if frame is None:
                raise GridModeError("sliding-window grids need a frame number")
            if self._frames and self._frames[-1][0] == frame:
                f, k0, s0, c0 = self._frames.pop()
                keys2, sums2, counts2 = self._group(np.concatenate([k0, keys]), np.concatenate([s0, sums]),
                                                    np.concatenate([c0, counts]))
                self._frames.append((frame, keys2, sums2, counts2))
            else:
                self._frames.append((frame, keys, sums, counts))
        if sum(p[0].size for p in self._pending) > max(200000, 2 * self._keys.size):
            self._consolidate()
        return int(keys.size)

    def evict_window(self, current_frame: int) -> int:
        """Drop contributions older than the window; returns evicted frame count."""
        if not self.sliding:
            raise GridModeError("eviction requires a sliding-window grid")
        n = 0
        while self._frames and self._frames[0][0] <= current_frame - self.window_frames:
            _, k, s, c = self._frames.popleft()
            self._pending.append((k, -s, -c))
            n += 1
        if n:
            self._consolidate()
        return n

    def frames_held(self) -> list[int]:
        return [f[0] for f in self._frames]

    # -- queries --------------------------------------------------------
    def cells(self):
        """(ix, iy, sums, counts) of all non-empty cells, sorted by key."""
        self._consolidate()
        ix, iy = self._unkey(self._keys)
        return ix, iy, self._sums.copy(), self._counts.copy()

    def __len__(self) -> int:
        self._consolidate()
        return int(self._keys.size)

    def covariance(self, ix: int, iy: int) -> PolCovariance:
        self._consolidate()
        key = int(self._key(ix, iy))
        pos = int(np.searchsorted(self._keys, key))
        if pos < self._keys.size and self._keys[pos] == key:
            n = int(self._counts[pos])
            return PolCovariance(self.basis, self._sums[pos] / n, n)
        return PolCovariance(self.basis)

    def region(self, ix0: int, iy0: int, nx: int, ny: int):
        """Dense (nx, ny, m) sums and (nx, ny) counts of a rectangular window."""
        self._consolidate()
        sums = np.zeros((nx, ny, self.m), dtype=complex)
        counts = np.zeros((nx, ny), dtype=np.int64)
        ix, iy = self._unkey(self._keys)
        sel = (ix >= ix0) & (ix < ix0 + nx) & (iy >= iy0) & (iy < iy0 + ny)
        sums[ix[sel] - ix0, iy[sel] - iy0] = self._sums[sel]
        counts[ix[sel] - ix0, iy[sel] - iy0] = self._counts[sel]
        return sums, counts

    def occupied_bounds(self):
        """Inclusive index bounds (ix_min, iy_min, ix_max, iy_max) or None when empty."""
        self._consolidate()
        if not self._keys.size:
            return None
        ix, iy = self._unkey(self._keys)
        return int(ix.min()), int(iy.min()), int(ix.max()), int(iy.max())


def scatter_to_grid(grid: CovarianceGrid, image: PolarStaticImage, pose: Pose2, mount: SensorMount,
                    power_floor: float, frame: int | None = None) -> int:
    """Nearest-cell accumulation of polar bins whose channel power exceeds the floor."""
    vals = image.values
    pw = np.einsum("...k,...k->...", vals.real, vals.real) + np.einsum("...k,...k->...", vals.imag, vals.imag)
    ri, ai = np.nonzero(pw > power_floor)
    if ri.size == 0:
        return 0
    r = image.ranges[ri]
    a = image.azimuths[ai]
    local = np.column_stack([r * np.cos(a), r * np.sin(a)])
    world = pose.compose(mount.as_pose()).transform_points(local)
    ix, iy = grid.spec.cell_of(world)
    return grid.add_samples(ix, iy, vals[ri, ai], frame)


def power_map(grid: CovarianceGrid) -> np.ndarray:
    """Dense (width, height) trace of the per-cell mean covariance."""
    out = np.zeros((grid.spec.width, grid.spec.height))
    ix, iy, sums, counts = grid.cells()
    out[ix, iy] = trace_of_upper(sums, grid.q) / np.maximum(counts, 1)
    return out


def trace_of_upper(upper, q: int) -> np.ndarray:
    r, c = upper_indices(q)
    return np.sum(np.asarray(upper)[..., r == c].real, axis=-1)


def default_power_floor(noise_power: float, q: int = 4, factor: float = 3.0) -> float:
    return factor * q * noise_power
