"""Landmark candidates from covariance gridmaps.

Point candidates come from a Wishart-distance CFAR test of every cell against
its annular neighbourhood. Line candidates come from ridge detection, thinning
and a probabilistic Hough transform on the power map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize
from skimage.transform import probabilistic_hough_line

from .gridmap import CovarianceGrid, GridSpec, trace_of_upper
from .polarimetry import (PolarizationBasis, expand_upper, n_upper, reduce_upper, wishart_distance_matrices)


@dataclass(frozen=True)
class PointCandidate:
    x: float
    y: float
    score: float
    support: int


@dataclass(frozen=True)
class LineCandidate:
    xs: float
    ys: float
    xe: float
    ye: float
    support: int

    @property
    def segment(self) -> np.ndarray:
        return np.array([[self.xs, self.ys], [self.xe, self.ye]])

    @property
    def length(self) -> float:
        return math.hypot(self.xe - self.xs, self.ye - self.ys)


@dataclass(frozen=True)
class PcfarParams:
    guard_radius: int = 2
    train_width: int = 3
    threshold: float = 1.8
    min_area: int = 2
    min_samples: int = 5
    noise_power: float = 0.01  # per-channel thermal noise, acts as background prior
    prior_weight: float = 1.0  # pseudo-samples of noise covariance added to the annulus

    def __post_init__(self):
        if self.guard_radius < 0 or self.train_width < 1:
            raise ValueError("train annulus must be outside the guard region")
        if not self.threshold > 1:
            raise ValueError("threshold must exceed 1")

    @property
    def train_radius(self) -> int:
        return self.guard_radius + self.train_width


@dataclass(frozen=True)
class RidgeParams:
    sigma: float = 1.0  # cells
    threshold_factor: float = 3.0
    hough_threshold: int = 10
    min_length: float = 1.0  # m
    max_gap: float = 0.5  # m
    theta_step_deg: float = 1.0
    seed: int = 0
    median_size: int = 3
    noise_power: float = 0.0  # per-channel noise variance removed from the power image
    prior_weight: float = 5.0  # pseudo-samples pulling sparsely observed cells toward zero
    min_power_factor: float = 0.0  # ridge cells must exceed this many channel-noise traces


def _integral(x: np.ndarray) -> np.ndarray:
    """Summed-area table with a leading zero row and column."""
    out = np.zeros((x.shape[0] + 1, x.shape[1] + 1) + x.shape[2:], dtype=x.dtype)
    out[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    return out


def _window_sum_at(integral: np.ndarray, ci, cj, radius: int) -> np.ndarray:
    """Sums over the (2r+1)^2 squares centred on (ci, cj), clipped to the window."""
    nx, ny = integral.shape[0] - 1, integral.shape[1] - 1
    i0, i1 = np.clip(ci - radius, 0, nx), np.clip(ci + radius + 1, 0, nx)
    j0, j1 = np.clip(cj - radius, 0, ny), np.clip(cj + radius + 1, 0, ny)
    return integral[i1, j1] - integral[i0, j1] - integral[i1, j0] + integral[i0, j0]


def pcfar_statistic(sums: np.ndarray, counts: np.ndarray, params: PcfarParams) -> np.ndarray:
    """Calibrated Wishart distance per cell of a dense window (nan where not tested).

    The raw distance d(C, S) is shifted by d(S, S) - 1 so a cell that looks
    like its surroundings scores 1 regardless of absolute power. The excess
    over 1 is then scaled by sqrt(q): for a background cell its spread shrinks
    like 1/sqrt(q), so one threshold keeps the same false-alarm level for every
    channel count.
    """
    nx, ny, m = sums.shape
    q = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    stat = np.full((nx, ny), np.nan)
    cut = counts >= params.min_samples
    if not np.any(cut):
        return stat
    g, t = params.guard_radius, params.train_radius
    ci = np.nonzero(cut)
    isum, icnt = _integral(sums), _integral(counts.astype(np.int64))
    s_ann = _window_sum_at(isum, *ci, t) - _window_sum_at(isum, *ci, g)
    n_ann = _window_sum_at(icnt, *ci, t) - _window_sum_at(icnt, *ci, g)
    c = expand_upper(sums[ci] / counts[ci][:, None])
    kappa = params.prior_weight
    sig = expand_upper(s_ann) + (kappa * params.noise_power) * np.eye(q)[None]
    den = n_ann + kappa
    if kappa <= 0:
        # without a prior, an empty annulus falls back to the noise covariance
        empty = den <= 0
        sig[empty] = params.noise_power * np.eye(q)
        den = np.where(empty, 1.0, den)
    sig = sig / den[:, None, None]
    d_cs = wishart_distance_matrices(c, sig)
    d_ss = wishart_distance_matrices(sig, sig)
    stat[ci] = 1.0 + math.sqrt(q) * (d_cs - d_ss)
    return stat


def _components(stat, params: PcfarParams, ix0: int, iy0: int, spec: GridSpec):
    mark = np.nan_to_num(stat, nan=0.0) > params.threshold
    lab, n = ndimage.label(mark, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    w = np.where(mark, stat, 0.0)
    area = ndimage.sum_labels(mark, lab, idx)
    wsum = ndimage.sum_labels(w, lab, idx)
    gx, gy = np.indices(mark.shape)
    cx = ndimage.sum_labels(w * gx, lab, idx) / wsum
    cy = ndimage.sum_labels(w * gy, lab, idx) / wsum
    peak = ndimage.maximum(w, lab, idx)
    out = []
    for k in range(n):
        if area[k] >= params.min_area:
            xy = spec.center_of(ix0 + cx[k], iy0 + cy[k])
            out.append((float(xy[0]), float(xy[1]), float(peak[k]), int(area[k]), ix0 + cx[k], iy0 + cy[k]))
    return out


def _tiles(bounds, tile: int, margin: int):
    ix_min, iy_min, ix_max, iy_max = bounds
    for x0 in range(ix_min, ix_max + 1, tile):
        for y0 in range(iy_min, iy_max + 1, tile):
            core = (x0, y0, min(x0 + tile, ix_max + 1), min(y0 + tile, iy_max + 1))
            yield core, (core[0] - margin, core[1] - margin, core[2] + margin, core[3] + margin)


def reduced_window(grid: CovarianceGrid, basis: PolarizationBasis | None, ix0, iy0, nx, ny):
    sums, counts = grid.region(ix0, iy0, nx, ny)
    if basis is not None and basis != grid.basis:
        occ = counts > 0
        out = np.zeros(counts.shape + (n_upper(basis.q),), dtype=complex)
        out[occ] = reduce_upper(sums[occ], grid.basis, basis)
        sums = out
    return sums, counts


def pcfar_detect(grid: CovarianceGrid, params: PcfarParams = PcfarParams(),
                 basis: PolarizationBasis | None = None, bounds=None, tile: int = 400) -> list[PointCandidate]:
    """Point candidates at score-weighted centroids of connected detections.

    ``basis`` selects the polarization configuration derived from the stored
    data; ``bounds`` (inclusive cell index box) limits the search area.
    """
    occ = grid.occupied_bounds()
    if occ is None:
        return []
    if bounds is not None:
        occ = (max(occ[0], bounds[0]), max(occ[1], bounds[1]), min(occ[2], bounds[2]), min(occ[3], bounds[3]))
        if occ[0] > occ[2] or occ[1] > occ[3]:
            return []
    margin = params.train_radius + 8
    found = []
    for core, ext in _tiles(occ, tile, margin):
        nx, ny = ext[2] - ext[0], ext[3] - ext[1]
        sums, counts = reduced_window(grid, basis, ext[0], ext[1], nx, ny)
        stat = pcfar_statistic(sums, counts, params)
        for x, y, sc, area, fx, fy in _components(stat, params, ext[0], ext[1], grid.spec):
            if core[0] <= fx + 0.5 < core[2] and core[1] <= fy + 0.5 < core[3]:
                found.append(PointCandidate(x, y, sc, area))
    found.sort(key=lambda p: (p.x, p.y))
    return found


# ---------------------------------------------------------------- lines


def hybrid_median(image, size: int = 3) -> np.ndarray:
    """Median of (plus-median, cross-median, centre): removes specks, keeps 1-cell lines and corners."""
    image = np.asarray(image, float)
    k = np.arange(size) - size // 2
    plus = (k[:, None] == 0) | (k[None, :] == 0)
    cross = np.abs(k[:, None]) == np.abs(k[None, :])
    a = ndimage.median_filter(image, footprint=plus, mode="constant")
    b = ndimage.median_filter(image, footprint=cross, mode="constant")
    return np.maximum(np.minimum(a, b), np.minimum(np.maximum(a, b), image))


def _smoothed(power, params: RidgeParams) -> np.ndarray:
    return hybrid_median(power, params.median_size)


def ridgeness(power: np.ndarray, params: RidgeParams = RidgeParams()) -> np.ndarray:
    """max(0, -lambda_min) of the Gaussian-scale Hessian of the hybrid-median-filtered map."""
    return _ridgeness_smoothed(_smoothed(power, params), params)


def _ridgeness_smoothed(p: np.ndarray, params: RidgeParams) -> np.ndarray:
    hxx = ndimage.gaussian_filter(p, params.sigma, order=(2, 0), mode="constant")
    hyy = ndimage.gaussian_filter(p, params.sigma, order=(0, 2), mode="constant")
    hxy = ndimage.gaussian_filter(p, params.sigma, order=(1, 1), mode="constant")
    lam_min = 0.5 * (hxx + hyy) - np.sqrt(0.25 * (hxx - hyy) ** 2 + hxy ** 2)
    return np.maximum(0.0, -lam_min)


def ridge_mask(power: np.ndarray, params: RidgeParams = RidgeParams(), min_power: float = 0.0) -> np.ndarray:
    p = _smoothed(power, params)
    r = _ridgeness_smoothed(p, params)
    nz = r[r > 0]
    if nz.size == 0:
        return np.zeros(r.shape, dtype=bool)
    mask = r > params.threshold_factor * float(np.median(nz))
    if min_power > 0:
        mask &= p > min_power
    return mask


def _segment_support(seg, pix, tol=1.5):
    if pix.shape[0] == 0:
        return 0
    a, b = seg
    d = b - a
    L2 = float(d @ d)
    u = np.clip(((pix - a) @ d) / L2, 0.0, 1.0)
    dist = np.hypot(*(pix - (a + u[:, None] * d)).T)
    return int(np.sum(dist <= tol))


def ridge_lines(power: np.ndarray, params: RidgeParams = RidgeParams(), origin=(0.0, 0.0),
                cell_size: float = 1.0, min_power: float = 0.0) -> list[LineCandidate]:
    """Line segments (world meters) along ridges of a dense (nx, ny) power raster."""
    power = np.asarray(power, float)
    if not np.any(power > 0):
        return []
    mask = ridge_mask(power, params, min_power)
    if not np.any(mask):
        return []
    skel = skeletonize(mask)
    min_len = max(2, int(round(params.min_length / cell_size)))
    gap = max(1, int(round(params.max_gap / cell_size)))
    theta = np.deg2rad(np.arange(-90.0, 90.0, params.theta_step_deg))
    # image rows are the first (x) index, columns the second (y) index
    lines = probabilistic_hough_line(skel, threshold=params.hough_threshold, line_length=min_len,
                                     line_gap=gap, theta=theta, rng=params.seed)
    pix = np.argwhere(skel).astype(float)
    segs = []
    for (c0, r0), (c1, r1) in lines:
        seg = np.array([[r0, c0], [r1, c1]], dtype=float)
        if np.hypot(*(seg[1] - seg[0])) * cell_size < params.min_length:
            continue
        segs.append(seg)
    segs = merge_collinear(segs, lateral_tol=1.5, gap_tol=gap, angle_tol=math.radians(5.0))
    out = []
    for seg in segs:
        sup = _segment_support(seg, pix)
        w = (seg + 0.5) * cell_size + np.asarray(origin, float)
        if seg[0].tolist() > seg[1].tolist():
            w = w[::-1]
        out.append(LineCandidate(float(w[0, 0]), float(w[0, 1]), float(w[1, 0]), float(w[1, 1]), sup))
    out.sort(key=lambda l: (l.xs, l.ys, l.xe, l.ye))
    return out


def merge_collinear(segs, lateral_tol: float, gap_tol: float, angle_tol: float):
    """Greedily fuse nearly collinear segments that overlap or nearly touch."""
    segs = [np.asarray(s, float) for s in segs]
    changed = True
    while changed and len(segs) > 1:
        changed = False
        segs.sort(key=lambda s: -np.hypot(*(s[1] - s[0])))
        for i in range(len(segs)):
            a = segs[i]
            da = a[1] - a[0]
            La = float(np.hypot(*da))
            ua = da / La
            na = np.array([-ua[1], ua[0]])
            for j in range(i + 1, len(segs)):
                b = segs[j]
                db = b[1] - b[0]
                Lb = float(np.hypot(*db))
                ang = abs(math.atan2(ua[0] * db[1] - ua[1] * db[0], ua @ db))
                ang = min(ang, math.pi - ang)
                if ang > angle_tol:
                    continue
                if np.max(np.abs((b - a[0]) @ na)) > lateral_tol:
                    continue
                tb = (b - a[0]) @ ua
                lo, hi = min(tb), max(tb)
                if lo > La + gap_tol or hi < -gap_tol:
                    continue
                t0, t1 = min(0.0, lo), max(La, hi)
                segs[i] = np.array([a[0] + t0 * ua, a[0] + t1 * ua])
                del segs[j]
                changed = True
                break
            if changed:
                break
    return segs


def grid_power_window(grid: CovarianceGrid, basis: PolarizationBasis | None, ix0, iy0, nx, ny,
                      params: RidgeParams = RidgeParams()) -> np.ndarray:
    """Excess power over the noise floor, shrunk by ``prior_weight`` pseudo-samples.

    Samples enter the grid only above a power floor, so the plain per-cell mean
    of sparsely hit noise cells sits near that floor; the shrinkage keeps them
    well below cells fed consistently by a real reflector.
    """
    sums, counts = reduced_window(grid, basis, ix0, iy0, nx, ny)
    q = basis.q if basis is not None else grid.q
    excess = trace_of_upper(sums, q) - counts * q * params.noise_power
    return np.maximum(excess, 0.0) / (counts + params.prior_weight)


def extract_lines(grid: CovarianceGrid, params: RidgeParams = RidgeParams(),
                  basis: PolarizationBasis | None = None, bounds=None, tile: int = 600) -> list[LineCandidate]:
    """Tile-wise ridge/Hough extraction over the occupied part of a grid."""
    occ = grid.occupied_bounds()
    if occ is None:
        return []
    if bounds is not None:
        occ = (max(occ[0], bounds[0]), max(occ[1], bounds[1]), min(occ[2], bounds[2]), min(occ[3], bounds[3]))
        if occ[0] > occ[2] or occ[1] > occ[3]:
            return []
    spec = grid.spec
    q = basis.q if basis is not None else grid.q
    floor = params.min_power_factor * q * params.noise_power
    margin = 20
    segs = []
    for core, ext in _tiles(occ, tile, margin):
        nx, ny = ext[2] - ext[0], ext[3] - ext[1]
        pw = grid_power_window(grid, basis, ext[0], ext[1], nx, ny, params)
        origin = (spec.origin[0] + ext[0] * spec.cell_size, spec.origin[1] + ext[1] * spec.cell_size)
        for lc in ridge_lines(pw, params, origin, spec.cell_size, floor):
            seg = lc.segment
            # keep segments that reach into the core, clipped later by merging
            mid = (seg[0] + seg[1]) / 2
            ix, iy = spec.cell_of(mid)
            if core[0] <= ix < core[2] and core[1] <= iy < core[3]:
                segs.append((seg, lc.support))
    if not segs:
        return []
    merged = merge_collinear([s for s, _ in segs], lateral_tol=1.5 * spec.cell_size,
                             gap_tol=params.max_gap, angle_tol=math.radians(5.0))
    out = []
    for m in merged:
        sup = sum(sp for s, sp in segs if _contains(m, s, 2.0 * spec.cell_size))
        w = m if m[0].tolist() <= m[1].tolist() else m[::-1]
        out.append(LineCandidate(float(w[0, 0]), float(w[0, 1]), float(w[1, 0]), float(w[1, 1]), int(sup)))
    out.sort(key=lambda l: (l.xs, l.ys, l.xe, l.ye))
    return out


def _contains(big, small, tol):
    d = big[1] - big[0]
    L2 = float(d @ d)
    u = np.clip(((small - big[0]) @ d) / L2, 0, 1)
    return bool(np.all(np.hypot(*(small - (big[0] + u[:, None] * d)).T) <= tol))
