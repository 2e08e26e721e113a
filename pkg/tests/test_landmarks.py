import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from polaris.gridmap import CovarianceGrid, GridSpec
from polaris.landmarks import (PcfarParams, RidgeParams, hybrid_median, pcfar_detect, pcfar_statistic, ridge_lines,
                               ridge_mask)
from polaris.polarimetry import BasisKind, PolarizationBasis, expand_upper, outer_upper
from polaris.simulator import dihedral, odd_bounce

SPEC = GridSpec((0.0, 0.0), 0.15, 21, 21)
AMPLITUDE = PolarizationBasis(BasisKind.CIRCULAR, ("LL",))


def odd_samples(rng, n, amp=1.0):
    ph = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
    return odd_bounce(amp)[None, :] * ph[:, None] + 0.1 * (rng.normal(size=(n, 4)) + 1j * rng.normal(size=(n, 4)))


def even_samples(rng, n, amp=1.0):
    ph = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
    return dihedral(amp, 0.1)[None, :] * ph[:, None] + 0.1 * (rng.normal(size=(n, 4)) + 1j * rng.normal(size=(n, 4)))


def background_grid(rng, spec=SPEC, n=10, scale=1.0):
    g = CovarianceGrid(spec)
    ix, iy = np.meshgrid(np.arange(spec.width), np.arange(spec.height), indexing="ij")
    for i, j in zip(ix.ravel(), iy.ravel()):
        g.add_samples([i] * n, [j] * n, math.sqrt(scale) * odd_samples(rng, n))
    return g


# ---------------------------------------------------------------- pCFAR statistic vs. brute force

def brute_force_statistic(sums, counts, params):
    """Direct per-cell loop over the annulus; the reference the vectorized path must match."""
    nx, ny, m = sums.shape
    q = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    out = np.full((nx, ny), np.nan)
    g, t = params.guard_radius, params.train_radius
    for i in range(nx):
        for j in range(ny):
            if counts[i, j] < params.min_samples:
                continue
            s = np.zeros((q, q), complex)
            n = 0
            for a in range(max(0, i - t), min(nx, i + t + 1)):
                for b in range(max(0, j - t), min(ny, j + t + 1)):
                    if max(abs(a - i), abs(b - j)) <= g:
                        continue
                    s += expand_upper(sums[a, b])
                    n += counts[a, b]
            sig = (s + params.prior_weight * params.noise_power * np.eye(q)) / (n + params.prior_weight)
            c = expand_upper(sums[i, j]) / counts[i, j]

            def d(x, y):
                y = y + 1e-6 * np.trace(y).real / q * np.eye(q)
                return (np.log(np.linalg.det(y).real) + np.trace(np.linalg.solve(y, x)).real) / q

            out[i, j] = 1.0 + math.sqrt(q) * (d(c, sig) - d(sig, sig))
    return out


def test_statistic_matches_brute_force():
    rng = np.random.default_rng(4)
    nx, ny = 14, 11
    counts = rng.integers(0, 12, (nx, ny)) * (rng.random((nx, ny)) < 0.7)
    sums = np.zeros((nx, ny, 10), complex)
    for i in range(nx):
        for j in range(ny):
            if counts[i, j]:
                sums[i, j] = outer_upper(rng.normal(size=(counts[i, j], 4)) + 1j * rng.normal(size=(counts[i, j], 4))).sum(0)
    params = PcfarParams()
    fast = pcfar_statistic(sums, counts, params)
    slow = brute_force_statistic(sums, counts, params)
    assert np.array_equal(np.isnan(fast), np.isnan(slow))
    ok = ~np.isnan(slow)
    assert np.allclose(fast[ok], slow[ok], rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------- detection behaviour

def test_homogeneous_grid_has_no_detections():
    g = CovarianceGrid(SPEC)
    ix, iy = np.meshgrid(np.arange(21), np.arange(21), indexing="ij")
    v = np.tile(odd_bounce(1.0), (ix.size * 6, 1))
    g.add_samples(np.repeat(ix.ravel(), 6), np.repeat(iy.ravel(), 6), v)
    assert pcfar_detect(g, PcfarParams(min_area=1)) == []


def test_even_bounce_cell_found_only_with_polarimetry():
    # 30 looks per cell keep single background cells below threshold (min_area 1 here)
    rng, n = np.random.default_rng(2), 30
    g4 = CovarianceGrid(SPEC)
    amp = CovarianceGrid(SPEC, AMPLITUDE)
    for i in range(SPEC.width):
        for j in range(SPEC.height):
            if (i, j) == (10, 10):
                # same power as the background, even-bounce signature
                om = even_samples(rng, n)
                om *= math.sqrt(2.0 + 0.04 * 4) / np.linalg.norm(om, axis=1, keepdims=True)
            else:
                om = odd_samples(rng, n)
            g4.add_samples([i] * n, [j] * n, om)
            amp.add_samples([i] * n, [j] * n, np.linalg.norm(om, axis=1)[:, None])
    params = PcfarParams(min_area=1, noise_power=0.01)
    hits = pcfar_detect(g4, params)
    assert len(hits) == 1
    assert np.allclose([hits[0].x, hits[0].y], SPEC.center_of(10, 10))
    assert pcfar_detect(amp, params) == []


def test_min_samples_gate():
    for n, expected in ((4, 0), (5, 1)):
        g = CovarianceGrid(SPEC)
        g.add_samples([10] * n, [10] * n, np.tile(odd_bounce(3.0), (n, 1)))
        assert len(pcfar_detect(g, PcfarParams(min_area=1))) == expected


def test_detections_unchanged_under_scaling():
    rng = np.random.default_rng(9)
    base = []
    for alpha in (0.1, 1.0, 10.0):
        r = np.random.default_rng(9)
        g = background_grid(r, scale=alpha)
        g.add_samples([7] * 10, [12] * 10, math.sqrt(alpha) * even_samples(r, 10, 1.5))
        # the noise prior is part of the calibration and scales with the data
        hits = pcfar_detect(g, PcfarParams(min_area=1, noise_power=0.01 * alpha))
        base.append([(round(h.x, 6), round(h.y, 6)) for h in hits])
    assert base[0] == base[1] == base[2]
    assert len(base[1]) >= 1
    del rng


# ---------------------------------------------------------------- ridge lines


def brute_force_hybrid_median(img):
    nx, ny = img.shape
    at = lambda i, j: img[i, j] if 0 <= i < nx and 0 <= j < ny else 0.0
    out = np.empty_like(img)
    for i in range(nx):
        for j in range(ny):
            plus = [at(i, j), at(i - 1, j), at(i + 1, j), at(i, j - 1), at(i, j + 1)]
            cross = [at(i, j), at(i - 1, j - 1), at(i + 1, j + 1), at(i - 1, j + 1), at(i + 1, j - 1)]
            out[i, j] = np.median([np.median(plus), np.median(cross), img[i, j]])
    return out


def test_hybrid_median_matches_loop_and_keeps_thin_lines():
    rng = np.random.default_rng(3)
    img = rng.exponential(1.0, (15, 12))
    assert np.allclose(hybrid_median(img), brute_force_hybrid_median(img))
    line = np.zeros((9, 9))
    line[4, 1:8] = 5.0
    line[2, 6] = 9.0  # isolated speck
    out = hybrid_median(line)
    assert np.all(out[4, 2:7] == 5.0) and out[2, 6] == 0.0

def test_straight_line_raster():
    p = np.zeros((80, 60))
    p[10:50, 30] = 1.0
    out = ridge_lines(p, RidgeParams())
    assert len(out) == 1
    seg = out[0].segment
    ends = sorted(map(tuple, seg))
    assert np.hypot(*(np.array(ends[0]) - (10.5, 30.5))) <= 2.0
    assert np.hypot(*(np.array(ends[1]) - (49.5, 30.5))) <= 2.0
    ang = math.degrees(math.atan2(*(seg[1] - seg[0])[::-1]))
    assert min(abs(ang), abs(abs(ang) - 180)) <= 2.0


def test_empty_map_has_no_lines():
    assert ridge_lines(np.zeros((30, 30))) == []


def test_l_shaped_wall():
    p = np.zeros((80, 80))
    p[20:60, 20] = 1.0
    p[20, 20:60] = 1.0
    out = ridge_lines(p, RidgeParams())
    assert len(out) == 2
    corner = np.array([20.5, 20.5])
    for lc in out:
        d = np.hypot(*(lc.segment - corner).T)
        assert d.min() <= 3.0


@given(st.integers(0, 10_000))
def test_segments_lie_on_ridge_support(seed):
    rng = np.random.default_rng(seed)
    p = 0.05 * rng.random((70, 70))
    for _ in range(rng.integers(1, 4)):
        a, b = rng.uniform(5, 65, 2), rng.uniform(5, 65, 2)
        n = int(np.hypot(*(b - a)) * 2) + 2
        pts = np.rint(a + np.linspace(0, 1, n)[:, None] * (b - a)).astype(int)
        p[pts[:, 0], pts[:, 1]] = 1.0
    params = RidgeParams()
    mask = ridge_mask(p, params)
    from scipy import ndimage
    support = ndimage.binary_dilation(mask, structure=np.ones((5, 5), bool))
    for lc in ridge_lines(p, params):
        for u in np.linspace(0, 1, 25):
            xy = lc.segment[0] + u * (lc.segment[1] - lc.segment[0]) - 0.5
            i, j = np.clip(np.rint(xy).astype(int), 0, 69)
            assert support[i, j]
