"""Multi-drive landmark consensus and the persistent landmark map format."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import line_intersection

MAP_HEADER = "polaris-map v1"


@dataclass(frozen=True)
class PointLandmark:
    x: float
    y: float
    observation_count: int = 1

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class LineLandmark:
    xs: float
    ys: float
    xe: float
    ye: float

    @property
    def segment(self) -> np.ndarray:
        return np.array([[self.xs, self.ys], [self.xe, self.ye]])

    @property
    def length(self) -> float:
        return math.hypot(self.xe - self.xs, self.ye - self.ys)


@dataclass
class LandmarkMap:
    points: list[PointLandmark] = field(default_factory=list)
    lines: list[LineLandmark] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def point_array(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.points], dtype=float).reshape(-1, 2)

    def line_array(self) -> np.ndarray:
        return np.array([[l.xs, l.ys, l.xe, l.ye] for l in self.lines], dtype=float).reshape(-1, 4)


# ---------------------------------------------------------------- points


def _components(n: int, edges_i, edges_j) -> np.ndarray:
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    g = coo_matrix((np.ones(len(edges_i)), (np.asarray(edges_i, int), np.asarray(edges_j, int))), shape=(n, n))
    _, lab = connected_components(g, directed=False)
    return lab


def _sorted_mean(pts: np.ndarray) -> np.ndarray:
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    return pts[order].mean(axis=0)


def consensus_points(candidates_per_drive, d_thres: float = 0.3, n_thres: int = 2) -> list[PointLandmark]:
    """Promote candidates confirmed by at least ``n_thres`` distinct drives.

    ``candidates_per_drive`` is a sequence (one entry per drive) of (x, y)
    arrays or objects with ``x``/``y`` attributes.
    """
    pts, drive = [], []
    for k, cands in enumerate(candidates_per_drive):
        arr = _as_xy(cands)
        pts.append(arr)
        drive.append(np.full(len(arr), k))
    if not pts:
        return []
    P = np.concatenate(pts).reshape(-1, 2)
    D = np.concatenate(drive)
    if len(P) == 0:
        return []
    # canonical candidate order makes the result independent of input order
    order = np.lexsort((D, P[:, 1], P[:, 0]))
    P, D = P[order], D[order]
    pairs = cKDTree(P).query_pairs(d_thres, output_type="ndarray")
    if len(pairs):
        pairs = pairs[D[pairs[:, 0]] != D[pairs[:, 1]]]
    lab = _components(len(P), pairs[:, 0] if len(pairs) else [], pairs[:, 1] if len(pairs) else [])
    out = []
    for c in np.unique(lab):
        mem = lab == c
        if len(np.unique(D[mem])) >= n_thres:
            m = _sorted_mean(P[mem])
            out.append((m, int(mem.sum())))
    out = _merge_close(out, d_thres)
    res = [PointLandmark(float(m[0]), float(m[1]), n) for m, n in out]
    res.sort(key=lambda p: (p.x, p.y))
    return res


def _merge_close(items, d):
    """Fuse landmarks closer than ``d`` (count-weighted) until none remain."""
    items = list(items)
    while len(items) > 1:
        P = np.array([m for m, _ in items])
        pairs = cKDTree(P).query_pairs(d, output_type="ndarray")
        if not len(pairs):
            break
        dist = np.hypot(*(P[pairs[:, 0]] - P[pairs[:, 1]]).T)
        i, j = pairs[int(np.argmin(dist))]
        (mi, ni), (mj, nj) = items[i], items[j]
        merged = ((mi * ni + mj * nj) / (ni + nj), ni + nj)
        items = [it for k, it in enumerate(items) if k not in (i, j)] + [merged]
        items.sort(key=lambda it: (it[0][0], it[0][1]))
    return items


def _as_xy(cands) -> np.ndarray:
    if isinstance(cands, np.ndarray):
        return cands.reshape(-1, 2).astype(float)
    return np.array([[c.x, c.y] if hasattr(c, "x") else list(c) for c in cands], dtype=float).reshape(-1, 2)


# ---------------------------------------------------------------- lines


def _tri_area(a, b, c):
    return 0.5 * np.abs((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                        - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))


def _quad_area(a, b, c, d):
    s = 0.0
    for p, q in ((a, b), (b, c), (c, d), (d, a)):
        s = s + p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]
    return 0.5 * np.abs(s)


def hull_area4(P: np.ndarray) -> np.ndarray:
    """Convex-hull area of four points per row of P (n, 4, 2).

    The hull is either one of the four triangles or one of the three
    quadrilateral orderings; no other candidate can exceed it.
    """
    a, b, c, d = (P[:, k] for k in range(4))
    return np.max([_tri_area(a, b, c), _tri_area(a, b, d), _tri_area(a, c, d), _tri_area(b, c, d),
                   _quad_area(a, b, c, d), _quad_area(a, b, d, c), _quad_area(a, c, b, d)], axis=0)


def line_pair_distances(A, B) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise (d_ch, d_prj) between segments A[k] and B[k], each (n, 2, 2).

    d_ch is the convex-hull area of the four endpoints divided by the mean
    segment length; for parallel segments this is exactly their lateral offset,
    whatever their overlap. d_prj is the gap between the projections of both
    segments onto the longer one's direction (0 when they overlap).
    """
    A = np.asarray(A, float).reshape(-1, 2, 2)
    B = np.asarray(B, float).reshape(-1, 2, 2)
    la = np.hypot(*(A[:, 1] - A[:, 0]).T)
    lb = np.hypot(*(B[:, 1] - B[:, 0]).T)
    if np.any(la <= 0) or np.any(lb <= 0):
        raise ValueError("degenerate segment")
    ref = np.where((la >= lb)[:, None, None], A, B)
    u = (ref[:, 1] - ref[:, 0]) / np.maximum(la, lb)[:, None]
    ta = np.sort(np.einsum("nkj,nj->nk", A - ref[:, :1], u), axis=1)
    tb = np.sort(np.einsum("nkj,nj->nk", B - ref[:, :1], u), axis=1)
    d_ch = 2.0 * hull_area4(np.concatenate([A, B], axis=1)) / (la + lb)
    d_prj = np.maximum(0.0, np.maximum(ta[:, 0], tb[:, 0]) - np.minimum(ta[:, 1], tb[:, 1]))
    return d_ch, d_prj


def line_pair_distance(a, b) -> tuple[float, float]:
    """(d_ch, d_prj) between two segments; see :func:`line_pair_distances`."""
    d_ch, d_prj = line_pair_distances(a, b)
    return float(d_ch[0]), float(d_prj[0])


def close_line_pairs(S: np.ndarray, d_ch_thres: float, d_prj_thres: float) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs i < j of segments S (n, 2, 2) with d_ch < and d_prj < thresholds."""
    S = np.asarray(S, float).reshape(-1, 2, 2)
    if len(S) < 2:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    mids = S.mean(axis=1)
    half = np.hypot(*(S[:, 1] - S[:, 0]).T) / 2
    slack = d_prj_thres + d_ch_thres
    pairs = cKDTree(mids).query_pairs(2 * half.max() + slack, output_type="ndarray")
    if not len(pairs):
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    i, j = pairs[:, 0], pairs[:, 1]
    # segments whose midpoints are farther apart than their half-lengths plus slack cannot be close
    near = np.hypot(*(mids[i] - mids[j]).T) <= half[i] + half[j] + slack
    i, j = i[near], j[near]
    d_ch, d_prj = line_pair_distances(S[i], S[j])
    keep = (d_ch < d_ch_thres) & (d_prj < d_prj_thres)
    i, j = np.minimum(i[keep], j[keep]), np.maximum(i[keep], j[keep])
    order = np.lexsort((j, i))
    return i[order], j[order]


def _rdp(points: np.ndarray, tol: float) -> list[int]:
    """Indices of the Ramer-Douglas-Peucker simplification of an ordered polyline."""
    if len(points) <= 2:
        return list(range(len(points)))
    a, b = points[0], points[-1]
    d = b - a
    L = np.hypot(*d)
    if L == 0:
        dist = np.hypot(*(points - a).T)
    else:
        dist = np.abs(d[0] * (points[:, 1] - a[1]) - d[1] * (points[:, 0] - a[0])) / L
    k = int(np.argmax(dist))
    if dist[k] <= tol:
        return [0, len(points) - 1]
    left = _rdp(points[: k + 1], tol)
    right = _rdp(points[k:], tol)
    return left[:-1] + [i + k for i in right]


def _principal_direction(segs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Length-weighted direction and centroid of a set of segments (n, 2, 2)."""
    vec = segs[:, 1] - segs[:, 0]
    lengths = np.hypot(vec[:, 0], vec[:, 1])
    # orientation tensor handles arbitrary endpoint order
    ang = np.arctan2(vec[:, 1], vec[:, 0])
    c2 = np.sum(lengths * np.cos(2 * ang))
    s2 = np.sum(lengths * np.sin(2 * ang))
    th = 0.5 * math.atan2(s2, c2)
    mid = (segs[:, 0] + segs[:, 1]) / 2
    center = np.sum(mid * lengths[:, None], axis=0) / np.sum(lengths)
    return np.array([math.cos(th), math.sin(th)]), center


def merge_component(segs: np.ndarray, rdp_tol: float) -> list[np.ndarray]:
    """Merge one component of segments into a polyline of segments."""
    u, c = _principal_direction(segs)
    pts = segs.reshape(-1, 2)
    t = (pts - c) @ u
    # extreme mutual projections define the merged extent
    merged = np.array([c + t.min() * u, c + t.max() * u])
    n = np.array([-u[1], u[0]])
    dev = np.abs((pts - c) @ n)
    if dev.max() <= rdp_tol or len(segs) == 1:
        return [merged]
    # curved component: RDP on the endpoint cloud ordered along the main axis
    order = np.argsort(t, kind="stable")
    ordered = pts[order]
    keep = _rdp(ordered, rdp_tol)
    poly = ordered[keep]
    return [np.array([poly[i], poly[i + 1]]) for i in range(len(poly) - 1)
            if np.hypot(*(poly[i + 1] - poly[i])) > 1e-9]


def _tidy_intersections(segs: list[np.ndarray], trim_tol: float) -> list[np.ndarray]:
    """Snap nearby endpoints of non-parallel segments to their line intersection."""
    segs = [s.copy() for s in segs]
    for i in range(len(segs)):
        for j in range(i + 1, len(segs)):
            a, b = segs[i], segs[j]
            p = line_intersection(a[0], a[1], b[0], b[1])
            if p is None:
                continue
            ia = int(np.argmin(np.hypot(*(a - p).T)))
            ib = int(np.argmin(np.hypot(*(b - p).T)))
            if np.hypot(*(a[ia] - p)) <= trim_tol and np.hypot(*(b[ib] - p)) <= trim_tol:
                ua = (a[1 - ia] - a[ia])
                ub = (b[1 - ib] - b[ib])
                cosang = abs(ua @ ub) / (np.hypot(*ua) * np.hypot(*ub) + 1e-12)
                if cosang > math.cos(math.radians(20.0)):
                    continue  # nearly collinear: leave for merging, not trimming
                a[ia] = p
                b[ib] = p
    return segs


def consensus_lines(candidates_per_drive, d_ch_thres: float = 0.09, d_prj_thres: float = 1.5,
                    rdp_tol: float = 0.2, trim_tol: float = 1.0, min_drives: int = 2) -> list[LineLandmark]:
    """Merge line candidates that agree across drives into line landmarks."""
    segs, drive = [], []
    for k, cands in enumerate(candidates_per_drive):
        for c in cands:
            s = np.asarray(c.segment if hasattr(c, "segment") else c, float).reshape(2, 2)
            if s[0].tolist() > s[1].tolist():
                s = s[::-1]
            if np.hypot(*(s[1] - s[0])) > 0:
                segs.append(s)
                drive.append(k)
    if not segs:
        return []
    S = np.array(segs)
    D = np.array(drive)
    order = np.lexsort((D, S[:, 1, 1], S[:, 1, 0], S[:, 0, 1], S[:, 0, 0]))
    S, D = S[order], D[order]
    n = len(S)
    ei, ej = close_line_pairs(S, d_ch_thres, d_prj_thres)
    lab = _components(n, ei, ej)
    out = []
    for c in np.unique(lab):
        mem = lab == c
        if len(np.unique(D[mem])) < min_drives:
            continue
        out.extend(merge_component(S[mem], rdp_tol))
    out = _tidy_intersections(out, trim_tol)
    res = []
    for s in out:
        if s[0].tolist() > s[1].tolist():
            s = s[::-1]
        res.append(LineLandmark(float(s[0, 0]), float(s[0, 1]), float(s[1, 0]), float(s[1, 1])))
    res.sort(key=lambda l: (l.xs, l.ys, l.xe, l.ye))
    return res


# ---------------------------------------------------------------- persistence


class MapFormatError(ValueError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


def _fmt(v: float) -> str:
    return f"{v:.9f}"


def format_map(m: LandmarkMap) -> str:
    lines = [MAP_HEADER]
    for key in sorted(m.metadata):
        val = m.metadata[key]
        if isinstance(val, (list, tuple)):
            val = " ".join(str(v) for v in val)
        elif isinstance(val, float):
            val = _fmt(val)
        lines.append(f"{key} {val}")
    for p in m.points:
        lines.append(f"P {_fmt(p.x)} {_fmt(p.y)} {int(p.observation_count)}")
    for l in m.lines:
        lines.append(f"L {_fmt(l.xs)} {_fmt(l.ys)} {_fmt(l.xe)} {_fmt(l.ye)}")
    return "\n".join(lines) + "\n"


def save_map(m: LandmarkMap, path) -> None:
    Path(path).write_text(format_map(m), encoding="utf-8")


def parse_map(text: str) -> LandmarkMap:
    m = LandmarkMap()
    seen_header = False
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if not seen_header:
            if tok != MAP_HEADER.split():
                raise MapFormatError(no, f"expected header '{MAP_HEADER}'")
            seen_header = True
            continue
        try:
            if tok[0] == "P":
                if len(tok) != 4:
                    raise MapFormatError(no, "point record needs x y count")
                m.points.append(PointLandmark(float(tok[1]), float(tok[2]), int(tok[3])))
            elif tok[0] == "L":
                if len(tok) != 5:
                    raise MapFormatError(no, "line record needs xs ys xe ye")
                m.lines.append(LineLandmark(*(float(t) for t in tok[1:])))
            elif tok[0] == "cell_size":
                if len(tok) != 2:
                    raise MapFormatError(no, "cell_size takes one value")
                m.metadata["cell_size"] = float(tok[1])
            elif tok[0] in ("drives", "datum", "version", "config"):
                m.metadata[tok[0]] = " ".join(tok[1:])
            else:
                raise MapFormatError(no, f"unknown record '{tok[0]}'")
        except ValueError as exc:
            if isinstance(exc, MapFormatError):
                raise
            raise MapFormatError(no, str(exc)) from None
    if not seen_header:
        raise MapFormatError(1, "empty map file")
    return m


def load_map(path) -> LandmarkMap:
    return parse_map(Path(path).read_text(encoding="utf-8"))
