"""Association of local landmark observations with the landmark map."""
from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .geometry import Pose2
from .mapping import LandmarkMap, _components, close_line_pairs, line_pair_distances, merge_component


@dataclass(frozen=True)
class Observation:
    """One extracted landmark candidate, expressed in the odometry frame."""

    uid: int
    t: float
    kind: str  # "point" or "line"
    geom: tuple  # (x, y) or (xs, ys, xe, ye)


@dataclass
class Cluster:
    cid: int
    kind: str
    geom: np.ndarray  # (2,) point or (2, 2) segment, odometry frame
    last_seen: float
    count: int
    members: tuple = ()
    latest: np.ndarray | None = None  # mean of the members seen at last_seen (points only)


@dataclass
class LocalMap:
    clusters: list[Cluster] = field(default_factory=list)
    window_s: float = 5.0

    @property
    def points(self) -> list[Cluster]:
        return [c for c in self.clusters if c.kind == "point"]

    @property
    def lines(self) -> list[Cluster]:
        return [c for c in self.clusters if c.kind == "line"]


@dataclass(frozen=True)
class MatchParams:
    window_s: float = 5.0
    cluster_d: float = 0.5
    line_cluster_ch: float = 0.3
    line_cluster_prj: float = 1.0
    c_unmatched: float = 2.0
    point_gate: float = 1.0
    line_gate_ch: float = 0.18
    line_gate_prj: float = 3.0
    candidate_radius: float = 3.0
    horizon_frames: int = 30
    min_count: int = 3


class LocalMapBuilder:
    """Keeps the observation window and stable cluster ids between frames."""

    def __init__(self, params: MatchParams = MatchParams()):
        self.params = params
        self._obs: deque[Observation] = deque()
        self._owner: dict[int, int] = {}
        self._next_cid = 0
        self._next_uid = 0

    def new_uid(self) -> int:
        self._next_uid += 1
        return self._next_uid - 1

    def add(self, obs: Observation):
        self._obs.append(obs)

    def build(self, t_now: float) -> LocalMap:
        while self._obs and self._obs[0].t < t_now - self.params.window_s:
            o = self._obs.popleft()
            self._owner.pop(o.uid, None)
        lm = build_local_map(list(self._obs), self.params.window_s, self.params.cluster_d,
                             t_now=t_now, line_ch=self.params.line_cluster_ch,
                             line_prj=self.params.line_cluster_prj)
        # inherit ids by member vote; larger clusters claim first
        order = sorted(range(len(lm.clusters)), key=lambda k: (-lm.clusters[k].count, k))
        taken = set()
        owner = {}
        for k in order:
            c = lm.clusters[k]
            votes = Counter(self._owner[u] for u in c.members if u in self._owner)
            cid = None
            for prev, _ in sorted(votes.items(), key=lambda kv: (-kv[1], kv[0])):
                if prev not in taken:
                    cid = prev
                    break
            if cid is None:
                cid = self._next_cid
                self._next_cid += 1
            taken.add(cid)
            c.cid = cid
            for u in c.members:
                owner[u] = cid
        self._owner = owner
        lm.clusters.sort(key=lambda c: c.cid)
        return lm


def build_local_map(observations, window_s: float = 5.0, cluster_d: float = 0.5, t_now: float | None = None,
                    line_ch: float = 0.3, line_prj: float = 1.0) -> LocalMap:
    """Cluster odometry-frame observations of the last ``window_s`` seconds."""
    obs = list(observations)
    if t_now is None and obs:
        t_now = max(o.t for o in obs)
    obs = [o for o in obs if o.t >= t_now - window_s] if obs else []
    clusters = []
    pts = [o for o in obs if o.kind == "point"]
    if pts:
        P = np.array([o.geom for o in pts], float)
        pairs = cKDTree(P).query_pairs(cluster_d, output_type="ndarray")
        lab = _components(len(P), pairs[:, 0] if len(pairs) else [], pairs[:, 1] if len(pairs) else [])
        for c in np.unique(lab):
            idx = np.flatnonzero(lab == c)
            last = max(pts[i].t for i in idx)
            newest = [i for i in idx if pts[i].t == last]
            clusters.append(Cluster(-1, "point", P[idx].mean(axis=0), last, len(idx),
                                    tuple(sorted(pts[i].uid for i in idx)), P[newest].mean(axis=0)))
    lns = [o for o in obs if o.kind == "line"]
    if lns:
        S = np.array([o.geom for o in lns], float).reshape(-1, 2, 2)
        ei, ej = close_line_pairs(S, line_ch, line_prj)
        lab = _components(len(S), ei, ej)
        for c in np.unique(lab):
            idx = np.flatnonzero(lab == c)
            merged = merge_component(S[idx], rdp_tol=math.inf)[0]
            clusters.append(Cluster(-1, "line", merged, max(lns[i].t for i in idx), len(idx),
                                    tuple(sorted(lns[i].uid for i in idx))))
    return LocalMap(clusters, window_s)


# ---------------------------------------------------------------- matching


@dataclass(frozen=True)
class Association:
    obs_id: int
    lm_id: int
    kind: str


@dataclass
class MatchResult:
    associations: list[Association]
    cost: float
    correction: Pose2  # world-frame correction applied on top of the prior


def _transform(pose: Pose2, pts):
    return pose.transform_points(np.asarray(pts, float))


def _score(delta: Pose2, cp, cl, mp, ml, params: MatchParams):
    """Greedy gated assignment cost of clusters moved by ``delta``."""
    cost = 0.0
    assoc = []
    unmatched = 0
    if len(cp):
        q = _transform(delta, cp)
        if len(mp):
            d = np.hypot(q[:, None, 0] - mp[None, :, 0], q[:, None, 1] - mp[None, :, 1])
            ii, jj = np.nonzero(d <= params.point_gate)
            order = np.lexsort((jj, ii, d[ii, jj]))
            used_c, used_m = set(), set()
            for k in order:
                i, j = int(ii[k]), int(jj[k])
                if i in used_c or j in used_m:
                    continue
                used_c.add(i)
                used_m.add(j)
                cost += float(d[i, j])
                assoc.append(("point", i, j))
            unmatched += len(cp) - len(used_c)
        else:
            unmatched += len(cp)
    if len(cl):
        if ml:
            S = np.stack([_transform(delta, seg) for seg in cl])
            M = np.asarray(ml, float)
            ci, mj = np.repeat(np.arange(len(S)), len(M)), np.tile(np.arange(len(M)), len(S))
            d_ch, d_prj = line_pair_distances(S[ci], M[mj])
            ok = (d_ch <= params.line_gate_ch) & (d_prj <= params.line_gate_prj)
            c = np.where(ok, d_ch + d_prj, np.inf).reshape(len(S), len(M))
            for i in range(len(S)):
                j = int(np.argmin(c[i]))
                if not np.isfinite(c[i, j]):
                    unmatched += 1
                    continue
                cost += float(c[i, j])
                assoc.append(("line", i, j))
                c[:, j] = np.inf
        else:
            unmatched += len(cl)
    return cost + params.c_unmatched * unmatched, assoc


def _line_normal_offsets(cl, ml, params: MatchParams):
    out = []
    for seg in cl:
        d = seg[1] - seg[0]
        L = np.hypot(*d)
        if L == 0:
            continue
        mid = seg.mean(axis=0)
        for mseg in ml:
            md = mseg[1] - mseg[0]
            mL = np.hypot(*md)
            cosang = abs(d @ md) / (L * mL)
            if cosang < math.cos(math.radians(5.0)):
                continue
            n = np.array([-md[1], md[0]]) / mL
            off = float((mseg[0] - mid) @ n)
            if abs(off) <= params.candidate_radius:
                out.append(off * n)
    return out


def _refine(prior_delta: Pose2, assoc, cp, cl, mp, ml) -> Pose2:
    """Least-squares rigid correction from matched point pairs and line normals."""
    src, dst = [], []
    for kind, i, j in assoc:
        if kind == "point":
            src.append(cp[i])
            dst.append(mp[j])
    A, b = [], []
    for kind, i, j in assoc:
        if kind == "line":
            mseg = ml[j]
            md = mseg[1] - mseg[0]
            n = np.array([-md[1], md[0]]) / np.hypot(*md)
            for p in cl[i]:
                # n . (R p + t - m0) = 0, linearized about zero rotation
                A.append([n[0], n[1], n[0] * -p[1] + n[1] * p[0]])
                b.append(float(n @ (mseg[0] - p)))
    for s, d in zip(src, dst):
        A.append([1.0, 0.0, -s[1]])
        b.append(d[0] - s[0])
        A.append([0.0, 1.0, s[0]])
        b.append(d[1] - s[1])
    if not A:
        return prior_delta
    A = np.asarray(A)
    b = np.asarray(b)
    rank = np.linalg.matrix_rank(A)
    if rank < 3:
        # rotation unobservable: translation only
        sol, *_ = np.linalg.lstsq(A[:, :2], b, rcond=None)
        return Pose2(sol[0], sol[1], 0.0)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return Pose2(sol[0], sol[1], sol[2])


def match(local: LocalMap, lmap: LandmarkMap, prior_pose: Pose2, params: MatchParams = MatchParams(),
          point_ids=None, line_ids=None) -> tuple[list[Association], float, Pose2]:
    """Best-scoring association of local clusters to map landmarks.

    ``prior_pose`` maps the odometry frame (where the local map lives) into the
    map frame. Returns associations, their cost and the refined correction.
    """
    pc = local.points
    lc = local.lines
    cp = _transform(prior_pose, np.array([c.geom for c in pc]).reshape(-1, 2)) if pc else np.zeros((0, 2))
    cl = [_transform(prior_pose, c.geom) for c in lc]
    mp_all = lmap.point_array()
    ml_all = [l.segment for l in lmap.lines]
    pid = list(range(len(mp_all))) if point_ids is None else list(point_ids)
    lid = list(range(len(ml_all))) if line_ids is None else list(line_ids)
    # restrict the map to the surroundings of the local map
    if len(cp) or cl:
        allp = np.vstack([cp] + [s for s in cl]) if cl else cp
        lo = allp.min(axis=0) - params.candidate_radius - params.point_gate
        hi = allp.max(axis=0) + params.candidate_radius + params.point_gate
    else:
        return [], params.c_unmatched * 0, Pose2()
    keep_p = [k for k in range(len(mp_all)) if np.all(mp_all[k] >= lo) and np.all(mp_all[k] <= hi)]
    keep_l = [k for k in range(len(ml_all))
              if np.all(ml_all[k].max(axis=0) >= lo) and np.all(ml_all[k].min(axis=0) <= hi)]
    mp = mp_all[keep_p].reshape(-1, 2)
    ml = [ml_all[k] for k in keep_l]
    n_clusters = len(cp) + len(cl)
    baseline = params.c_unmatched * n_clusters

    cands = [np.zeros(2)]
    if len(cp) and len(mp):
        d = mp[None, :, :] - cp[:, None, :]
        dist = np.hypot(d[..., 0], d[..., 1])
        ii, jj = np.nonzero(dist <= params.candidate_radius)
        cands.extend(d[ii, jj])
    cands.extend(_line_normal_offsets(cl, ml, params))
    C = np.unique(np.round(np.array(cands), 9), axis=0)
    best = None
    for t in C:
        delta = Pose2(t[0], t[1], 0.0)
        cost, assoc = _score(delta, cp, cl, mp, ml, params)
        key = (round(cost, 9), float(np.hypot(*t)), t[0], t[1])
        if best is None or key < best[0]:
            best = (key, cost, assoc, delta)
    _, cost, assoc, delta = best
    if not assoc or cost >= baseline:
        return [], baseline, Pose2()
    refined = _refine(delta, assoc, cp, cl, mp, ml)
    r_cost, r_assoc = _score(refined, cp, cl, mp, ml, params)
    if r_assoc and r_cost <= cost:
        cost, assoc, delta = r_cost, r_assoc, refined
    out = []
    for kind, i, j in assoc:
        if kind == "point":
            out.append(Association(pc[i].cid, pid[keep_p[j]], "point"))
        else:
            out.append(Association(lc[i].cid, lid[keep_l[j]], "line"))
    out.sort(key=lambda a: (a.kind, a.obs_id))
    return out, float(cost), delta


# ---------------------------------------------------------------- smoothing


class AssociationGraph:
    """Rolling per-frame association history with pair counts."""

    def __init__(self, horizon_frames: int = 30):
        self.horizon = horizon_frames
        self.frames: deque = deque()
        self.counts: Counter = Counter()

    def add_frame(self, frame: int, associations):
        pairs = {(a.kind, a.obs_id, a.lm_id) for a in associations}
        self.frames.append((frame, pairs))
        self.counts.update(pairs)
        while self.frames and self.frames[0][0] <= frame - self.horizon:
            _, old = self.frames.popleft()
            self.counts.subtract(old)
            for k in old:
                if self.counts[k] <= 0:
                    del self.counts[k]

    def count_table(self, kind: str) -> dict:
        return {(o, l): c for (k, o, l), c in self.counts.items() if k == kind}


def max_weight_matching(counts: dict, min_count: int = 1) -> dict:
    """Exact maximum-weight bipartite matching of {(obs, lm): weight}.

    Among optimal matchings, lower landmark ids are preferred.
    """
    edges = {k: int(v) for k, v in counts.items() if v >= min_count and v > 0}
    if not edges:
        return {}
    obs = sorted({o for o, _ in edges})
    lms = sorted({l for _, l in edges})
    oi = {o: i for i, o in enumerate(obs)}
    li = {l: j for j, l in enumerate(lms)}
    nl = len(lms)
    # integer weights scaled so the id preference can only break ties
    scale = nl * min(len(obs), nl) + 1
    W = np.zeros((len(obs), nl))
    for (o, l), w in edges.items():
        W[oi[o], li[l]] = w * scale + (nl - li[l])
    rows, cols = linear_sum_assignment(W, maximize=True)
    out = {}
    for r, c in zip(rows, cols):
        if (obs[r], lms[c]) in edges:
            out[obs[r]] = lms[c]
    return out


def temporal_smooth(graph: AssociationGraph, min_count: int = 3) -> list[Association]:
    """Injective associations maximizing total count per landmark kind."""
    out = []
    for kind in ("point", "line"):
        m = max_weight_matching(graph.count_table(kind), min_count)
        out.extend(Association(o, l, kind) for o, l in sorted(m.items()))
    return out
