"""Sliding-window SE(2) factor graph with point and line map priors.

Poses are parameterized additively as (x, y, yaw) with yaw wrapped after each
update; landmark variables are plain 2-vectors. Residuals of each factor type
are evaluated in batch together with their analytic Jacobians, and the graph is
solved with sparse Levenberg-Marquardt on the sum of squared whitened errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csc_matrix, diags
from scipy.sparse.linalg import spsolve

from .geometry import Pose2, _log_coeffs, wrap_angle
from .sensors import MotionState


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    sigma_lp: float = 0.1
    sigma_ll: float = 0.1
    sigma_xx_t: float = 0.05
    sigma_xx_phi: float = 0.01
    sigma_xlp_r: float = 0.5
    sigma_xlp_phi: float = 0.03
    # fallback and initial pose priors are not part of the measurement model
    fallback_t: float = 0.5
    fallback_phi: float = 0.05
    initial_t: float = 0.05
    initial_phi: float = 0.01

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"{k} must be positive")

    def odometry_info(self) -> np.ndarray:
        return np.diag([self.sigma_xx_t**-2, self.sigma_xx_t**-2, self.sigma_xx_phi**-2])

    def observation_info(self) -> np.ndarray:
        return np.diag([self.sigma_xlp_phi**-2, self.sigma_xlp_r**-2])

    def point_info(self) -> np.ndarray:
        return np.eye(2) * self.sigma_lp**-2

    def line_info(self, direction) -> np.ndarray:
        """Information of a line-endpoint prior; weak along ``direction``."""
        d = np.asarray(direction, float)
        u = d / np.hypot(*d)
        U = np.array([[u[0], -u[1]], [u[1], u[0]]])
        cov = U @ np.diag([(10.0 * self.sigma_ll) ** 2, self.sigma_ll**2]) @ U.T
        return np.linalg.inv(cov)

    def fallback_info(self) -> np.ndarray:
        return np.diag([self.fallback_t**-2, self.fallback_t**-2, self.fallback_phi**-2])

    def initial_info(self) -> np.ndarray:
        return np.diag([self.initial_t**-2, self.initial_t**-2, self.initial_phi**-2])


# ---------------------------------------------------------------- residuals


def _rt_deriv(theta):
    """R(theta)^T and its derivative with respect to theta, batched (n, 2, 2)."""
    c, s = np.cos(theta), np.sin(theta)
    Rt = np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)
    dRt = np.stack([np.stack([-s, c], -1), np.stack([-c, -s], -1)], -2)
    return Rt, dRt


def _log_of_error(tE, thE, dtE, dthE):
    """Logmap residual and Jacobian given the error element and its derivatives.

    tE (n, 2), thE (n,), dtE (n, 2, k), dthE (n, k).
    """
    a, b, da = _log_coeffs(thE)
    M = np.stack([np.stack([a, b], -1), np.stack([-b, a], -1)], -2)
    dM = np.stack([np.stack([da, np.full_like(a, 0.5)], -1), np.stack([np.full_like(a, -0.5), da], -1)], -2)
    e = np.empty((thE.size, 3))
    e[:, :2] = np.einsum("nij,nj->ni", M, tE)
    e[:, 2] = thE
    J = np.empty((thE.size, 3, dthE.shape[1]))
    J[:, :2] = np.einsum("nij,njk->nik", M, dtE) + np.einsum("nij,nj,nk->nik", dM, tE, dthE)
    J[:, 2] = dthE
    return e, J


def odometry_residual(xi, xj, z):
    """Log(z^-1 (x_i^-1 x_j)) with Jacobians w.r.t. x_i and x_j (each (n, 3, 3))."""
    xi, xj, z = (np.atleast_2d(np.asarray(v, float)) for v in (xi, xj, z))
    n = xi.shape[0]
    Rti, dRti = _rt_deriv(xi[:, 2])
    dt = xj[:, :2] - xi[:, :2]
    tD = np.einsum("nij,nj->ni", Rti, dt)
    dtD = np.zeros((n, 2, 6))
    dtD[:, :, 0:2] = -Rti
    dtD[:, :, 2] = np.einsum("nij,nj->ni", dRti, dt)
    dtD[:, :, 3:5] = Rti
    dthD = np.zeros((n, 6))
    dthD[:, 2], dthD[:, 5] = -1.0, 1.0
    Rtz, _ = _rt_deriv(z[:, 2])
    tE = np.einsum("nij,nj->ni", Rtz, tD - z[:, :2])
    dtE = np.einsum("nij,njk->nik", Rtz, dtD)
    thE = wrap_angle(xj[:, 2] - xi[:, 2] - z[:, 2])
    e, J = _log_of_error(tE, np.atleast_1d(thE), dtE, dthD)
    return e, J[:, :, :3], J[:, :, 3:]


def pose_prior_residual(x, z):
    """Log(z^-1 x) and its Jacobian w.r.t. x."""
    x, z = (np.atleast_2d(np.asarray(v, float)) for v in (x, z))
    n = x.shape[0]
    Rtz, _ = _rt_deriv(z[:, 2])
    tE = np.einsum("nij,nj->ni", Rtz, x[:, :2] - z[:, :2])
    dtE = np.zeros((n, 2, 3))
    dtE[:, :, :2] = Rtz
    dthE = np.zeros((n, 3))
    dthE[:, 2] = 1.0
    return _log_of_error(tE, np.atleast_1d(wrap_angle(x[:, 2] - z[:, 2])), dtE, dthE)


def observation_residual(x, l, z):
    """(bearing error, range error) with Jacobians w.r.t. pose (n,2,3) and landmark (n,2,2)."""
    x, l, z = (np.atleast_2d(np.asarray(v, float)) for v in (x, l, z))
    n = x.shape[0]
    Rt, dRt = _rt_deriv(x[:, 2])
    w = l - x[:, :2]
    d = np.einsum("nij,nj->ni", Rt, w)
    r2 = np.einsum("ni,ni->n", d, d)
    r = np.sqrt(r2)
    e = np.column_stack([wrap_angle(np.arctan2(d[:, 1], d[:, 0]) - z[:, 0]), r - z[:, 1]])
    dd = np.stack([np.column_stack([-d[:, 1], d[:, 0]]) / r2[:, None], d / r[:, None]], 1)  # (n,2,2)
    ddx = np.zeros((n, 2, 3))
    ddx[:, :, :2] = -Rt
    ddx[:, :, 2] = np.einsum("nij,nj->ni", dRt, w)
    return e, np.einsum("nij,njk->nik", dd, ddx), np.einsum("nij,njk->nik", dd, Rt)


def line_projection(l, seg):
    """Projection of l onto the line through seg, clamped to the segment (n, 2)."""
    l, seg = np.atleast_2d(np.asarray(l, float)), np.asarray(seg, float).reshape(-1, 2, 2)
    d = seg[:, 1] - seg[:, 0]
    u = np.einsum("ni,ni->n", l - seg[:, 0], d) / np.einsum("ni,ni->n", d, d)
    return seg[:, 0] + np.clip(u, 0.0, 1.0)[:, None] * d


# ---------------------------------------------------------------- graph


@dataclass
class OptimizeResult:
    poses: dict
    landmarks: dict
    cost: float
    iterations: int
    converged: bool


@dataclass
class FactorGraph:
    poses: dict = field(default_factory=dict)  # id -> (3,) array
    landmarks: dict = field(default_factory=dict)  # key -> (2,) array
    odometry: list = field(default_factory=list)  # (i, j, z, info)
    observations: list = field(default_factory=list)  # (i, key, z, info)
    point_priors: list = field(default_factory=list)  # (key, m, info)
    line_priors: list = field(default_factory=list)  # (key, seg, which, info)
    pose_priors: list = field(default_factory=list)  # (i, z, info, kind)

    # -- variables ------------------------------------------------------
    def add_pose(self, i: int, pose) -> None:
        p = pose.as_array() if isinstance(pose, Pose2) else np.asarray(pose, float).copy()
        p[2] = wrap_angle(p[2])
        self.poses[int(i)] = p

    def add_landmark(self, key, xy) -> None:
        self.landmarks[key] = np.asarray(xy, float).copy()

    def pose(self, i: int) -> Pose2:
        return Pose2.from_array(self.poses[i])

    # -- factors --------------------------------------------------------
    def add_odometry_factor(self, i: int, j: int, motion: MotionState, dt: float,
                            noise: NoiseConfig = NoiseConfig()) -> np.ndarray:
        if j != i + 1:
            raise GraphError("odometry factors link consecutive poses")
        z = np.array([motion.v * dt, 0.0, motion.omega * dt])
        self.odometry.append((i, j, z, noise.odometry_info()))
        return z

    def add_observation_factor(self, i: int, key, bearing: float, range_: float,
                               noise: NoiseConfig = NoiseConfig()) -> None:
        if not range_ > 0:
            raise GraphError("observation range must be positive")
        self.observations.append((i, key, np.array([bearing, range_], float), noise.observation_info()))

    def add_point_prior(self, key, m, noise: NoiseConfig = NoiseConfig()) -> None:
        self.point_priors.append((key, np.asarray(m, float).copy(), noise.point_info()))

    def add_line_prior(self, key, line, which: str = "start", noise: NoiseConfig = NoiseConfig()) -> None:
        if which not in ("start", "end"):
            raise GraphError("which must be 'start' or 'end'")
        seg = np.asarray(line.segment if hasattr(line, "segment") else line, float).reshape(2, 2)
        d = seg[1] - seg[0]
        if np.hypot(*d) <= 1e-9:
            raise GraphError("degenerate map segment")
        self.line_priors.append((key, seg, which, noise.line_info(d)))

    def add_pose_prior(self, i: int, pose, info) -> None:
        z = pose.as_array() if isinstance(pose, Pose2) else np.asarray(pose, float)
        self.pose_priors.append((i, z.copy(), np.asarray(info, float), "prior"))

    def add_fallback_pose_prior(self, i: int, pose, noise: NoiseConfig = NoiseConfig()) -> None:
        z = pose.as_array() if isinstance(pose, Pose2) else np.asarray(pose, float)
        self.pose_priors.append((i, z.copy(), noise.fallback_info(), "fallback"))

    # -- structure ------------------------------------------------------
    def observed_landmarks(self) -> set:
        return {o[1] for o in self.observations}

    def validate(self) -> None:
        ids = sorted(self.poses)
        links = {(o[0], o[1]) for o in self.odometry}
        for a, b in zip(ids[:-1], ids[1:]):
            if (a, b) not in links:
                raise GraphError(f"poses {a} and {b} are not linked by odometry")
        if set(self.landmarks) - self.observed_landmarks():
            raise GraphError("landmark variable without observation factor")

    def truncate_window(self, max_poses: int) -> list[int]:
        """Drop the oldest poses beyond ``max_poses`` and everything hanging off them."""
        ids = sorted(self.poses)
        drop = set(ids[: max(0, len(ids) - max_poses)])
        if not drop:
            return []
        for i in drop:
            del self.poses[i]
        self.odometry = [f for f in self.odometry if f[0] not in drop and f[1] not in drop]
        self.observations = [f for f in self.observations if f[0] not in drop]
        self.pose_priors = [f for f in self.pose_priors if f[0] not in drop]
        alive = self.observed_landmarks()
        for k in [k for k in self.landmarks if k not in alive]:
            del self.landmarks[k]
        self.point_priors = [f for f in self.point_priors if f[0] in alive]
        self.line_priors = [f for f in self.line_priors if f[0] in alive]
        return sorted(drop)

    # -- evaluation -----------------------------------------------------
    def _layout(self):
        pose_ids = sorted(self.poses)
        lm_keys = list(self.landmarks)
        pcol = {i: 3 * k for k, i in enumerate(pose_ids)}
        base = 3 * len(pose_ids)
        lcol = {key: base + 2 * k for k, key in enumerate(lm_keys)}
        return pose_ids, lm_keys, pcol, lcol, base + 2 * len(lm_keys)

    def _pack(self, pose_ids, lm_keys) -> np.ndarray:
        parts = [self.poses[i] for i in pose_ids] + [self.landmarks[k] for k in lm_keys]
        return np.concatenate(parts) if parts else np.zeros(0)

    def _unpack(self, x, pose_ids, lm_keys) -> None:
        for k, i in enumerate(pose_ids):
            p = x[3 * k: 3 * k + 3].copy()
            p[2] = wrap_angle(p[2])
            self.poses[i] = p
        base = 3 * len(pose_ids)
        for k, key in enumerate(lm_keys):
            self.landmarks[key] = x[base + 2 * k: base + 2 * k + 2].copy()

    def _prepare(self, pcol, lcol) -> list:
        """Per factor type: kind, column indices, measurements and whitening factors S (P = S^T S)."""

        def white(info):
            return np.transpose(np.linalg.cholesky(np.asarray(info)), (0, 2, 1))

        out = []
        if self.odometry:
            f = self.odometry
            out.append(("odometry", (np.array([pcol[a[0]] for a in f]), np.array([pcol[a[1]] for a in f])),
                        np.array([a[2] for a in f]), white([a[3] for a in f])))
        if self.pose_priors:
            f = self.pose_priors
            out.append(("pose_prior", (np.array([pcol[a[0]] for a in f]),), np.array([a[1] for a in f]),
                        white([a[2] for a in f])))
        if self.observations:
            f = self.observations
            out.append(("observation", (np.array([pcol[a[0]] for a in f]), np.array([lcol[a[1]] for a in f])),
                        np.array([a[2] for a in f]), white([a[3] for a in f])))
        if self.point_priors:
            f = self.point_priors
            out.append(("point_prior", (np.array([lcol[a[0]] for a in f]),), np.array([a[1] for a in f]),
                        white([a[2] for a in f])))
        if self.line_priors:
            f = self.line_priors
            out.append(("line_prior", (np.array([lcol[a[0]] for a in f]),), np.array([a[1] for a in f]),
                        white([a[3] for a in f])))
        return out

    def _blocks(self, x, prepared, jacobian: bool):
        """Yield (whitened residuals (n, r), [(cols (n,), J (n, r, k))]) per factor type."""

        def get(cols, k):
            return x[cols[:, None] + np.arange(k)]

        for kind, cols, z, S in prepared:
            if kind == "odometry":
                e, Ji, Jj = odometry_residual(get(cols[0], 3), get(cols[1], 3), z)
                jacs = [(cols[0], Ji), (cols[1], Jj)]
            elif kind == "pose_prior":
                e, J = pose_prior_residual(get(cols[0], 3), z)
                jacs = [(cols[0], J)]
            elif kind == "observation":
                e, Jx, Jl = observation_residual(get(cols[0], 3), get(cols[1], 2), z)
                jacs = [(cols[0], Jx), (cols[1], Jl)]
            else:
                l = get(cols[0], 2)
                # line priors hold the projection point fixed within one linearization
                e = l - (z if kind == "point_prior" else line_projection(l, z))
                jacs = [(cols[0], np.broadcast_to(np.eye(2), (l.shape[0], 2, 2)))]
            ew = np.einsum("nij,nj->ni", S, e)
            yield ew, [(c, np.einsum("nij,njk->nik", S, J)) for c, J in jacs] if jacobian else []

    def _cost_at(self, x, prepared) -> float:
        return float(sum(np.sum(ew**2) for ew, _ in self._blocks(x, prepared, False)))

    def total_cost(self) -> float:
        """Sum of e^T P e over all factors at the current estimate."""
        pose_ids, lm_keys, pcol, lcol, _ = self._layout()
        return self._cost_at(self._pack(pose_ids, lm_keys), self._prepare(pcol, lcol))

    def _linearize(self, x, prepared, nvar):
        res, rows, cols, vals = [], [], [], []
        r0 = 0
        for ew, jacs in self._blocks(x, prepared, True):
            n, r = ew.shape
            res.append(ew.reshape(-1))
            rr = r0 + np.arange(n)[:, None] * r + np.arange(r)[None, :]
            for c, J in jacs:
                k = J.shape[2]
                rows.append(np.broadcast_to(rr[:, :, None], (n, r, k)).reshape(-1))
                cols.append(np.broadcast_to((c[:, None] + np.arange(k))[:, None, :], (n, r, k)).reshape(-1))
                vals.append(J.reshape(-1))
            r0 += n * r
        J = csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r0, nvar))
        return np.concatenate(res), J

    def optimize(self, max_iterations: int = 50, rel_tol: float = 1e-8, lambda0: float = 1e-4,
                 lambda_max: float = 1e10) -> OptimizeResult:
        """Levenberg-Marquardt over all variables; the graph is updated in place."""
        self.validate()
        pose_ids, lm_keys, pcol, lcol, nvar = self._layout()
        x = self._pack(pose_ids, lm_keys)
        yaw = np.zeros(nvar, dtype=bool)
        yaw[[pcol[i] + 2 for i in pose_ids]] = True
        prepared = self._prepare(pcol, lcol)
        cost = self._cost_at(x, prepared)
        lam = lambda0
        converged = False
        it = 0
        while it < max_iterations and not converged:
            it += 1
            if cost <= 1e-24:
                converged = True
                break
            r, J = self._linearize(x, prepared, nvar)
            H = (J.T @ J).tocsc()
            g = J.T @ r
            dH = H.diagonal()
            improved = False
            while lam <= lambda_max:
                A = (H + diags(lam * dH + lam * 1e-9)).tocsc()
                step = spsolve(A, -g)
                if not np.all(np.isfinite(step)):
                    lam *= 10.0
                    continue
                x_new = x + step
                x_new[yaw] = wrap_angle(x_new[yaw])
                c_new = self._cost_at(x_new, prepared)
                if c_new < cost:
                    rel = (cost - c_new) / cost
                    x, cost = x_new, c_new
                    lam = max(lam / 10.0, 1e-12)
                    improved = True
                    converged = rel < rel_tol
                    break
                lam *= 10.0
            if not improved:
                # no descent left: converged only if the gradient has vanished
                converged = bool(np.max(np.abs(g), initial=0.0) <= 1e-9 * max(1.0, cost))
                break
        self._unpack(x, pose_ids, lm_keys)
        return OptimizeResult({i: self.pose(i) for i in pose_ids},
                              {k: self.landmarks[k].copy() for k in lm_keys}, cost, it, converged)


def optimize(graph: FactorGraph, **kwargs) -> OptimizeResult:
    return graph.optimize(**kwargs)


def truncate_window(graph: FactorGraph, max_poses: int) -> list[int]:
    return graph.truncate_window(max_poses)


def odometry_increment(motion: MotionState, dt: float) -> Pose2:
    """Pose increment of the linear odometry model used by the odometry factor."""
    return Pose2(motion.v * dt, 0.0, motion.omega * dt)

