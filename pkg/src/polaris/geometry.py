"""Planar rigid-body helpers: SE(2) poses, angle wrapping and segment geometry."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    wrapped = a - 2.0 * np.pi * np.ceil((np.asarray(a) - np.pi) / (2.0 * np.pi))
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    """Planar pose; yaw is kept in (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def rotation(self) -> np.ndarray:
        return rot(self.yaw)

    def compose(self, other: "Pose2") -> "Pose2":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )

    __matmul__ = compose

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.yaw)

    def between(self, other: "Pose2") -> "Pose2":
        """Relative pose ``self^-1 * other``."""
        return self.inverse().compose(other)

    def transform_points(self, pts) -> np.ndarray:
        """Map points given in this pose's frame into the parent frame."""
        pts = np.asarray(pts, dtype=float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = np.empty_like(pts)
        out[..., 0] = self.x + c * pts[..., 0] - s * pts[..., 1]
        out[..., 1] = self.y + s * pts[..., 0] + c * pts[..., 1]
        return out

    def inverse_transform_points(self, pts) -> np.ndarray:
        """Map parent-frame points into this pose's frame."""
        pts = np.asarray(pts, dtype=float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = pts[..., 0] - self.x
        dy = pts[..., 1] - self.y
        out = np.empty_like(pts)
        out[..., 0] = c * dx + s * dy
        out[..., 1] = -s * dx + c * dy
        return out


def _log_coeffs(theta):
    """Coefficients (a, b) of V(theta)^-1 = [[a, b], [-b, a]] and da/dtheta."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < 1e-4
    t = np.where(small, 1.0, theta)
    half = 0.5 * t
    cot = np.cos(half) / np.sin(half)
    a = np.where(small, 1.0 - theta**2 / 12.0, half * cot)
    da = np.where(small, -theta / 6.0, 0.5 * cot - half / (2.0 * np.sin(half) ** 2))
    return a, 0.5 * theta, da


def se2_log(t, theta):
    """Logmap of SE(2) elements given as translation(s) ``t`` (..., 2) and angle(s)."""
    t = np.asarray(t, dtype=float)
    a, b, _ = _log_coeffs(theta)
    rho0 = a * t[..., 0] + b * t[..., 1]
    rho1 = -b * t[..., 0] + a * t[..., 1]
    return np.stack([rho0, rho1, np.asarray(theta, dtype=float) + 0.0 * rho0], axis=-1)


def se2_exp(xi) -> Pose2:
    """Expmap of a twist (rho_x, rho_y, theta)."""
    rx, ry, th = (float(v) for v in xi)
    if abs(th) < 1e-9:
        return Pose2(rx, ry, th)
    s, c = math.sin(th), math.cos(th)
    A, B = s / th, (1.0 - c) / th
    return Pose2(A * rx - B * ry, B * rx + A * ry, th)


def segment_length(seg) -> float:
    seg = np.asarray(seg, dtype=float).reshape(2, 2)
    return float(np.hypot(*(seg[1] - seg[0])))


def project_to_line(p, a, b):
    """Orthogonal projection of ``p`` onto the infinite line through a, b.

    Returns (point, u) where u is the normalized position along a->b.
    """
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    d = b - a
    den = float(d @ d)
    if den == 0.0:
        raise ValueError("degenerate segment")
    u = float((p - a) @ d) / den
    return a + u * d, u


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def polygon_area(poly) -> float:
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def line_intersection(p1, p2, q1, q2):
    """Intersection of the infinite lines p1-p2 and q1-q2, or None if parallel."""
    p1, p2, q1, q2 = (np.asarray(v, dtype=float) for v in (p1, p2, q1, q2))
    d1, d2 = p2 - p1, q2 - q1
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-12 * max(1.0, float(d1 @ d1) * float(d2 @ d2)):
        return None
    w = q1 - p1
    s = (w[0] * d2[1] - w[1] * d2[0]) / den
    return p1 + s * d1
