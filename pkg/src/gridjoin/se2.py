"""SE(2) frames and the global-to-local cell projection.

The rotation matrix follows the world-to-local convention

    R(theta) = [[ cos theta, sin theta],
                [-sin theta, cos theta]]

so a world point ``q`` has local coordinates ``R(theta) @ (q - t)`` in the
frame ``(t, theta)``; ``R.T`` is the usual counter-clockwise rotation that
maps local offsets back to the world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def normalize_angle(theta):
    """Wrap angle(s) into (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    # mod maps the upper endpoint to -pi; (-pi, pi] wants +pi
    wrapped = np.where(wrapped <= -math.pi, wrapped + 2.0 * math.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Pose2:
    """Planar frame: position ``t = (x, y)`` and heading ``theta``."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(a[0], a[1], a[2])

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    @property
    def t(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def added(self, delta) -> "Pose2":
        """Plain vector increment followed by angle wrapping."""
        return Pose2(self.x + delta[0], self.y + delta[1], self.theta + delta[2])

    def compose(self, other: "Pose2") -> "Pose2":
        """``self * other``: ``other`` expressed in ``self`` mapped to the world."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(self.x + c * other.x - s * other.y,
                     self.y + s * other.x + c * other.y,
                     self.theta + other.theta)

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)

    def between(self, other: "Pose2") -> "Pose2":
        """Relative pose of ``other`` seen from ``self``."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = other.x - self.x, other.y - self.y
        return Pose2(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)

    def to_world(self, local_points) -> np.ndarray:
        """Map local points ``(..., 2)`` to world coordinates."""
        pts = np.asarray(local_points, dtype=float)
        return pts @ rot_matrix(self.theta) + self.t

    def to_local(self, world_points) -> np.ndarray:
        """Map world points ``(..., 2)`` to local coordinates."""
        pts = np.asarray(world_points, dtype=float)
        return (pts - self.t) @ rot_matrix(self.theta).T


def rot_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def drot_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[-s, c], [-c, -s]])


def project_global_to_local(pose: Pose2, cell, s: float, origin=(0.0, 0.0)) -> np.ndarray:
    """Metric position of global cell(s) in the local frame ``pose``.

    ``cell`` may be a single ``(2,)`` index or an ``(N, 2)`` array. ``origin``
    is the world position of global cell (0, 0).
    """
    q = np.asarray(origin, dtype=float) + np.asarray(cell, dtype=float) * s
    return (q - pose.t) @ rot_matrix(pose.theta).T


def dproj_dpose(pose: Pose2, cell, s: float, origin=(0.0, 0.0)) -> np.ndarray:
    """Jacobian of :func:`project_global_to_local` w.r.t. ``(x, y, theta)``.

    Returns ``(2, 3)`` for one cell or ``(N, 2, 3)`` for an array of cells.
    """
    q = np.asarray(origin, dtype=float) + np.asarray(cell, dtype=float) * s
    R = rot_matrix(pose.theta)
    lever = (q - pose.t) @ drot_matrix(pose.theta).T
    jac = np.empty(lever.shape[:-1] + (2, 3))
    jac[..., :, 0] = -R[:, 0]
    jac[..., :, 1] = -R[:, 1]
    jac[..., :, 2] = lever
    return jac


def poses_to_array(poses) -> np.ndarray:
    return np.array([p.as_array() for p in poses]).reshape(-1, 3)


def poses_from_array(a) -> list[Pose2]:
    return [Pose2.from_array(row) for row in np.asarray(a, dtype=float).reshape(-1, 3)]
