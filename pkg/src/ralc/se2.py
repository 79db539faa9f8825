"""SE(2) pose algebra: composition, relative poses, and factor Jacobians.

Poses are (x, y, theta) with theta kept in (-pi, pi]. Relative-pose factor
residuals are expressed in the measurement frame, and Jacobians are taken
with respect to right-composed local perturbations of each endpoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    t = math.fmod(theta, TWO_PI)
    if t <= -math.pi:
        t += TWO_PI
    elif t > math.pi:
        t -= TWO_PI
    return t


@dataclass(frozen=True)
class Pose2:
    """A planar pose. The constructor normalizes theta to (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=np.float64)

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, 0.0)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Pose composition a * b (apply b in the frame of a)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(a: Pose2) -> Pose2:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(-(c * a.x + s * a.y), -(-s * a.x + c * a.y), -a.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose of b expressed in the frame of a, i.e. inverse(a) * b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


def residual(measurement: Pose2, a: Pose2, b: Pose2) -> np.ndarray:
    """Factor residual: components of inverse(measurement) * between(a, b)."""
    r = between(measurement, between(a, b))
    return r.as_array()


def error_jacobians(measurement: Pose2, a: Pose2, b: Pose2):
    """Residual and its Jacobians for a relative-pose factor.

    Returns (r, Ja, Jb) where Ja, Jb are the 3x3 partial derivatives of the
    residual with respect to local right-composed perturbations of a and b:
    a -> compose(a, Pose2(dx, dy, dtheta)), evaluated at zero.
    """
    d = between(a, b)
    r_pose = between(measurement, d)
    r = r_pose.as_array()

    rm_t = rotation(measurement.theta).T
    # d/dtheta of R(theta)^T at 0, applied to the relative translation.
    std = np.array([d.y, -d.x], dtype=np.float64)

    ja = np.zeros((3, 3), dtype=np.float64)
    ja[:2, :2] = -rm_t
    ja[:2, 2] = rm_t @ std
    ja[2, 2] = -1.0

    jb = np.zeros((3, 3), dtype=np.float64)
    jb[:2, :2] = rotation(r_pose.theta)
    jb[2, 2] = 1.0
    return r, ja, jb


def check_information(matrix) -> np.ndarray:
    """Validate a 3x3 symmetric positive-definite information matrix.

    Returns a float64 copy. Raises ValueError otherwise.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"information matrix must be 3x3, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("information matrix has non-finite entries")
    if np.max(np.abs(m - m.T)) > 1e-9 * max(1.0, np.max(np.abs(m))):
        raise ValueError("information matrix is not symmetric")
    m = 0.5 * (m + m.T)
    eigvals = np.linalg.eigvalsh(m)
    if eigvals[0] <= 0.0:
        raise ValueError(f"information matrix is not positive definite (min eig {eigvals[0]:g})")
    return m
