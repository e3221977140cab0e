"""Pose types and rigid-transform operations with fixed frame conventions.

Conventions used everywhere in this package:

* World frame is a local tangent plane anchored at the first navigation fix
  of the mission, right handed, with z positive downward (z is depth in
  meters). No geodetic datum handling.
* Orientation is intrinsic Z-Y-X Euler (yaw about z, then pitch about the
  new y, then roll about the new x). Yaw rotates +x toward +y.
* Angles are normalized to (-pi, pi].
* ``compose(a, b)`` places ``b`` in the frame of ``a`` (matrix product
  ``T_a @ T_b``); ``relative(a, b)`` is the transform taking frame ``a``
  to frame ``b``, i.e. ``compose(a, relative(a, b)) == b``.

Pose values are immutable and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Normalize an angle (scalar or ndarray) to the interval (-pi, pi].

    Angles already in range pass through unchanged (bit-exact).
    """
    in_range = (theta > -np.pi) & (theta <= np.pi)
    return np.where(in_range, theta, np.pi - (np.pi - theta) % _TWO_PI)


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, theta); theta is wrapped to (-pi, pi] on creation."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(a[0], a[1], a[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def rotation(self) -> np.ndarray:
        """2x2 rotation matrix of theta."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Pose3:
    """6-DoF pose: position in meters (z = depth, positive down) and
    Z-Y-X Euler orientation in radians. All angles wrapped to (-pi, pi]."""

    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, float(wrap_angle(getattr(self, name))))

    @classmethod
    def identity(cls) -> "Pose3":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_arrays(cls, t, rpy) -> "Pose3":
        return cls(t[0], t[1], t[2], rpy[0], rpy[1], rpy[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def rotation(self) -> Rotation:
        return Rotation.from_euler("ZYX", (self.yaw, self.pitch, self.roll))

    def rotation_matrix(self) -> np.ndarray:
        return self.rotation().as_matrix()

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map (n, 3) points from this pose's frame into its parent frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation_matrix().T + self.translation()

    def inverse_transform(self, points: np.ndarray) -> np.ndarray:
        """Map (n, 3) points from the parent frame into this pose's frame."""
        pts = np.asarray(points, dtype=float)
        return (pts - self.translation()) @ self.rotation_matrix()


def _pose3_from(rotation: Rotation, t: np.ndarray) -> Pose3:
    yaw, pitch, roll = rotation.as_euler("ZYX")
    return Pose3(t[0], t[1], t[2], roll, pitch, yaw)


def compose(a, b):
    """Compose two poses of the same type: ``b`` expressed in ``a``'s frame."""
    if isinstance(a, Pose2) and isinstance(b, Pose2):
        ca, sa = math.cos(a.theta), math.sin(a.theta)
        return Pose2(
            a.x + ca * b.x - sa * b.y,
            a.y + sa * b.x + ca * b.y,
            a.theta + b.theta,
        )
    if isinstance(a, Pose3) and isinstance(b, Pose3):
        ra = a.rotation()
        t = a.translation() + ra.apply(b.translation())
        return _pose3_from(ra * b.rotation(), t)
    raise TypeError(f"cannot compose {type(a).__name__} with {type(b).__name__}")


def inverse(p):
    """Group inverse: ``compose(p, inverse(p))`` is the identity."""
    if isinstance(p, Pose2):
        c, s = math.cos(p.theta), math.sin(p.theta)
        return Pose2(-(c * p.x + s * p.y), s * p.x - c * p.y, -p.theta)
    if isinstance(p, Pose3):
        rinv = p.rotation().inv()
        t = -rinv.apply(p.translation())
        return _pose3_from(rinv, t)
    raise TypeError(f"cannot invert {type(p).__name__}")


def relative(a, b):
    """Relative transform from ``a`` to ``b``: ``compose(a, relative(a, b)) == b``."""
    return compose(inverse(a), b)


def project_se2(p: Pose3) -> Pose2:
    """Planar components (x, y, yaw) of a 6-DoF pose."""
    return Pose2(p.x, p.y, p.yaw)


def lift_se2(p: Pose2, z: float = 0.0, roll: float = 0.0, pitch: float = 0.0) -> Pose3:
    """Embed a planar pose in 3D with the given out-of-plane components."""
    return Pose3(p.x, p.y, z, roll, pitch, p.theta)


def with_planar(anchor: Pose3, p: Pose2) -> Pose3:
    """Replace the (x, y, yaw) of ``anchor``, keeping z, roll and pitch."""
    return Pose3(p.x, p.y, anchor.z, anchor.roll, anchor.pitch, p.theta)
