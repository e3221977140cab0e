"""Measurement containers shared by the survey, submap and graph stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, Pose3, with_planar


def _frozen_array(a, shape_tail: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise ValueError(f"{name} must have shape (n, {', '.join(map(str, shape_tail))})")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Ping:
    """One sonar emission: a fan of beam returns in the sensor frame.

    ``sensor_pose`` is the navigation estimate of the vehicle at ping time
    (world frame); ``beams`` is an (n, 3) array of returns in the sensor
    frame (x forward, y starboard, z down).
    """

    timestamp: float
    sensor_pose: Pose3
    beams: np.ndarray

    def __post_init__(self):
        beams = _frozen_array(self.beams, (3,), "beams")
        if beams.shape[0] == 0:
            raise ValueError("a ping must contain at least one beam")
        object.__setattr__(self, "beams", beams)


@dataclass(frozen=True)
class Submap:
    """A rigid bundle of consecutive pings treated as a single measurement.

    ``points`` are expressed in the frame of ``anchor`` (the navigation pose
    at the middle ping of the bundle); ``bounds_xy`` is the axis-aligned
    world-frame footprint (xmin, ymin, xmax, ymax) of the anchored points;
    ``ping_range`` is the half-open [start, stop) index range of the pings
    the submap was built from.
    """

    id: int
    anchor: Pose3
    points: np.ndarray
    bounds_xy: tuple[float, float, float, float]
    ping_range: tuple[int, int] = (0, 0)

    def __post_init__(self):
        points = _frozen_array(self.points, (3,), "points")
        if points.shape[0] == 0:
            raise ValueError("a submap must contain at least one point")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "bounds_xy", tuple(float(v) for v in self.bounds_xy))

    def placed_anchor(self, pose: Pose2 | None = None) -> Pose3:
        """Anchor pose with its planar part replaced by ``pose`` (if given)."""
        return self.anchor if pose is None else with_planar(self.anchor, pose)

    def world_points(self, pose: Pose2 | None = None) -> np.ndarray:
        """Points in the world frame under the current planar pose estimate."""
        return self.placed_anchor(pose).transform(self.points)

    def footprint_bounds(self, pose: Pose2 | None = None) -> tuple[float, float, float, float]:
        """Axis-aligned x-y bounds of the world points under ``pose``."""
        xy = self.world_points(pose)[:, :2]
        lo = xy.min(axis=0)
        hi = xy.max(axis=0)
        return (lo[0], lo[1], hi[0], hi[1])


@dataclass(frozen=True)
class GaussianRelativePose:
    """A planar relative transform with Gaussian uncertainty.

    ``information`` is the 3x3 inverse covariance of (x, y, theta); it must
    be symmetric and positive definite.
    """

    mean: Pose2
    information: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        info = np.array(self.information, dtype=float)
        if info.shape != (3, 3):
            raise ValueError("information must be a 3x3 matrix")
        if not np.allclose(info, info.T, atol=1e-9):
            raise ValueError("information matrix must be symmetric")
        try:
            np.linalg.cholesky(info)
        except np.linalg.LinAlgError as exc:
            raise ValueError("information matrix must be positive definite") from exc
        info.setflags(write=False)
        object.__setattr__(self, "information", info)
