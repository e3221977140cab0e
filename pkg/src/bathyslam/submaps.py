"""Accumulation of pings into submaps plus point-cloud conditioning.

A submap closes when the accumulated point set has gathered enough 3D
structure (feature trigger) or when the vehicle has traveled a maximum
along-track distance (length trigger), whichever comes first. Each submap
is anchored at the navigation pose of its middle ping and its points are
re-expressed in that frame, then voxel-downsampled and passed through a
statistical outlier filter.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose3, inverse
from .types import Ping, Submap


@dataclass(frozen=True)
class SubmapConfig:
    max_length: float = 45.0          # meters of along-track travel
    info_threshold: float = 0.005     # feature trigger; fires on strong relief only
    voxel_size: float = 0.5           # meters
    outlier_neighbors: int = 10
    outlier_std_mult: float = 2.0
    feature_cell_size: float = 5.0    # coarse cells for the feature score
    feature_min_points: int = 10      # per-cell minimum for a covariance

    def validate(self) -> None:
        from .errors import ConfigError

        for name in ("max_length", "info_threshold", "voxel_size",
                     "outlier_neighbors", "outlier_std_mult",
                     "feature_cell_size", "feature_min_points"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"submap config field {name} must be positive")


class _FeatureAccumulator:
    """Incremental per-cell second-moment statistics for the feature score."""

    def __init__(self, cell_size: float, min_points: int):
        self.cell_size = cell_size
        self.min_points = min_points
        self.cells: dict[tuple[int, int], list] = {}

    def add(self, points: np.ndarray) -> None:
        keys = np.floor(points[:, :2] / self.cell_size).astype(np.int64)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        for u_idx, key in enumerate(map(tuple, uniq)):
            pts = points[inv == u_idx]
            stat = self.cells.get(key)
            if stat is None:
                stat = [0, np.zeros(3), np.zeros((3, 3))]
                self.cells[key] = stat
            stat[0] += pts.shape[0]
            stat[1] += pts.sum(axis=0)
            stat[2] += pts.T @ pts

    def score(self) -> float:
        ratios = []
        for n, s1, s2 in self.cells.values():
            if n < self.min_points:
                continue
            mu = s1 / n
            cov = s2 / n - np.outer(mu, mu)
            ratios.append(_eig_ratio(cov))
        if not ratios:
            return 0.0
        return float(np.mean(ratios))


def _eig_ratio(cov: np.ndarray) -> float:
    w = np.linalg.eigvalsh(cov)
    largest = w[-1]
    if largest <= 0.0:
        return 0.0
    return max(w[0], 0.0) / largest


def feature_score(points: np.ndarray, cell_size: float = 5.0, min_points: int = 10) -> float:
    """Geometric richness of a point set: the smallest/largest eigenvalue
    ratio of the local covariance, averaged over coarse x-y cells.

    Zero for perfectly planar sets, approaching 1 for isotropic scatter.
    Cells with fewer than ``min_points`` points are skipped; if no cell
    qualifies the ratio of the full set is used.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must have shape (n, 3)")
    if pts.shape[0] < 10:
        raise ValueError("feature score is undefined for fewer than 10 points")
    acc = _FeatureAccumulator(cell_size, min_points)
    acc.add(pts)
    score = acc.score()
    if not acc.cells or all(n < min_points for n, _, _ in acc.cells.values()):
        centered = pts - pts.mean(axis=0)
        return _eig_ratio(centered.T @ centered / pts.shape[0])
    return score


def voxel_downsample(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """One centroid per occupied voxel of an axis-aligned grid."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] == 0:
        return pts.copy()
    keys = np.floor(pts / voxel_size).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    sums = np.zeros((uniq.shape[0], 3))
    np.add.at(sums, inv, pts)
    counts = np.bincount(inv, minlength=uniq.shape[0])
    return sums / counts[:, None]


def remove_outliers(points: np.ndarray, neighbors: int, std_mult: float) -> np.ndarray:
    """Statistical filter: drop points whose mean distance to the k nearest
    neighbors exceeds the global mean plus ``std_mult`` standard deviations
    of that statistic. Passes through (with a warning) when the cloud is too
    small to compute neighborhoods."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] <= neighbors:
        warnings.warn(
            f"outlier filter skipped: {pts.shape[0]} points <= {neighbors} neighbors",
            stacklevel=2,
        )
        return pts.copy()
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=neighbors + 1)
    mean_dist = dist[:, 1:].mean(axis=1)
    threshold = mean_dist.mean() + std_mult * mean_dist.std()
    return pts[mean_dist <= threshold]


def build_submaps(
    pings: list[Ping],
    dr_poses: list[Pose3],
    cfg: SubmapConfig,
    *,
    condition: bool = True,
    boundaries: list[int] | None = None,
) -> list[Submap]:
    """Partition a ping stream into submaps and condition their point sets.

    ``dr_poses[k]`` is the navigation pose of ``pings[k]``; every ping ends
    up in exactly one submap. With ``condition=False`` the raw (re-anchored)
    beams are kept, which preserves the exact world reconstruction
    ``anchor @ points == dr_pose @ beams``. Pre-computed interval starts can
    be supplied via ``boundaries`` to bypass the trigger logic.
    """
    if len(pings) != len(dr_poses):
        raise ValueError("pings and dr_poses must be aligned")
    n = len(pings)
    if n == 0:
        return []
    timestamps = [p.timestamp for p in pings]
    if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
        raise ValueError("ping timestamps must be strictly increasing")

    if boundaries is not None:
        starts = [0] + list(boundaries)
        if starts != sorted(set(starts)) or any(b <= 0 or b >= n for b in boundaries):
            raise ValueError("boundaries must be sorted, unique and inside (0, n)")
        ranges = [(s, e) for s, e in zip(starts, starts[1:] + [n])]
    else:
        ranges = _trigger_ranges(pings, dr_poses, cfg)

    submaps: list[Submap] = []
    for sid, (s, e) in enumerate(ranges):
        mid = (s + e - 1) // 2
        anchor = dr_poses[mid]
        inv_anchor = inverse(anchor)
        chunks = [
            inv_anchor.transform(dr_poses[k].transform(pings[k].beams))
            for k in range(s, e)
        ]
        pts = np.vstack(chunks)
        if condition:
            pts = voxel_downsample(pts, cfg.voxel_size)
            pts = remove_outliers(pts, cfg.outlier_neighbors, cfg.outlier_std_mult)
            if pts.shape[0] == 0:
                raise ValueError(f"submap {sid} is empty after conditioning")
        world_xy = anchor.transform(pts)[:, :2]
        lo, hi = world_xy.min(axis=0), world_xy.max(axis=0)
        submaps.append(
            Submap(
                id=sid,
                anchor=anchor,
                points=pts,
                bounds_xy=(lo[0], lo[1], hi[0], hi[1]),
                ping_range=(s, e),
            )
        )
    return submaps


def _trigger_ranges(
    pings: list[Ping], dr_poses: list[Pose3], cfg: SubmapConfig
) -> list[tuple[int, int]]:
    cfg.validate()
    n = len(pings)
    ranges: list[tuple[int, int]] = []
    start = 0
    dist = 0.0
    acc = _FeatureAccumulator(cfg.feature_cell_size, cfg.feature_min_points)
    for k in range(n):
        pose = dr_poses[k]
        acc.add(pose.transform(pings[k].beams))
        if k > start:
            prev = dr_poses[k - 1]
            dist += math.hypot(pose.x - prev.x, pose.y - prev.y)
        if dist >= cfg.max_length or acc.score() >= cfg.info_threshold:
            ranges.append((start, k + 1))
            start = k + 1
            dist = 0.0
            acc = _FeatureAccumulator(cfg.feature_cell_size, cfg.feature_min_points)
    if start < n:
        ranges.append((start, n))
    return ranges
