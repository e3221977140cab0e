"""Grid-based map self-consistency: the vertical disparity of overlapping
submaps, used as a quality proxy when no ground truth exists.

For every x-y cell, each submap contributing enough points gets a mean
depth; the cell error is the RMS of the pairwise differences between those
per-submap means and the global figure is the RMS over all covered cells
(cells seen by at least two submaps). Horizontal misalignment shows up
through depth disparity wherever the seabed has relief, so the metric
concentrates on featured areas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2
from .grids import Raster
from .types import Submap


@dataclass(frozen=True)
class ConsistencyConfig:
    cell_size: float = 1.0
    min_points_per_submap: int = 3
    min_submaps_per_cell: int = 2

    def validate(self) -> None:
        from .errors import ConfigError

        if self.cell_size <= 0:
            raise ConfigError("consistency cell_size must be positive")
        if self.min_points_per_submap < 1:
            raise ConfigError("min_points_per_submap must be at least 1")
        if self.min_submaps_per_cell < 2:
            raise ConfigError("min_submaps_per_cell must be at least 2")


@dataclass(frozen=True)
class ConsistencyMap:
    """Per-cell disparity raster plus the global RMS.

    ``covered_cells`` counts cells with multi-submap coverage; when it is
    zero the map had no usable overlap and ``rms`` is NaN, which is distinct
    from a perfectly consistent overlap (rms == 0).
    """

    raster: Raster
    rms: float
    covered_cells: int

    @property
    def zero_coverage(self) -> bool:
        return self.covered_cells == 0


def _bin_points(submaps, poses, cell_size):
    """World points of all submaps binned to cells; returns per-point
    (submap_index, iy, ix) keys plus depths and the grid geometry."""
    all_xy = []
    all_z = []
    owner = []
    for si, (sm, pose) in enumerate(zip(submaps, poses)):
        pts = sm.world_points(pose)
        all_xy.append(pts[:, :2])
        all_z.append(pts[:, 2])
        owner.append(np.full(pts.shape[0], si))
    xy = np.vstack(all_xy)
    z = np.concatenate(all_z)
    owner = np.concatenate(owner)

    origin = xy.min(axis=0)
    cols = np.floor((xy[:, 0] - origin[0]) / cell_size).astype(np.int64)
    rows = np.floor((xy[:, 1] - origin[1]) / cell_size).astype(np.int64)
    nx = int(cols.max()) + 1
    ny = int(rows.max()) + 1
    return owner, rows, cols, z, (float(origin[0]), float(origin[1])), (ny, nx)


def consistency_map(
    submaps: list[Submap], poses: list[Pose2], cfg: ConsistencyConfig | None = None
) -> ConsistencyMap:
    """Consistency error raster and RMS over the overlap regions."""
    cfg = cfg or ConsistencyConfig()
    cfg.validate()
    if not submaps:
        raise ValueError("consistency map needs at least one submap")
    if len(poses) != len(submaps):
        raise ValueError("one pose per submap is required")

    owner, rows, cols, z, origin, (ny, nx) = _bin_points(submaps, poses, cfg.cell_size)

    # mean depth per (submap, cell) with enough supporting points
    flat = rows * nx + cols
    combo = owner * (ny * nx) + flat
    uniq, inv = np.unique(combo, return_inverse=True)
    sums = np.bincount(inv, weights=z, minlength=uniq.size)
    counts = np.bincount(inv, minlength=uniq.size)
    keep = counts >= cfg.min_points_per_submap
    cell_of = (uniq % (ny * nx))[keep]
    means = (sums / counts)[keep]

    # pairwise RMS of the per-submap means within each cell:
    # sum_{a<b} (m_a - m_b)^2 == k * sum(m^2) - (sum m)^2
    order = np.argsort(cell_of, kind="stable")
    cell_sorted = cell_of[order]
    mean_sorted = means[order]
    cell_ids, start = np.unique(cell_sorted, return_index=True)
    k = np.diff(np.append(start, cell_sorted.size))
    sum_m = np.add.reduceat(mean_sorted, start)
    sum_m2 = np.add.reduceat(mean_sorted**2, start)

    covered = k >= cfg.min_submaps_per_cell
    values = np.full(ny * nx, np.nan)
    if np.any(covered):
        kk = k[covered]
        pair_count = kk * (kk - 1) / 2.0
        sq = np.maximum(kk * sum_m2[covered] - sum_m[covered] ** 2, 0.0)
        values[cell_ids[covered]] = np.sqrt(sq / pair_count)

    raster = Raster(origin_xy=origin, cell_size=cfg.cell_size, values=values.reshape(ny, nx))
    covered_cells = int(np.count_nonzero(covered))
    if covered_cells == 0:
        rms = math.nan
    else:
        errs = values[cell_ids[covered]]
        rms = float(np.sqrt(np.mean(errs**2)))
    return ConsistencyMap(raster=raster, rms=rms, covered_cells=covered_cells)


def depth_raster(
    submaps: list[Submap], poses: list[Pose2], cell_size: float = 1.0
) -> Raster:
    """Mean depth per cell over all points from all submaps."""
    if not submaps:
        raise ValueError("depth raster needs at least one submap")
    if len(poses) != len(submaps):
        raise ValueError("one pose per submap is required")
    _, rows, cols, z, origin, (ny, nx) = _bin_points(submaps, poses, cell_size)
    flat = rows * nx + cols
    sums = np.bincount(flat, weights=z, minlength=ny * nx)
    counts = np.bincount(flat, minlength=ny * nx)
    with np.errstate(invalid="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return Raster(origin_xy=origin, cell_size=cell_size, values=values.reshape(ny, nx))
