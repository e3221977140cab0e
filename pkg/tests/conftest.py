"""Shared fixtures: synthetic surfaces and submap pairs for registration
and pipeline tests."""

import numpy as np
import pytest

from bathyslam import (
    Heightfield,
    Pose2,
    Pose3,
    Submap,
    TerrainSpec,
    generate_terrain,
)


@pytest.fixture(scope="session")
def featured_terrain() -> Heightfield:
    return generate_terrain(
        TerrainSpec(
            extent=(120.0, 120.0),
            cell_size=1.0,
            feature_mix=1.0,
            seed=7,
            hill_amplitude=4.0,
            hill_count=8,
        )
    )


def surface_cloud(terrain: Heightfield, rng, n: int, window=(30.0, 30.0, 50.0, 40.0)) -> np.ndarray:
    """Random samples of the terrain surface inside an x-y window."""
    x0, y0, w, h = window
    xy = np.column_stack([rng.uniform(x0, x0 + w, n), rng.uniform(y0, y0 + h, n)])
    return np.column_stack([xy, terrain.depth_at(xy)])


def submap_pair(terrain: Heightfield, true_pose: Pose2, n: int = 6000, seed: int = 0,
                window=(30.0, 30.0, 50.0, 40.0)) -> tuple[Submap, Submap]:
    """Source/target submaps sampling the same surface patch independently.

    The source frame sits at ``true_pose`` in the target's frame, so a
    registration initialized near identity should recover ``true_pose``.
    """
    rng = np.random.default_rng(seed)
    src_world = surface_cloud(terrain, rng, n, window)
    tgt_world = surface_cloud(terrain, rng, n, window)
    lifted = Pose3(true_pose.x, true_pose.y, 0.0, 0.0, 0.0, true_pose.theta)
    source = Submap(id=1, anchor=Pose3.identity(), points=lifted.inverse_transform(src_world),
                    bounds_xy=(0, 0, 1, 1))
    target = Submap(id=0, anchor=Pose3.identity(), points=tgt_world, bounds_xy=(0, 0, 1, 1))
    return source, target
