import math

import numpy as np
import pytest

from bathyslam import (
    ConsistencyConfig,
    Pose2,
    Pose3,
    Submap,
    consistency_map,
    depth_raster,
    read_esri_ascii,
)


def flat_submap(sid, depth, x0=0.0, y0=0.0, w=20.0, h=10.0, n=4000, seed=0):
    rng = np.random.default_rng(seed)
    xy = np.column_stack([rng.uniform(x0, x0 + w, n), rng.uniform(y0, y0 + h, n)])
    pts = np.column_stack([xy, np.full(n, depth)])
    return Submap(id=sid, anchor=Pose3.identity(), points=pts, bounds_xy=(x0, y0, x0 + w, y0 + h))


def identity_poses(n):
    return [Pose2.identity()] * n


class TestConsistencyMap:
    def test_identical_submaps_zero_rms(self):
        a = flat_submap(0, 15.0, seed=1)
        b = Submap(id=1, anchor=a.anchor, points=a.points, bounds_xy=a.bounds_xy)
        out = consistency_map([a, b], identity_poses(2))
        assert out.covered_cells > 0
        assert out.rms == 0.0

    def test_flat_offset_gives_exact_offset(self):
        a = flat_submap(0, 15.0, seed=1)
        b = flat_submap(1, 16.0, seed=2)
        out = consistency_map([a, b], identity_poses(2))
        assert out.covered_cells > 0
        assert out.rms == pytest.approx(1.0, abs=1e-12)
        covered = out.raster.values[np.isfinite(out.raster.values)]
        assert np.allclose(covered, 1.0, atol=1e-12)

    def test_zero_coverage_distinct_from_zero(self):
        a = flat_submap(0, 15.0, x0=0.0, seed=1)
        b = flat_submap(1, 15.0, x0=100.0, seed=2)
        out = consistency_map([a, b], identity_poses(2))
        assert out.covered_cells == 0
        assert out.zero_coverage
        assert math.isnan(out.rms)

    def test_translation_invariance(self):
        a = flat_submap(0, 15.0, seed=3)
        b = flat_submap(1, 15.7, seed=4)
        base = consistency_map([a, b], identity_poses(2))
        # arbitrary (non-cell-multiple) rigid shift of every pose
        shift = [Pose2(12.34, -7.89, 0.0)] * 2
        moved = consistency_map([a, b], shift)
        assert moved.rms == pytest.approx(base.rms, abs=1e-9)
        assert moved.covered_cells == base.covered_cells

    def test_monotone_offset_sensitivity(self):
        a = flat_submap(0, 15.0, seed=5)
        for delta in (0.25, 0.5, 2.0):
            b = flat_submap(1, 15.0 + delta, seed=6)
            out = consistency_map([a, b], identity_poses(2))
            assert out.rms == pytest.approx(delta, abs=1e-12)

    def test_three_submaps_pairwise_rms(self):
        # depths 10, 11, 13: pairwise diffs 1, 3, 2 -> cell rms sqrt(14/3)
        subs = [flat_submap(k, d, seed=k + 10) for k, d in enumerate((10.0, 11.0, 13.0))]
        out = consistency_map(subs, identity_poses(3))
        assert out.rms == pytest.approx(math.sqrt(14.0 / 3.0), abs=1e-12)

    def test_min_points_filter(self):
        a = flat_submap(0, 15.0, seed=7)
        lone = Submap(id=1, anchor=Pose3.identity(),
                      points=np.array([[5.0, 5.0, 20.0]]), bounds_xy=(5, 5, 5, 5))
        out = consistency_map([a, lone], identity_poses(2),
                              ConsistencyConfig(min_points_per_submap=3))
        assert out.covered_cells == 0  # a single point cannot form a pair

    def test_coverage_counts_multi_submap_cells(self):
        a = flat_submap(0, 15.0, x0=0.0, w=20.0, n=8000, seed=8)
        b = flat_submap(1, 15.5, x0=10.0, w=20.0, n=8000, seed=9)
        out = consistency_map([a, b], identity_poses(2), ConsistencyConfig(cell_size=1.0))
        finite = int(np.isfinite(out.raster.values).sum())
        assert finite == out.covered_cells
        assert 80 <= out.covered_cells <= 110  # ~10 x 10 m overlap strip


class TestDepthRaster:
    def test_flat_submap_constant_depth(self):
        a = flat_submap(0, 15.0, seed=1)
        raster = depth_raster([a], identity_poses(1), cell_size=1.0)
        covered = raster.values[np.isfinite(raster.values)]
        assert covered.size > 0
        assert np.allclose(covered, 15.0)

    def test_rigid_shift_moves_raster(self):
        a = flat_submap(0, 15.0, seed=2)
        base = depth_raster([a], identity_poses(1), cell_size=1.0)
        moved = depth_raster([a], [Pose2(7.0, 3.0, 0.0)], cell_size=1.0)
        assert moved.origin_xy[0] == pytest.approx(base.origin_xy[0] + 7.0)
        assert moved.origin_xy[1] == pytest.approx(base.origin_xy[1] + 3.0)
        assert np.allclose(
            moved.values[np.isfinite(moved.values)], base.values[np.isfinite(base.values)]
        )

    def test_matches_generating_heightfield(self, featured_terrain):
        # oracle: the raster of a noiseless synthetic survey must reproduce
        # the heightfield it was sampled from
        from bathyslam import SubmapConfig, SurveyPlan, build_submaps, project_se2, simulate_survey

        plan = SurveyPlan(
            swath_count=2, swath_spacing=20.0, line_length=60.0, speed=2.0,
            ping_rate=4.0, beam_count=32, beam_aperture=math.pi / 2, altitude=12.0,
        )
        pings, truth = simulate_survey(featured_terrain, plan)
        cfg = SubmapConfig(max_length=30.0, info_threshold=math.inf, voxel_size=0.5)
        submaps = build_submaps(pings, truth, cfg)
        poses = [project_se2(s.anchor) for s in submaps]
        raster = depth_raster(submaps, poses, cell_size=1.0)
        xs, ys = raster.cell_centers()
        for iy in range(0, raster.values.shape[0], 3):
            for ix in range(0, raster.values.shape[1], 3):
                v = raster.values[iy, ix]
                if not np.isfinite(v):
                    continue
                d = featured_terrain.depth_at(np.array([[xs[ix], ys[iy]]]))[0]
                assert abs(v - d) < 0.25 + 0.35  # voxel/2 plus in-cell slope allowance


class TestRasterIO:
    def test_esri_ascii_round_trip(self, tmp_path):
        a = flat_submap(0, 15.0, seed=1)
        b = flat_submap(1, 16.2, seed=2)
        cmap = consistency_map([a, b], identity_poses(2))
        path = tmp_path / "consistency.asc"
        cmap.raster.write_esri_ascii(path)
        text = path.read_text()
        assert text.startswith("ncols")
        assert "NODATA_value" in text
        loaded = read_esri_ascii(path)
        assert loaded.cell_size == pytest.approx(cmap.raster.cell_size)
        mask = np.isfinite(cmap.raster.values)
        assert np.allclose(loaded.values[mask], cmap.raster.values[mask], atol=1e-6)
        assert not np.any(np.isfinite(loaded.values[~mask]))

    def test_csv_export(self, tmp_path):
        a = flat_submap(0, 15.0, seed=3)
        raster = depth_raster([a], identity_poses(1), cell_size=2.0)
        path = tmp_path / "depth.csv"
        raster.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "x,y,value"
        assert len(lines) > 10
