import math

import numpy as np
import pytest
from conftest import submap_pair, surface_cloud

from bathyslam import (
    GicpConfig,
    Pose2,
    Pose3,
    Submap,
    compose,
    detect_overlaps,
    estimate_information,
    gicp_register,
    wrap_angle,
)


def rect_submap(sid, x0, y0, w, h, depth=20.0, n=2000, seed=0):
    rng = np.random.default_rng(seed)
    xy = np.column_stack([rng.uniform(x0, x0 + w, n), rng.uniform(y0, y0 + h, n)])
    pts = np.column_stack([xy, np.full(n, depth)])
    return Submap(id=sid, anchor=Pose3.identity(), points=pts, bounds_xy=(x0, y0, x0 + w, y0 + h))


class TestDetectOverlaps:
    def test_disjoint_submaps(self):
        a = rect_submap(0, 0, 0, 10, 10)
        b = rect_submap(2, 100, 100, 10, 10)
        out = detect_overlaps([a, b], [Pose2.identity()] * 2, 0.05)
        assert out == []

    def test_identical_footprints_fraction_one(self):
        a = rect_submap(0, 0, 0, 10, 10, seed=1)
        b = rect_submap(2, 0, 0, 10, 10, seed=1, depth=22.0)
        out = detect_overlaps([a, b], [Pose2.identity()] * 2, 0.05)
        assert len(out) == 1
        assert out[0].overlap_fraction == pytest.approx(1.0)

    def test_thirty_percent_lateral_offset(self):
        # 100 x 20 m swaths offset 14 m laterally: rectangle arithmetic gives
        # intersection 100 x 6 over the smaller footprint 100 x 20 = 0.30
        a = rect_submap(0, 0, 0, 100, 20, n=20000, seed=3)
        b = rect_submap(2, 0, 14, 100, 20, n=20000, seed=4)
        out = detect_overlaps([a, b], [Pose2.identity()] * 2, 0.05)
        assert len(out) == 1
        assert out[0].overlap_fraction == pytest.approx(0.30, abs=0.02)

    def test_consecutive_pairs_excluded(self):
        a = rect_submap(0, 0, 0, 10, 10, seed=1)
        b = rect_submap(1, 0, 0, 10, 10, seed=2)
        out = detect_overlaps([a, b], [Pose2.identity()] * 2, 0.05)
        assert out == []

    def test_pose_shift_creates_overlap(self):
        a = rect_submap(0, 0, 0, 10, 10, seed=1)
        b = rect_submap(2, 30, 0, 10, 10, seed=2)
        none = detect_overlaps([a, b], [Pose2.identity()] * 2, 0.05)
        assert none == []
        moved = detect_overlaps([a, b], [Pose2.identity(), Pose2(-30, 0, 0)], 0.05)
        assert len(moved) == 1
        assert moved[0].source_id == 2 and moved[0].target_id == 0


class TestGicpRegister:
    def test_self_registration_identity(self, featured_terrain):
        source, _ = submap_pair(featured_terrain, Pose2.identity(), n=3000, seed=5)
        target = Submap(id=0, anchor=Pose3.identity(), points=source.points,
                        bounds_xy=source.bounds_xy)
        res = gicp_register(source, [target], Pose2.identity(), GicpConfig())
        assert res.converged
        assert res.final_cost == pytest.approx(0.0, abs=1e-9)
        m = res.transform.mean
        assert (m.x, m.y, m.theta) == (0.0, 0.0, 0.0)

    def test_known_transform_recovery(self, featured_terrain):
        true = Pose2(2.0, -1.0, 0.05)
        source, target = submap_pair(featured_terrain, true, n=6000, seed=0)
        res = gicp_register(source, [target], Pose2.identity(), GicpConfig())
        assert res.converged
        m = res.transform.mean
        assert abs(m.x - true.x) < 0.01
        assert abs(m.y - true.y) < 0.01
        assert abs(wrap_angle(m.theta - true.theta)) < 0.001

    def test_flat_pair_converges_with_floor_information(self):
        rng = np.random.default_rng(9)
        src_pts = np.column_stack(
            [rng.uniform(0, 40, (4000, 2)), np.full(4000, 20.0)]
        )
        tgt_pts = np.column_stack(
            [rng.uniform(0, 40, (4000, 2)), np.full(4000, 20.0)]
        )
        source = Submap(id=1, anchor=Pose3.identity(), points=src_pts, bounds_xy=(0, 0, 40, 40))
        target = Submap(id=0, anchor=Pose3.identity(), points=tgt_pts, bounds_xy=(0, 0, 40, 40))
        res = gicp_register(source, [target], Pose2(1.0, 0.5, 0.0), GicpConfig())
        assert res.converged
        info = res.transform.information
        w = np.linalg.eigvalsh(info)
        assert w[0] == pytest.approx(1e-6, rel=1e-3)  # unconstrained directions floored
        assert w[-1] < 1e-3   # flat seabed: everything near the floor

    def test_cost_history_non_increasing(self, featured_terrain):
        source, target = submap_pair(featured_terrain, Pose2(1.5, 1.0, -0.03), n=4000, seed=2)
        res = gicp_register(source, [target], Pose2.identity(), GicpConfig())
        assert res.converged
        hist = np.array(res.cost_history)
        assert np.all(np.diff(hist) <= 1e-12)

    def test_output_is_planar(self, featured_terrain):
        source, target = submap_pair(featured_terrain, Pose2(0.5, 0.2, 0.01), n=2500, seed=3)
        res = gicp_register(source, [target], Pose2.identity(), GicpConfig())
        assert isinstance(res.transform.mean, Pose2)  # z, roll, pitch frozen at zero

    def test_symmetry_forward_backward(self, featured_terrain):
        true = Pose2(1.2, -0.8, 0.04)
        source, target = submap_pair(featured_terrain, true, n=5000, seed=4)
        fwd = gicp_register(source, [target], Pose2.identity(), GicpConfig())
        bwd = gicp_register(target, [source], Pose2.identity(), GicpConfig(),
                            target_poses=[Pose2.identity()])
        assert fwd.converged and bwd.converged
        roundtrip = compose(fwd.transform.mean, bwd.transform.mean)
        assert math.hypot(roundtrip.x, roundtrip.y) < 0.05
        assert abs(roundtrip.theta) < 0.005

    def test_cost_at_truth_below_cost_at_init(self, featured_terrain):
        from bathyslam.registration import _PlaneToPlaneProblem

        true = Pose2(2.0, 1.5, 0.05)
        source, target = submap_pair(featured_terrain, true, n=4000, seed=6)
        cfg = GicpConfig()
        problem = _PlaneToPlaneProblem(source.points, 0.0, target.points, cfg)
        init = Pose2.identity().as_array()
        si, ti = problem.correspondences(init, cfg.correspondence_radius)
        cost_init = problem.cost(init, si, ti)
        si2, ti2 = problem.correspondences(true.as_array(), cfg.correspondence_radius)
        cost_true = problem.cost(true.as_array(), si2, ti2)
        assert cost_true <= cost_init

    def test_no_correspondences_is_nonconverged(self, featured_terrain):
        source, target = submap_pair(featured_terrain, Pose2.identity(), n=1000, seed=8)
        res = gicp_register(source, [target], Pose2(500.0, 500.0, 0.0), GicpConfig())
        assert not res.converged

    def test_multi_target_merge(self, featured_terrain):
        true = Pose2(1.0, -0.5, 0.02)
        rng = np.random.default_rng(11)
        left = surface_cloud(featured_terrain, rng, 3000, (30, 30, 25, 40))
        right = surface_cloud(featured_terrain, rng, 3000, (55, 30, 25, 40))
        t_left = Submap(id=0, anchor=Pose3.identity(), points=left, bounds_xy=(0, 0, 1, 1))
        t_right = Submap(id=1, anchor=Pose3.identity(), points=right, bounds_xy=(0, 0, 1, 1))
        src_world = surface_cloud(featured_terrain, rng, 5000, (30, 30, 50, 40))
        lifted = Pose3(true.x, true.y, 0, 0, 0, true.theta)
        source = Submap(id=3, anchor=Pose3.identity(),
                        points=lifted.inverse_transform(src_world), bounds_xy=(0, 0, 1, 1))
        res = gicp_register(source, [t_left, t_right], Pose2.identity(), GicpConfig())
        assert res.converged
        m = res.transform.mean
        assert abs(m.x - true.x) < 0.02 and abs(m.y - true.y) < 0.02


class TestEstimateInformation:
    def _hilly_points(self, seed=0, n=6000):
        rng = np.random.default_rng(seed)
        xy = rng.uniform(-20, 20, size=(n, 2))
        z = 20.0 - 2.5 * np.exp(-(xy**2).sum(axis=1) / (2 * 6.0**2)) \
            + 0.5 * np.sin(xy[:, 0] / 3.0)
        return np.column_stack([xy, z])

    def test_feature_rich_well_conditioned(self):
        pts = self._hilly_points()
        residuals = np.random.default_rng(1).normal(0, 0.05, size=(4000, 3))
        info = estimate_information(pts, residuals)
        w = np.linalg.eigvalsh(info)
        assert w[0] > 1e-6
        assert w[-1] / w[0] < 1e3

    def test_flat_ribbon_floored(self):
        rng = np.random.default_rng(2)
        pts = np.column_stack([
            rng.uniform(0, 100, 5000),       # long in x
            rng.uniform(0, 5, 5000),         # narrow in y
            np.full(5000, 15.0),             # perfectly flat
        ])
        residuals = rng.normal(0, 0.01, size=(3000, 3))
        info = estimate_information(pts, residuals)
        assert info[0, 0] == pytest.approx(1e-6, rel=1e-6)

    def test_xy_scaling_invariance(self):
        pts = self._hilly_points(seed=3)
        residuals = np.random.default_rng(4).normal(0, 0.05, size=(4000, 3))
        info_a = estimate_information(pts, residuals)
        scaled = pts.copy()
        scaled[:, :2] *= 2.0
        info_b = estimate_information(scaled, residuals)
        assert np.allclose(info_a, info_b, rtol=0.01)

    def test_positive_definite_always(self):
        rng = np.random.default_rng(5)
        for n in (4, 10, 100):
            pts = rng.normal(size=(n, 3))
            info = estimate_information(pts, rng.normal(size=(n, 3)))
            np.linalg.cholesky(info)  # must not raise
