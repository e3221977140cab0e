import math

import numpy as np
import pytest
from scipy.optimize import least_squares

from bathyslam import (
    BathySlamError,
    GaussianRelativePose,
    Pose2,
    Pose3,
    PoseGraph,
    SolverConfig,
    Submap,
    compose,
    edge_cost,
    load_graph,
    relative,
    residual,
    residual_jacobians,
    save_graph,
    update_submaps,
    wrap_angle,
)
from bathyslam.pose_graph import DR, LC, GraphEdge
from bathyslam.registration import RegistrationResult


def make_edge(z, info=None, kind=LC, i=0, j=2):
    info = np.eye(3) if info is None else info
    return GraphEdge(i=i, j=j, kind=kind, measurement=GaussianRelativePose(Pose2(*z), info))


def reg_result(mean, info=None, converged=True):
    transform = GaussianRelativePose(Pose2(*mean), np.eye(3) if info is None else info)
    return RegistrationResult(transform=transform, converged=converged,
                              final_cost=0.0, iterations=1)


# independent reimplementation of the relative-pose error, used as the
# oracle for the solver tests below
def v2t(p):
    c, s = math.cos(p[2]), math.sin(p[2])
    return np.array([[c, -s, p[0]], [s, c, p[1]], [0.0, 0.0, 1.0]])


def t2v(T):
    return np.array([T[0, 2], T[1, 2], math.atan2(T[1, 0], T[0, 0])])


def oracle_residual(z, xi, xj):
    h = np.linalg.inv(v2t(xi)) @ v2t(xj)
    return t2v(np.linalg.inv(h) @ v2t(z))


class TestResidual:
    def test_zero_when_consistent(self):
        z = Pose2(1.0, 0.5, 0.3)
        xi = Pose2(2.0, -1.0, 0.7)
        xj = compose(xi, z)
        e = residual(make_edge((z.x, z.y, z.theta)), xi, xj)
        assert np.allclose(e, 0.0, atol=1e-12)

    def test_zero_for_identity_everything(self):
        e = residual(make_edge((0, 0, 0)), Pose2.identity(), Pose2.identity())
        assert np.allclose(e, 0.0)

    def test_direct_substitution(self):
        # measurement (1,0,0) against identical states: e = (1,0,0)
        e = residual(make_edge((1.0, 0, 0)), Pose2.identity(), Pose2.identity())
        assert np.allclose(e, [1.0, 0.0, 0.0])

    def test_matches_oracle_on_random_inputs(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            z = rng.uniform(-2, 2, 3)
            xi = rng.uniform(-5, 5, 3)
            xj = rng.uniform(-5, 5, 3)
            mine = residual(make_edge(z), Pose2(*xi), Pose2(*xj))
            want = oracle_residual(z, xi, xj)
            assert np.allclose(mine[:2], want[:2], atol=1e-12)
            assert abs(wrap_angle(mine[2] - want[2])) < 1e-12

    def test_angular_wrap(self):
        e = residual(make_edge((0, 0, 3.0)), Pose2(0, 0, -3.0), Pose2.identity())
        assert -math.pi < e[2] <= math.pi


class TestEdgeCost:
    def test_zero_residual_zero_cost(self):
        z = Pose2(1.0, 0.5, 0.3)
        xi = Pose2.identity()
        assert edge_cost(make_edge((z.x, z.y, z.theta)), xi, compose(xi, z)) == 0.0

    def test_unit_residual_half_cost(self):
        c = edge_cost(make_edge((1.0, 0, 0)), Pose2.identity(), Pose2.identity())
        assert c == pytest.approx(0.5)

    def test_doubling_information_doubles_cost(self):
        e1 = make_edge((0.7, -0.2, 0.1), np.eye(3))
        e2 = make_edge((0.7, -0.2, 0.1), 2 * np.eye(3))
        xi, xj = Pose2.identity(), Pose2(0.3, 0.3, 0.0)
        assert edge_cost(e2, xi, xj) == pytest.approx(2 * edge_cost(e1, xi, xj))


class TestJacobians:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(100):
            edge = make_edge(rng.uniform(-3, 3, 3), np.diag(rng.uniform(0.5, 2, 3)))
            xi = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-2.5, 2.5))
            xj = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-2.5, 2.5))
            ji, jj = residual_jacobians(edge, xi, xj)
            for k in range(3):
                dp = np.zeros(3)
                dp[k] = h
                fd_i = (
                    residual(edge, Pose2(*(xi.as_array() + dp)), xj)
                    - residual(edge, Pose2(*(xi.as_array() - dp)), xj)
                ) / (2 * h)
                fd_j = (
                    residual(edge, xi, Pose2(*(xj.as_array() + dp)))
                    - residual(edge, xi, Pose2(*(xj.as_array() - dp)))
                ) / (2 * h)
                scale = 1.0 + np.abs(fd_i) + np.abs(fd_j)
                assert np.all(np.abs(ji[:, k] - fd_i) / scale < 1e-5)
                assert np.all(np.abs(jj[:, k] - fd_j) / scale < 1e-5)


def chain_graph(n, step=1.0, info=None):
    g = PoseGraph()
    for k in range(n):
        g.add_node(k, Pose2(k * step, 0.0, 0.0), fixed=(k == 0))
    for k in range(n - 1):
        g.add_dr_edge(k, GaussianRelativePose(Pose2(step, 0, 0),
                                              np.eye(3) if info is None else info))
    return g


class TestGraphConstruction:
    def test_chain_has_n_minus_one_dr_edges(self):
        g = chain_graph(7)
        assert len(g.edges) == 6
        assert all(e.kind == DR for e in g.edges)

    def test_zero_noise_chain_zero_residuals(self):
        g = chain_graph(5)
        for e in g.edges:
            assert np.allclose(residual(e, g.nodes[e.i].state, g.nodes[e.j].state), 0.0)

    def test_duplicate_dr_edge_rejected(self):
        g = chain_graph(3)
        with pytest.raises(ValueError, match="duplicate"):
            g.add_dr_edge(0, GaussianRelativePose(Pose2(1, 0, 0)))

    def test_lc_edge_requires_convergence(self):
        g = chain_graph(4)
        with pytest.raises(ValueError, match="did not converge"):
            g.add_lc_edge(0, 2, reg_result((2, 0, 0), converged=False))
        g.add_lc_edge(0, 2, reg_result((2, 0, 0)))
        assert g.edges[-1].kind == LC

    def test_lc_edge_rejects_consecutive(self):
        g = chain_graph(3)
        with pytest.raises(ValueError, match="non-consecutive"):
            g.add_lc_edge(0, 1, reg_result((1, 0, 0)))

    def test_lc_zero_residual_at_true_relative(self):
        g = chain_graph(4)
        z = relative(g.nodes[0].state, g.nodes[3].state)
        g.add_lc_edge(0, 3, reg_result((z.x, z.y, z.theta)))
        e = g.edges[-1]
        assert np.allclose(residual(e, g.nodes[0].state, g.nodes[3].state), 0.0, atol=1e-12)


class TestOptimize:
    def test_dr_only_chain_stays_at_init(self):
        g = chain_graph(6)
        init = [n.state for n in g.nodes.values()]
        report = g.optimize(SolverConfig())
        assert report.converged
        assert report.final_cost == pytest.approx(0.0, abs=1e-18)
        for before, node in zip(init, g.nodes.values()):
            assert np.allclose(before.as_array(), node.state.as_array(), atol=1e-12)

    def test_three_node_fixture_matches_oracle(self):
        # DR chain puts node 2 at (2, 0, 0); an LC edge insists the relative
        # transform from node 0 is (2, 0.6, 0); all information identity.
        # Frozen expected values computed with an independent implementation
        # of the residual minimized by scipy.optimize.least_squares.
        g = chain_graph(3)
        g.add_lc_edge(0, 2, reg_result((2.0, 0.6, 0.0)))
        report = g.optimize(SolverConfig(tol=1e-14, max_iterations=200))
        assert report.converged
        expected_x1 = np.array([1.001959692731165, 0.163908153628909, 0.108488225488908])
        expected_x2 = np.array([1.998040307378269, 0.436091846768505, 0.054244112123358])
        assert np.allclose(g.nodes[1].state.as_array(), expected_x1, atol=1e-8)
        assert np.allclose(g.nodes[2].state.as_array(), expected_x2, atol=1e-8)
        assert report.final_cost == pytest.approx(0.04913185623986032, abs=1e-10)

        # cross-check against the live oracle as well
        def packed(v):
            states = [np.zeros(3), v[0:3], v[3:6]]
            out = []
            for e in g.edges:
                z = e.measurement.mean.as_array()
                out.append(oracle_residual(z, states[e.i], states[e.j]))
            return np.concatenate(out)

        sol = least_squares(packed, np.array([1.0, 0, 0, 2.0, 0, 0]),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, method="lm")
        assert np.allclose(g.nodes[1].state.as_array(), sol.x[0:3], atol=1e-8)
        assert np.allclose(g.nodes[2].state.as_array(), sol.x[3:6], atol=1e-8)

    def test_two_node_grid_search_oracle(self):
        # two conflicting constraints on one free node; a fine grid search
        # must not find a better state than the optimizer's minimum
        g = PoseGraph()
        g.add_node(0, Pose2.identity(), fixed=True)
        g.add_node(1, Pose2(1.0, 0.0, 0.0))
        g.add_dr_edge(0, GaussianRelativePose(Pose2(1.0, 0.0, 0.0)))
        g.edges.append(make_edge((1.2, 0.4, 0.3), kind=LC, i=0, j=1))
        report = g.optimize(SolverConfig(tol=1e-14))
        assert report.converged
        sol = g.nodes[1].state.as_array()

        xs = np.linspace(sol[0] - 0.5, sol[0] + 0.5, 41)
        ys = np.linspace(sol[1] - 0.5, sol[1] + 0.5, 41)
        ths = np.linspace(sol[2] - 0.5, sol[2] + 0.5, 41)
        best = None
        for x in xs:
            for y in ys:
                for t in ths:
                    s = Pose2(x, y, t)
                    c = sum(edge_cost(e, g.nodes[0].state, s) for e in g.edges)
                    if best is None or c < best[0]:
                        best = (c, (x, y, t))
        assert report.final_cost <= best[0] + 1e-12
        assert np.allclose(best[1], sol, atol=0.5 / 40 * 2)

    def test_gauge_invariance(self):
        def build():
            g = chain_graph(4)
            g.add_lc_edge(0, 2, reg_result((2.0, 0.5, 0.1)))
            g.add_lc_edge(1, 3, reg_result((2.0, -0.3, -0.05)))
            return g

        base = build()
        base.optimize(SolverConfig(tol=1e-13))
        base_states = [n.state for n in base.nodes.values()]

        shift = Pose2(5.0, -3.0, 0.8)
        moved = build()
        for node in moved.nodes.values():
            node.state = compose(shift, node.state)
        moved.optimize(SolverConfig(tol=1e-13))
        for b, node in zip(base_states, moved.nodes.values()):
            want = compose(shift, b)
            got = node.state
            assert math.hypot(got.x - want.x, got.y - want.y) < 1e-6
            assert abs(wrap_angle(got.theta - want.theta)) < 1e-6

    def test_cost_non_increasing_and_reported(self):
        g = chain_graph(5)
        g.add_lc_edge(0, 3, reg_result((3.0, 0.8, 0.0)))
        report = g.optimize(SolverConfig())
        assert report.final_cost <= report.initial_cost
        assert report.iterations >= 1

    def test_disconnected_graph_rejected(self):
        g = PoseGraph()
        for k in range(4):
            g.add_node(k, Pose2(k, 0, 0), fixed=(k == 0))
        g.add_dr_edge(0, GaussianRelativePose(Pose2(1, 0, 0)))
        # nodes 2, 3 disconnected from 0, 1
        g.add_dr_edge(2, GaussianRelativePose(Pose2(1, 0, 0)))
        with pytest.raises(BathySlamError, match="disconnected"):
            g.optimize()

    def test_gauge_node_required(self):
        g = PoseGraph()
        g.add_node(0, Pose2.identity())
        g.add_node(1, Pose2(1, 0, 0))
        g.add_dr_edge(0, GaussianRelativePose(Pose2(1, 0, 0)))
        with pytest.raises(BathySlamError, match="fixed"):
            g.optimize()

    def test_huber_downweights_outlier_edge(self):
        def build(huber):
            g = chain_graph(4)
            g.add_lc_edge(0, 2, reg_result((20.0, 0.0, 0.0)))  # gross outlier
            cfg = SolverConfig(huber_delta=huber)
            g.optimize(cfg)
            return g.nodes[2].state

        robust = build(1.0)
        plain = build(None)
        # the robust solution stays closer to the odometry chain at (2, 0)
        assert abs(robust.x - 2.0) < abs(plain.x - 2.0)


class TestUpdateSubmaps:
    def _submap(self, seed=0):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-5, 5, size=(200, 3))
        anchor = Pose3(1.0, 2.0, 12.0, 0.02, -0.01, 0.4)
        return Submap(id=0, anchor=anchor, points=pts, bounds_xy=(0, 0, 1, 1))

    def test_identity_update_keeps_map(self):
        sm = self._submap()
        out = update_submaps([sm], [Pose2(sm.anchor.x, sm.anchor.y, sm.anchor.yaw)])
        assert np.allclose(out[0].world_points(), sm.world_points(), atol=1e-12)

    def test_rigid_shift_equivariance(self):
        sm = self._submap()
        shifted = update_submaps([sm], [Pose2(sm.anchor.x + 3.0, sm.anchor.y - 2.0, sm.anchor.yaw)])
        delta = shifted[0].world_points() - sm.world_points()
        assert np.allclose(delta[:, 0], 3.0, atol=1e-12)
        assert np.allclose(delta[:, 1], -2.0, atol=1e-12)
        assert np.allclose(delta[:, 2], 0.0, atol=1e-12)

    def test_z_roll_pitch_retained(self):
        sm = self._submap()
        out = update_submaps([sm], [Pose2(9.0, 9.0, 0.0)])
        a = out[0].anchor
        assert (a.z, a.roll, a.pitch) == (sm.anchor.z, sm.anchor.roll, sm.anchor.pitch)

    def test_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="count"):
            update_submaps([self._submap()], [])


class TestGraphIO:
    def test_round_trip(self, tmp_path):
        g = chain_graph(4, info=np.diag([2.0, 2.0, 5.0]))
        g.add_lc_edge(0, 2, reg_result((2.0, 0.4, 0.1), info=np.diag([1.0, 2.0, 3.0])))
        path = tmp_path / "graph.txt"
        save_graph(path, g)
        loaded = load_graph(path)
        assert sorted(loaded.nodes) == sorted(g.nodes)
        assert loaded.nodes[0].fixed and not loaded.nodes[1].fixed
        assert len(loaded.edges) == len(g.edges)
        for a, b in zip(g.edges, loaded.edges):
            assert (a.i, a.j, a.kind) == (b.i, b.j, b.kind)
            assert np.allclose(a.measurement.mean.as_array(), b.measurement.mean.as_array())
            assert np.allclose(a.measurement.information, b.measurement.information)

    def test_malformed_line_reports_location(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("VERTEX_SE2 0 0 0 0\nEDGE_SE2 DR 0\n")
        with pytest.raises(BathySlamError, match="bad.txt:2"):
            load_graph(path)
