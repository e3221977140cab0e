"""Planar pose graph: odometry and loop-closure constraints solved by
sparse Levenberg-Marquardt.

Nodes are the (x, y, theta) components of the submap anchor frames; each
edge is a Gaussian relative-pose measurement z with information Omega. The
edge residual is the standard relative-pose error ``e = h^-1 * z`` (h the
predicted relative transform), whose angular component wraps correctly, and
each edge contributes the negative log-likelihood ``e^T Omega e / 2``. The
gauge freedom is removed by fixing one node per graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import BathySlamError
from .geometry import Pose2, wrap_angle, with_planar
from .types import GaussianRelativePose, Submap

DR = "DR"
LC = "LC"


@dataclass
class GraphNode:
    id: int
    state: Pose2
    fixed: bool = False


@dataclass(frozen=True)
class GraphEdge:
    i: int
    j: int
    kind: str
    measurement: GaussianRelativePose

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("an edge must connect two distinct nodes")
        if self.kind not in (DR, LC):
            raise ValueError(f"unknown edge kind {self.kind!r}")
        if self.kind == DR and self.j != self.i + 1:
            raise ValueError("DR edges must connect consecutive nodes")


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    lambda_init: float = 1e-4
    tol: float = 1e-8
    max_retries: int = 50
    huber_delta: float | None = None   # robust kernel, off by default
    passes: int = 1                    # registration/optimization rounds

    def validate(self) -> None:
        from .errors import ConfigError

        if self.max_iterations <= 0 or self.lambda_init <= 0 or self.tol <= 0:
            raise ConfigError("solver max_iterations, lambda_init and tol must be positive")
        if self.passes < 1:
            raise ConfigError("solver passes must be at least 1")
        if self.huber_delta is not None and self.huber_delta <= 0:
            raise ConfigError("huber_delta must be positive when set")


@dataclass(frozen=True)
class SolverReport:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    gradient_norm: float


def residual(edge: GraphEdge, x_i: Pose2, x_j: Pose2) -> np.ndarray:
    """Relative-pose error of an edge at the given states.

    Zero exactly when ``x_j == compose(x_i, z)``; the translation part is
    expressed in the frame of the predicted relative transform and the
    angular part is wrapped to (-pi, pi].
    """
    z = edge.measurement.mean
    ti = x_i.translation()
    tj = x_j.translation()
    h_theta = x_j.theta - x_i.theta
    rj = _rot2(x_j.theta)
    e_t = _rot2(h_theta).T @ z.translation() - rj.T @ (tj - ti)
    e_theta = wrap_angle(z.theta - h_theta)
    return np.array([e_t[0], e_t[1], e_theta])


def edge_cost(edge: GraphEdge, x_i: Pose2, x_j: Pose2) -> float:
    """Negative log-likelihood contribution ``e^T Omega e / 2`` (always >= 0)."""
    e = residual(edge, x_i, x_j)
    return float(e @ edge.measurement.information @ e) / 2.0


def residual_jacobians(edge: GraphEdge, x_i: Pose2, x_j: Pose2) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (3, 3) Jacobians of the residual w.r.t. x_i and x_j."""
    z_t = edge.measurement.mean.translation()
    dt = x_j.translation() - x_i.translation()
    h_theta = x_j.theta - x_i.theta
    rj_t = _rot2(x_j.theta).T
    dh_t = _drot2(h_theta).T @ z_t

    ji = np.zeros((3, 3))
    ji[:2, :2] = rj_t
    ji[:2, 2] = -dh_t
    ji[2, 2] = 1.0

    jj = np.zeros((3, 3))
    jj[:2, :2] = -rj_t
    jj[:2, 2] = dh_t - _drot2(x_j.theta).T @ dt
    jj[2, 2] = -1.0
    return ji, jj


def _rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _drot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[-s, -c], [c, -s]])


class PoseGraph:
    """Mutable container of nodes and edges; ``optimize`` updates states in place."""

    def __init__(self):
        self.nodes: dict[int, GraphNode] = {}
        self.edges: list[GraphEdge] = []

    def add_node(self, node_id: int, state: Pose2, fixed: bool = False) -> None:
        if node_id in self.nodes:
            raise ValueError(f"node {node_id} already exists")
        self.nodes[node_id] = GraphNode(id=node_id, state=state, fixed=fixed)

    def add_dr_edge(self, i: int, dr_relative: GaussianRelativePose) -> None:
        """Odometry constraint between consecutive nodes i and i+1."""
        if i not in self.nodes or i + 1 not in self.nodes:
            raise ValueError(f"nodes {i} and {i + 1} must exist before adding a DR edge")
        if any(e.kind == DR and e.i == i for e in self.edges):
            raise ValueError(f"duplicate DR edge at node {i}")
        self.edges.append(GraphEdge(i=i, j=i + 1, kind=DR, measurement=dr_relative))

    def add_lc_edge(self, i: int, j: int, reg) -> None:
        """Loop-closure constraint from a converged registration result."""
        if j == i + 1:
            raise ValueError("loop closures must connect non-consecutive nodes")
        if i not in self.nodes or j not in self.nodes:
            raise ValueError(f"nodes {i} and {j} must exist before adding an LC edge")
        if not reg.converged:
            raise ValueError(
                f"registration {i}->{j} rejected: did not converge "
                f"(cost {reg.final_cost:.4g} after {reg.iterations} iterations)"
            )
        self.edges.append(GraphEdge(i=i, j=j, kind=LC, measurement=reg.transform))

    def total_cost(self) -> float:
        return sum(
            edge_cost(e, self.nodes[e.i].state, self.nodes[e.j].state) for e in self.edges
        )

    def states(self) -> list[Pose2]:
        return [self.nodes[k].state for k in sorted(self.nodes)]

    def _connected_components(self) -> list[set[int]]:
        adjacency: dict[int, set[int]] = {k: set() for k in self.nodes}
        for e in self.edges:
            adjacency[e.i].add(e.j)
            adjacency[e.j].add(e.i)
        seen: set[int] = set()
        components = []
        for start in sorted(self.nodes):
            if start in seen:
                continue
            stack = [start]
            comp = set()
            while stack:
                v = stack.pop()
                if v in comp:
                    continue
                comp.add(v)
                stack.extend(adjacency[v] - comp)
            seen |= comp
            components.append(comp)
        return components

    def optimize(self, cfg: SolverConfig | None = None) -> SolverReport:
        """Levenberg-Marquardt on the total edge cost; states updated in place."""
        cfg = cfg or SolverConfig()
        cfg.validate()
        components = self._connected_components()
        if len(components) > 1:
            listing = "; ".join(str(sorted(c)) for c in components)
            raise BathySlamError(f"pose graph is disconnected: components {listing}")
        fixed = [k for k, n in self.nodes.items() if n.fixed]
        if len(fixed) != 1:
            raise BathySlamError(
                f"exactly one fixed gauge node is required, found {len(fixed)}"
            )

        order = sorted(self.nodes)
        slot = {}
        free = []
        for k in order:
            if not self.nodes[k].fixed:
                slot[k] = 3 * len(free)
                free.append(k)
        if not free:
            return SolverReport(self.total_cost(), self.total_cost(), 0, True, 0.0)
        dim = 3 * len(free)

        def edge_states():
            return [(e, self.nodes[e.i].state, self.nodes[e.j].state) for e in self.edges]

        def robust_weight(e, xi, xj) -> float:
            if cfg.huber_delta is None:
                return 1.0
            s = math.sqrt(max(2.0 * edge_cost(e, xi, xj), 0.0))
            return 1.0 if s <= cfg.huber_delta else cfg.huber_delta / s

        def assemble():
            rows, cols, vals = [], [], []
            g = np.zeros(dim)
            for e, xi, xj in edge_states():
                w = robust_weight(e, xi, xj)
                omega = w * e.measurement.information
                r = residual(e, xi, xj)
                ji, jj = residual_jacobians(e, xi, xj)
                blocks = []
                if not self.nodes[e.i].fixed:
                    blocks.append((slot[e.i], ji))
                if not self.nodes[e.j].fixed:
                    blocks.append((slot[e.j], jj))
                for sa, ja in blocks:
                    g[sa:sa + 3] += ja.T @ omega @ r
                    for sb, jb in blocks:
                        h = ja.T @ omega @ jb
                        for a in range(3):
                            for b in range(3):
                                rows.append(sa + a)
                                cols.append(sb + b)
                                vals.append(h[a, b])
            H = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
            return H, g

        def apply_step(delta: np.ndarray) -> dict[int, Pose2]:
            new_states = {}
            for k in free:
                s = self.nodes[k].state
                off = slot[k]
                new_states[k] = Pose2(
                    s.x + delta[off], s.y + delta[off + 1], s.theta + delta[off + 2]
                )
            return new_states

        def cost_with(states: dict[int, Pose2]) -> float:
            total = 0.0
            for e in self.edges:
                xi = states.get(e.i, self.nodes[e.i].state)
                xj = states.get(e.j, self.nodes[e.j].state)
                w = robust_weight(e, xi, xj)
                total += w * edge_cost(e, xi, xj)
            return total

        cost = cost_with({})
        initial_cost = cost
        lam = cfg.lambda_init
        iterations = 0
        converged = False
        grad_norm = math.inf
        identity = scipy.sparse.identity(dim, format="csr")

        for iterations in range(1, cfg.max_iterations + 1):
            H, g = assemble()
            grad_norm = float(np.linalg.norm(g))
            if grad_norm < cfg.tol:
                converged = True
                iterations -= 1
                break
            accepted = False
            failures = 0
            while failures <= cfg.max_retries:
                try:
                    delta = scipy.sparse.linalg.spsolve(H + lam * identity, -g)
                except Exception:
                    delta = None
                if delta is None or not np.all(np.isfinite(delta)):
                    lam *= 10.0
                    failures += 1
                    continue
                trial = apply_step(delta)
                trial_cost = cost_with(trial)
                if trial_cost <= cost:
                    for k, s in trial.items():
                        self.nodes[k].state = s
                    step_norm = float(np.linalg.norm(delta))
                    cost = trial_cost
                    lam = max(lam * 0.1, 1e-12)
                    accepted = True
                    if step_norm < cfg.tol:
                        converged = True
                    break
                lam *= 10.0
                failures += 1
                if lam > 1e14:
                    break
            if not accepted:
                if failures > cfg.max_retries:
                    raise BathySlamError(
                        "pose graph solver failed: normal equations remained "
                        f"singular or non-improving after {cfg.max_retries} retries"
                    )
                converged = True  # damping saturated: local minimum
                break
            if converged:
                break

        return SolverReport(
            initial_cost=initial_cost,
            final_cost=cost,
            iterations=iterations,
            converged=converged,
            gradient_norm=grad_norm,
        )


def update_submaps(submaps: list[Submap], optimized: list[Pose2]) -> list[Submap]:
    """Re-anchor submaps at the optimized planar poses (z, roll and pitch are
    retained from navigation); world point sets follow the new anchors."""
    if len(submaps) != len(optimized):
        raise ValueError(
            f"pose count {len(optimized)} does not match submap count {len(submaps)}"
        )
    updated = []
    for sm, pose in zip(submaps, optimized):
        anchor = with_planar(sm.anchor, pose)
        xy = anchor.transform(sm.points)[:, :2]
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        updated.append(
            replace(sm, anchor=anchor, bounds_xy=(lo[0], lo[1], hi[0], hi[1]))
        )
    return updated


def save_graph(path, graph: PoseGraph) -> None:
    """Text export: one VERTEX_SE2 line per node, one EDGE_SE2 line per edge
    (kind, ids, measurement, upper-triangular information), FIX lines for
    gauge anchors."""
    lines = []
    for k in sorted(graph.nodes):
        n = graph.nodes[k]
        s = n.state
        lines.append(f"VERTEX_SE2 {n.id} {s.x:.12g} {s.y:.12g} {s.theta:.12g}")
        if n.fixed:
            lines.append(f"FIX {n.id}")
    for e in graph.edges:
        z = e.measurement.mean
        o = e.measurement.information
        upper = " ".join(
            f"{o[a, b]:.12g}" for a in range(3) for b in range(a, 3)
        )
        lines.append(
            f"EDGE_SE2 {e.kind} {e.i} {e.j} {z.x:.12g} {z.y:.12g} {z.theta:.12g} {upper}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_graph(path) -> PoseGraph:
    """Parse the text format written by :func:`save_graph`."""
    graph = PoseGraph()
    fixed_ids = []
    edges = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            try:
                if tok[0] == "VERTEX_SE2":
                    graph.add_node(int(tok[1]), Pose2(float(tok[2]), float(tok[3]), float(tok[4])))
                elif tok[0] == "FIX":
                    fixed_ids.append(int(tok[1]))
                elif tok[0] == "EDGE_SE2":
                    kind, i, j = tok[1], int(tok[2]), int(tok[3])
                    z = Pose2(float(tok[4]), float(tok[5]), float(tok[6]))
                    u = [float(v) for v in tok[7:13]]
                    info = np.array(
                        [
                            [u[0], u[1], u[2]],
                            [u[1], u[3], u[4]],
                            [u[2], u[4], u[5]],
                        ]
                    )
                    edges.append(GraphEdge(i=i, j=j, kind=kind,
                                           measurement=GaussianRelativePose(z, info)))
                else:
                    raise ValueError(f"unknown record {tok[0]!r}")
            except (IndexError, ValueError) as exc:
                raise BathySlamError(f"{path}:{lineno}: malformed graph line: {exc}") from exc
    for k in fixed_ids:
        graph.nodes[k].fixed = True
    graph.edges.extend(edges)
    return graph
