"""Overlap detection and yaw-constrained plane-to-plane registration.

The registration aligns a source submap against a merged, rigidly linked
target point set by minimizing the plane-to-plane cost

    sum_n  d_n^T (C_target_n + R C_source_n R^T)^-1 d_n / N

over (x, y, yaw) only; z, roll and pitch stay frozen at the source anchor's
navigation values. Per-point covariances C are local-neighborhood
covariances regularized to a plane model (eigenvalues replaced by
(epsilon, 1, 1) in the local surface basis). The inner minimization is a
damped Gauss-Newton with analytic Jacobians; a candidate step is accepted
only if the cost under re-associated correspondences decreases, so the
recorded cost history is non-increasing by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .geometry import Pose2
from .types import GaussianRelativePose, Submap

INFORMATION_FLOOR = 1e-6


@dataclass(frozen=True)
class GicpConfig:
    max_iterations: int = 40
    correspondence_radius: float = 1.0   # meters; default 2 x voxel_size
    plane_epsilon: float = 1e-3          # plane-regularized smallest eigenvalue
    convergence_tol: float = 1e-4        # step norm, meters and radians
    min_overlap_fraction: float = 0.10
    normal_neighbors: int = 12           # neighborhood size for covariances
    max_correspondences: int = 3500      # source points used per iteration

    def validate(self) -> None:
        from .errors import ConfigError

        for name in ("max_iterations", "correspondence_radius", "convergence_tol",
                     "min_overlap_fraction", "normal_neighbors", "max_correspondences"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"gicp config field {name} must be positive")
        if not 0.0 < self.plane_epsilon < 1.0:
            raise ConfigError("plane_epsilon must lie in (0, 1)")


@dataclass(frozen=True)
class OverlapCandidate:
    source_id: int
    target_id: int
    overlap_fraction: float

    def __post_init__(self):
        if self.source_id == self.target_id:
            raise ValueError("a submap cannot overlap itself")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError("overlap_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class RegistrationResult:
    """Outcome of one registration.

    ``transform.mean`` is the pose of the source submap frame expressed in
    the frame the target points were given in (for a pairwise registration
    with the target in its own anchor frame this is the source-to-target
    relative transform). ``transform.information`` is the heuristic
    information matrix; non-converged results carry the floor information.
    """

    transform: GaussianRelativePose
    converged: bool
    final_cost: float
    iterations: int
    cost_history: tuple[float, ...] = field(default_factory=tuple)


def _rect_intersection(a, b) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(w, 0.0) * max(h, 0.0)


def _rect_area(r) -> float:
    return max(r[2] - r[0], 0.0) * max(r[3] - r[1], 0.0)


def detect_overlaps(
    submaps: list[Submap], current_poses: list[Pose2], min_fraction: float
) -> list[OverlapCandidate]:
    """Candidate loop-closure pairs from x-y footprint intersection.

    The fraction is the share of the smaller submap's points that fall in
    the other submap's axis-aligned footprint under the current pose
    estimates; consecutive pairs are excluded (those are odometry edges).
    Relies on surveys overlapping footprint-wise, i.e. lawnmower patterns.
    """
    bounds = []
    world_xy = []
    for sm, pose in zip(submaps, current_poses):
        xy = sm.world_points(pose)[:, :2]
        world_xy.append(xy)
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        bounds.append((lo[0], lo[1], hi[0], hi[1]))

    candidates: list[OverlapCandidate] = []
    n = len(submaps)
    for i in range(n):
        for j in range(i + 1, n):
            if submaps[j].id == submaps[i].id + 1:
                continue  # consecutive submaps form odometry edges instead
            inter = _rect_intersection(bounds[i], bounds[j])
            if inter <= 0.0:
                continue
            area_i, area_j = _rect_area(bounds[i]), _rect_area(bounds[j])
            small, other = (i, j) if area_i <= area_j else (j, i)
            if inter / max(min(area_i, area_j), 1e-12) < min_fraction:
                continue
            xy = world_xy[small]
            ob = bounds[other]
            inside = (
                (xy[:, 0] >= ob[0]) & (xy[:, 0] <= ob[2])
                & (xy[:, 1] >= ob[1]) & (xy[:, 1] <= ob[3])
            )
            fraction = float(inside.mean())
            if fraction >= min_fraction:
                candidates.append(
                    OverlapCandidate(
                        source_id=submaps[j].id,
                        target_id=submaps[i].id,
                        overlap_fraction=fraction,
                    )
                )
    return candidates


def plane_covariances(points: np.ndarray, k: int, epsilon: float) -> np.ndarray:
    """(n, 3, 3) plane-regularized covariances from k-NN neighborhoods."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    k = min(k, n)
    _, idx = cKDTree(pts).query(pts, k=k)
    if k == 1:
        idx = idx[:, None]
    nbrs = pts[idx]
    mu = nbrs.mean(axis=1, keepdims=True)
    centered = nbrs - mu
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    # ascending eigenvalues: smallest direction is the surface normal
    scales = np.array([epsilon, 1.0, 1.0])
    return np.einsum("nij,j,nkj->nik", vecs, scales, vecs)


def _rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


class _PlaneToPlaneProblem:
    """Shared state for one registration: clouds, covariances, kd-tree."""

    def __init__(self, src_pre: np.ndarray, z_offset: float,
                 tgt: np.ndarray, cfg: GicpConfig):
        # an even-stride subsample of the source bounds the per-iteration work
        # without changing the stored cloud
        if src_pre.shape[0] > cfg.max_correspondences:
            stride = np.linspace(0, src_pre.shape[0] - 1, cfg.max_correspondences).astype(int)
            src_pre = src_pre[stride]
        self.src = src_pre           # source points pre-rotated by roll/pitch
        self.z_offset = z_offset
        self.tgt = tgt
        self.cfg = cfg
        self.tree = cKDTree(tgt)
        self.cov_src = plane_covariances(src_pre, cfg.normal_neighbors, cfg.plane_epsilon)
        self.cov_tgt = plane_covariances(tgt, cfg.normal_neighbors, cfg.plane_epsilon)

    def place(self, p: np.ndarray) -> np.ndarray:
        world = self.src @ _rot_z(p[2]).T
        world[:, 0] += p[0]
        world[:, 1] += p[1]
        world[:, 2] += self.z_offset
        return world

    def correspondences(self, p: np.ndarray, radius: float):
        placed = self.place(p)
        dist, idx = self.tree.query(placed, distance_upper_bound=radius)
        mask = np.isfinite(dist)
        return np.nonzero(mask)[0], idx[mask]

    def cost(self, p: np.ndarray, src_idx: np.ndarray, tgt_idx: np.ndarray) -> float:
        if src_idx.size == 0:
            return math.inf
        placed = self.place(p)
        d = self.tgt[tgt_idx] - placed[src_idx]
        R = _rot_z(p[2])
        M = self.cov_tgt[tgt_idx] + np.einsum("ij,njk,lk->nil", R, self.cov_src[src_idx], R)
        wd = np.linalg.solve(M, d[..., None])[..., 0]
        return float(np.einsum("ni,ni->", d, wd) / src_idx.size)

    def normal_equations(self, p: np.ndarray, src_idx: np.ndarray, tgt_idx: np.ndarray):
        placed = self.place(p)
        d = self.tgt[tgt_idx] - placed[src_idx]
        R = _rot_z(p[2])
        dR = _drot_z(p[2])
        M = self.cov_tgt[tgt_idx] + np.einsum("ij,njk,lk->nil", R, self.cov_src[src_idx], R)
        # J[n, i, q] = d(d_n_i)/d(p_q); translation columns are constant
        J = np.zeros((src_idx.size, 3, 3))
        J[:, 0, 0] = -1.0
        J[:, 1, 1] = -1.0
        J[:, :, 2] = -(self.src[src_idx] @ dR.T)
        WJ = np.linalg.solve(M, J)
        Wd = np.linalg.solve(M, d[..., None])[..., 0]
        H = np.einsum("niq,nip->qp", J, WJ)
        g = np.einsum("niq,ni->q", J, Wd)
        return H, g


def _floor_information(info: np.ndarray, floor: float = INFORMATION_FLOOR) -> np.ndarray:
    sym = 0.5 * (info + info.T)
    w, v = np.linalg.eigh(sym)
    return v @ np.diag(np.maximum(w, floor)) @ v.T


def _detrended_z_var(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> float:
    A = np.column_stack([np.ones(x.shape[0]), x, y])
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    return float(np.var(z - A @ coef))


def _local_noise_var(pts: np.ndarray, cell: float = 2.0, min_points: int = 12) -> float:
    """Median detrended depth variance over small x-y cells: a proxy for the
    sensor noise plus within-cell curvature."""
    keys = np.floor(pts[:, :2] / cell).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    variances = []
    for idx in np.nonzero(counts >= min_points)[0]:
        sel = inv == idx
        variances.append(_detrended_z_var(pts[sel, 0], pts[sel, 1], pts[sel, 2]))
    return float(np.median(variances)) if variances else 0.0


def estimate_information(
    source_points: np.ndarray,
    residuals: np.ndarray,
    gain: float = 50.0,
    theta_scale: float = 100.0,
    floor: float = INFORMATION_FLOOR,
) -> np.ndarray:
    """Heuristic information matrix for a converged registration.

    Built from the trace-normalized x-y covariance of the source submap's
    points (so it is invariant to uniform x-y scaling) weighted by the
    terrain relief and deweighted by the residual scatter. Relief is the
    depth variance around the submap's best-fit plane minus the locally
    estimated noise floor, so flat-but-noisy submaps receive the floor
    information and loop closures over featureless seabed cannot overrule
    dead reckoning. Eigenvalues are floored to keep the matrix positive
    definite.
    """
    pts = np.asarray(source_points, dtype=float)
    res = np.asarray(residuals, dtype=float)
    if pts.shape[0] < 4:
        return np.eye(3) * floor
    centered = pts - pts.mean(axis=0)
    cov_xy = centered[:, :2].T @ centered[:, :2] / pts.shape[0]
    trace = float(np.trace(cov_xy))
    if trace <= 0.0:
        return np.eye(3) * floor
    shape_xy = cov_xy / trace

    # relief: depth variance around the best-fit plane (exactly invariant
    # under x-y reparameterization of the same depth samples), less the
    # sensor-noise floor estimated from small-cell detrended variances
    relief_var = _detrended_z_var(centered[:, 0], centered[:, 1], pts[:, 2])
    relief_var = max(relief_var - 1.5 * _local_noise_var(pts), 0.0)

    mean_sq_res = float(np.mean(np.sum(res**2, axis=1))) if res.size else 0.0
    weight = gain * relief_var / (mean_sq_res + 1e-4)

    info = np.zeros((3, 3))
    info[:2, :2] = weight * shape_xy
    info[2, 2] = weight * theta_scale
    return _floor_information(info, floor)


def gicp_register(
    source: Submap,
    target_set: list[Submap],
    init: Pose2,
    cfg: GicpConfig,
    target_poses: list[Pose2] | None = None,
) -> RegistrationResult:
    """Align a source submap against a merged rigid target point set.

    ``target_poses`` places each target submap in the working frame
    (defaults to the planar part of its anchor); ``init`` is the starting
    planar pose of the source frame in that same frame. Never raises on a
    failed alignment: a result with ``converged=False`` is returned and the
    caller decides what to do with it.
    """
    cfg.validate()
    if target_poses is None:
        tgt_world = [t.world_points() for t in target_set]
    else:
        tgt_world = [t.world_points(p) for t, p in zip(target_set, target_poses)]
    tgt = np.vstack(tgt_world)

    # freeze roll/pitch/z at the source anchor's navigation values
    anchor = source.anchor
    r_tilt = Rotation.from_euler("YX", (anchor.pitch, anchor.roll)).as_matrix()
    src_pre = source.points @ r_tilt.T
    problem = _PlaneToPlaneProblem(src_pre, anchor.z, tgt, cfg)

    # coarse-to-fine association: an inflated radius gives the basin to pull
    # in several-meter initial errors, then anneals to the configured gate
    radii = [cfg.correspondence_radius * s for s in (8.0, 4.0, 2.0, 1.0)]

    params = init.as_array()
    history: list[float] = []
    initial_cost = math.inf
    converged = False
    iterations = 0
    final_cost = math.inf

    for radius in radii:
        src_idx, tgt_idx = problem.correspondences(params, radius)
        if src_idx.size < 10:
            continue
        cost = problem.cost(params, src_idx, tgt_idx)
        if not history:
            initial_cost = cost
            history.append(cost)
        at_final_radius = radius == radii[-1]

        while iterations < cfg.max_iterations:
            iterations += 1
            H, g = problem.normal_equations(params, src_idx, tgt_idx)
            try:
                step = np.linalg.solve(H + 1e-12 * np.eye(3), -g)
            except np.linalg.LinAlgError:
                step, *_ = np.linalg.lstsq(H, -g, rcond=None)
            if not np.all(np.isfinite(step)):
                break
            if _step_small(step, cfg.convergence_tol):
                converged = at_final_radius
                break

            accepted = False
            improvement = 0.0
            for halving in range(12):
                trial = params + step / (2.0**halving)
                t_src, t_tgt = problem.correspondences(trial, radius)
                if t_src.size < 10:
                    continue
                trial_cost = problem.cost(trial, t_src, t_tgt)
                if trial_cost <= cost:
                    improvement = cost - trial_cost
                    params, cost = trial, trial_cost
                    src_idx, tgt_idx = t_src, t_tgt
                    history.append(cost)
                    accepted = True
                    if _step_small(step / (2.0**halving), cfg.convergence_tol):
                        converged = at_final_radius
                    break
            if not accepted or improvement <= 1e-4 * max(cost, 1e-12):
                # the re-associated cost cannot improve meaningfully at this
                # radius: a (local) minimum for the phase
                converged = at_final_radius
                break
            if converged:
                break
        final_cost = cost

    if not history:
        return _failed_result(params, math.inf, 0)
    cost = final_cost
    if not converged or cost > initial_cost:
        return _failed_result(params, cost, iterations, tuple(history))

    placed = problem.place(params)
    d = tgt[tgt_idx] - placed[src_idx]
    info = estimate_information(source.points, d)
    transform = GaussianRelativePose(mean=Pose2.from_array(params), information=info)
    return RegistrationResult(
        transform=transform,
        converged=True,
        final_cost=cost,
        iterations=iterations,
        cost_history=tuple(history),
    )


def _step_small(step: np.ndarray, tol: float) -> bool:
    return math.hypot(step[0], step[1]) < tol and abs(step[2]) < tol


def _failed_result(
    params: np.ndarray, cost: float, iterations: int, history: tuple[float, ...] = ()
) -> RegistrationResult:
    transform = GaussianRelativePose(
        mean=Pose2.from_array(params), information=np.eye(3) * INFORMATION_FLOOR
    )
    return RegistrationResult(
        transform=transform,
        converged=False,
        final_cost=cost,
        iterations=iterations,
        cost_history=history,
    )
