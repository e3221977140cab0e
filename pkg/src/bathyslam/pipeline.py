"""End-to-end orchestration: survey generation, the two-level SLAM run
(local registration then global graph optimization) and evaluation outputs.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .consistency import ConsistencyMap, consistency_map, depth_raster
from .geometry import Pose2, Pose3, compose, project_se2, relative
from .pose_graph import (
    PoseGraph,
    SolverConfig,
    SolverReport,
    save_graph,
    update_submaps,
)
from .registration import (
    GaussianRelativePose,
    OverlapCandidate,
    RegistrationResult,
    detect_overlaps,
    gicp_register,
)
from .submaps import build_submaps
from .survey_io import Survey, save_submaps, save_survey
from .survey_sim import (
    add_beam_noise,
    corrupt_navigation,
    generate_terrain,
    simulate_survey,
    submap_boundaries_by_length,
)
from .types import Submap

log = logging.getLogger(__name__)

CONSISTENCY_DEFINITION = (
    "RMS over covered cells of the pairwise differences between per-submap "
    "mean depths (cell-based, not point-based)"
)

# information floors keep a zero-noise odometry chain solvable
_MIN_SIGMA_XY = 1e-3
_MIN_SIGMA_THETA = 1e-4


@dataclass(frozen=True)
class TrajectoryErrors:
    dr_rmse: float
    optimized_rmse: float


@dataclass(frozen=True)
class RunReport:
    initial_rms: float
    optimized_rms: float
    initial_covered_cells: int
    optimized_covered_cells: int
    submap_count: int
    dr_edge_count: int
    lc_edge_count: int
    solver: SolverReport
    timings: dict[str, float]
    trajectory: TrajectoryErrors | None
    consistency_definition: str = CONSISTENCY_DEFINITION

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and math.isnan(v):
                return None
            return v

        out = dataclasses.asdict(self)
        out["initial_rms"] = clean(self.initial_rms)
        out["optimized_rms"] = clean(self.optimized_rms)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def run_simulate(cfg: PipelineConfig) -> Survey:
    """Generate a drift-corrupted synthetic survey per the configuration."""
    cfg.validate()
    terrain = generate_terrain(cfg.terrain)
    pings, truth = simulate_survey(terrain, cfg.survey)
    if not pings:
        from .errors import ConfigError

        raise ConfigError("the planned survey produced no pings")
    boundaries = submap_boundaries_by_length(truth, cfg.submap.max_length)
    dr = corrupt_navigation(truth, boundaries, cfg.drift)
    pings = [
        dataclasses.replace(p, sensor_pose=d) for p, d in zip(pings, dr)
    ]
    pings = add_beam_noise(pings, cfg.noise.sigma_range, cfg.noise.outlier_rate, cfg.noise.seed)
    return Survey(pings=pings, dr_poses=dr, truth_poses=truth, boundaries=boundaries)


@dataclass
class SlamResult:
    report: RunReport
    submaps: list[Submap]
    optimized_poses: list[Pose2]
    graph: PoseGraph
    initial: ConsistencyMap
    optimized: ConsistencyMap
    registrations: list[tuple[int, int, RegistrationResult]]


def _dr_information(anchor_a: Pose3, anchor_b: Pose3, cfg: PipelineConfig) -> np.ndarray:
    """Odometry edge information from the drift model, scaled by the
    along-track interval length relative to the nominal submap length."""
    sigma_xy = max(cfg.drift.sigma_xy, _MIN_SIGMA_XY)
    sigma_theta = max(cfg.drift.sigma_theta, _MIN_SIGMA_THETA)
    length = math.hypot(anchor_b.x - anchor_a.x, anchor_b.y - anchor_a.y)
    scale = max(length / cfg.submap.max_length, 0.1)
    cov = np.diag([sigma_xy**2 * scale, sigma_xy**2 * scale, sigma_theta**2 * scale])
    return np.linalg.inv(cov)


def _register_groups(
    submaps: list[Submap],
    poses: list[Pose2],
    candidates: list[OverlapCandidate],
    cfg: PipelineConfig,
) -> list[tuple[int, int, RegistrationResult]]:
    """Run one registration per source submap against the merged set of its
    overlapping targets, then emit one pairwise result per candidate."""
    by_id = {sm.id: (sm, pose) for sm, pose in zip(submaps, poses)}
    groups: dict[int, list[int]] = {}
    for c in candidates:
        groups.setdefault(c.source_id, []).append(c.target_id)

    def run(source_id: int, target_ids: list[int]):
        source, init = by_id[source_id]
        targets = [by_id[t][0] for t in sorted(target_ids)]
        target_poses = [by_id[t][1] for t in sorted(target_ids)]
        return gicp_register(source, targets, init, cfg.gicp, target_poses)

    ordered = sorted(groups.items())
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda kv: run(*kv), ordered))
    else:
        results = [run(*kv) for kv in ordered]

    pairwise: list[tuple[int, int, RegistrationResult]] = []
    for (source_id, target_ids), reg in zip(ordered, results):
        if not reg.converged:
            log.warning("registration of submap %d did not converge; dropped", source_id)
            continue
        aligned = reg.transform.mean
        for target_id in sorted(target_ids):
            measurement = GaussianRelativePose(
                mean=relative(by_id[target_id][1], aligned),
                information=reg.transform.information,
            )
            pairwise.append(
                (target_id, source_id, dataclasses.replace(reg, transform=measurement))
            )
    return pairwise


def run_slam(survey: Survey, cfg: PipelineConfig, out_dir=None) -> SlamResult:
    """Two-level SLAM on a survey: submap registration then pose-graph MAP.

    Writes rasters, trajectory, graph and report artifacts when ``out_dir``
    is given. With no detected overlaps the run completes with a warning and
    the optimized solution equals dead reckoning.
    """
    cfg.validate()
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    submaps = build_submaps(
        survey.pings, survey.dr_poses, cfg.submap, boundaries=survey.boundaries
    )
    timings["build_submaps"] = time.perf_counter() - t0
    log.info("built %d submaps from %d pings", len(submaps), len(survey.pings))

    dr_poses_se2 = [project_se2(s.anchor) for s in submaps]

    t0 = time.perf_counter()
    initial = consistency_map(submaps, dr_poses_se2, cfg.consistency)
    timings["initial_consistency"] = time.perf_counter() - t0

    graph = PoseGraph()
    for s, p in zip(submaps, dr_poses_se2):
        graph.add_node(s.id, p, fixed=(s.id == 0))
    for i in range(len(submaps) - 1):
        measurement = GaussianRelativePose(
            mean=relative(dr_poses_se2[i], dr_poses_se2[i + 1]),
            information=_dr_information(submaps[i].anchor, submaps[i + 1].anchor, cfg),
        )
        graph.add_dr_edge(i, measurement)

    solver_cfg: SolverConfig = cfg.solver
    current = list(dr_poses_se2)
    registrations: list[tuple[int, int, RegistrationResult]] = []
    solver_report = SolverReport(0.0, 0.0, 0, True, 0.0)
    timings["registration"] = 0.0
    timings["optimize"] = 0.0

    for pass_idx in range(solver_cfg.passes):
        t0 = time.perf_counter()
        candidates = detect_overlaps(submaps, current, cfg.gicp.min_overlap_fraction)
        pairwise = _register_groups(submaps, current, candidates, cfg)
        timings["registration"] += time.perf_counter() - t0
        if not candidates:
            log.warning("no overlapping submap pairs detected; solution follows dead reckoning")

        graph.edges = [e for e in graph.edges if e.kind != "LC"]
        for target_id, source_id, reg in pairwise:
            graph.add_lc_edge(target_id, source_id, reg)
        registrations = pairwise

        t0 = time.perf_counter()
        solver_report = graph.optimize(solver_cfg)
        timings["optimize"] += time.perf_counter() - t0
        current = [graph.nodes[s.id].state for s in submaps]
        log.info(
            "pass %d: %d LC edges, cost %.4g -> %.4g",
            pass_idx + 1, len(pairwise), solver_report.initial_cost, solver_report.final_cost,
        )

    optimized_submaps = update_submaps(submaps, current)

    t0 = time.perf_counter()
    optimized = consistency_map(optimized_submaps, current, cfg.consistency)
    timings["optimized_consistency"] = time.perf_counter() - t0

    trajectory = None
    if survey.truth_poses is not None:
        truth_anchor = [survey.truth_poses[(s + e - 1) // 2] for s, e in
                        (sm.ping_range for sm in submaps)]
        dr_err = [
            math.hypot(p.x - t.x, p.y - t.y) for p, t in zip(dr_poses_se2, truth_anchor)
        ]
        opt_err = [
            math.hypot(p.x - t.x, p.y - t.y) for p, t in zip(current, truth_anchor)
        ]
        trajectory = TrajectoryErrors(
            dr_rmse=float(np.sqrt(np.mean(np.square(dr_err)))),
            optimized_rmse=float(np.sqrt(np.mean(np.square(opt_err)))),
        )

    report = RunReport(
        initial_rms=initial.rms,
        optimized_rms=optimized.rms,
        initial_covered_cells=initial.covered_cells,
        optimized_covered_cells=optimized.covered_cells,
        submap_count=len(submaps),
        dr_edge_count=len(submaps) - 1,
        lc_edge_count=len(registrations),
        solver=solver_report,
        timings=timings,
        trajectory=trajectory,
    )
    result = SlamResult(
        report=report,
        submaps=optimized_submaps,
        optimized_poses=current,
        graph=graph,
        initial=initial,
        optimized=optimized,
        registrations=registrations,
    )
    if out_dir is not None:
        _write_artifacts(Path(out_dir), survey, cfg, submaps, result)
    return result


def _corrected_survey(survey: Survey, submaps: list[Submap], poses: list[Pose2]) -> Survey:
    """Survey with per-ping poses rigidly re-anchored at the optimized
    submap poses (relative poses within a submap are preserved)."""
    new_dr = list(survey.dr_poses)
    boundaries = []
    for sm, pose in zip(submaps, poses):
        s, e = sm.ping_range
        if s > 0:
            boundaries.append(s)
        anchor_new = sm.placed_anchor(pose)
        anchor_old = sm.anchor
        for k in range(s, e):
            new_dr[k] = compose(anchor_new, relative(anchor_old, survey.dr_poses[k]))
    pings = [dataclasses.replace(p, sensor_pose=d) for p, d in zip(survey.pings, new_dr)]
    return Survey(
        pings=pings,
        dr_poses=new_dr,
        truth_poses=survey.truth_poses,
        boundaries=boundaries,
    )


def _write_artifacts(
    out_dir: Path,
    survey: Survey,
    cfg: PipelineConfig,
    dr_submaps: list[Submap],
    result: SlamResult,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    dr_poses_se2 = [project_se2(s.anchor) for s in dr_submaps]

    depth_raster(dr_submaps, dr_poses_se2, cfg.consistency.cell_size).write_esri_ascii(
        out_dir / "depth_initial.asc"
    )
    depth_raster(result.submaps, result.optimized_poses, cfg.consistency.cell_size).write_esri_ascii(
        out_dir / "depth_optimized.asc"
    )
    result.initial.raster.write_esri_ascii(out_dir / "consistency_initial.asc")
    result.optimized.raster.write_esri_ascii(out_dir / "consistency_optimized.asc")
    save_graph(out_dir / "graph.txt", result.graph)
    save_submaps(out_dir / "optimized_map.bsm", result.submaps)

    corrected = _corrected_survey(survey, dr_submaps, result.optimized_poses)
    save_survey(out_dir / "optimized_survey.bsv", corrected)

    with open(out_dir / "trajectory.csv", "w") as fh:
        header = "timestamp,dr_x,dr_y,dr_z,dr_yaw,opt_x,opt_y,opt_z,opt_yaw"
        if survey.truth_poses is not None:
            header += ",truth_x,truth_y,truth_z,truth_yaw"
        fh.write(header + "\n")
        for k, ping in enumerate(survey.pings):
            d = survey.dr_poses[k]
            o = corrected.dr_poses[k]
            row = (
                f"{ping.timestamp:.6f},{d.x:.6f},{d.y:.6f},{d.z:.6f},{d.yaw:.6f},"
                f"{o.x:.6f},{o.y:.6f},{o.z:.6f},{o.yaw:.6f}"
            )
            if survey.truth_poses is not None:
                t = survey.truth_poses[k]
                row += f",{t.x:.6f},{t.y:.6f},{t.z:.6f},{t.yaw:.6f}"
            fh.write(row + "\n")

    with open(out_dir / "registration_costs.csv", "w") as fh:
        fh.write("target_id,source_id,iteration,cost\n")
        for tid, sid, reg in result.registrations:
            for it, c in enumerate(reg.cost_history):
                fh.write(f"{tid},{sid},{it},{c:.9g}\n")

    (out_dir / "report.json").write_text(result.report.to_json())


def run_eval(survey: Survey, cfg: PipelineConfig) -> ConsistencyMap:
    """Standalone consistency computation (no optimization). Reuses the
    submap boundaries stored in the survey when present so metrics are
    directly comparable with a SLAM run's report."""
    cfg.validate()
    submaps = build_submaps(
        survey.pings, survey.dr_poses, cfg.submap, boundaries=survey.boundaries
    )
    return evaluate_submaps(submaps, cfg)


def evaluate_submaps(submaps: list[Submap], cfg: PipelineConfig) -> ConsistencyMap:
    """Consistency of an already-built submap set at its anchor poses."""
    poses = [project_se2(s.anchor) for s in submaps]
    return consistency_map(submaps, poses, cfg.consistency)
