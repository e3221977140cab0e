"""Offline bathymetric submap SLAM toolkit.

Refines a surveying vehicle's trajectory and seabed map by registering
overlapping sonar submaps with a yaw-constrained plane-to-plane ICP variant
and solving a planar pose graph that fuses dead reckoning with the
resulting loop-closure constraints. Ships a synthetic multibeam survey
generator so the full pipeline is verifiable without proprietary data, and
a grid-based map-consistency metric for evaluation.
"""

from .config import BeamNoiseConfig, PipelineConfig, dump_config, load_config
from .consistency import ConsistencyConfig, ConsistencyMap, consistency_map, depth_raster
from .errors import BathySlamError, ConfigError
from .geometry import (
    Pose2,
    Pose3,
    compose,
    inverse,
    lift_se2,
    project_se2,
    relative,
    with_planar,
    wrap_angle,
)
from .grids import Raster, read_esri_ascii
from .pipeline import (
    RunReport,
    SlamResult,
    evaluate_submaps,
    run_eval,
    run_simulate,
    run_slam,
)
from .pose_graph import (
    GraphEdge,
    GraphNode,
    PoseGraph,
    SolverConfig,
    SolverReport,
    edge_cost,
    load_graph,
    residual,
    residual_jacobians,
    save_graph,
    update_submaps,
)
from .registration import (
    GicpConfig,
    OverlapCandidate,
    RegistrationResult,
    detect_overlaps,
    estimate_information,
    gicp_register,
)
from .submaps import (
    SubmapConfig,
    build_submaps,
    feature_score,
    remove_outliers,
    voxel_downsample,
)
from .survey_io import Survey, load_submaps, load_survey, save_submaps, save_survey
from .survey_sim import (
    DriftModel,
    Heightfield,
    SurveyPlan,
    TerrainSpec,
    add_beam_noise,
    corrupt_navigation,
    generate_terrain,
    simulate_survey,
    submap_boundaries_by_length,
)
from .types import GaussianRelativePose, Ping, Submap

__version__ = "0.1.0"

__all__ = [
    "BathySlamError",
    "BeamNoiseConfig",
    "ConfigError",
    "ConsistencyConfig",
    "ConsistencyMap",
    "DriftModel",
    "GaussianRelativePose",
    "GicpConfig",
    "GraphEdge",
    "GraphNode",
    "Heightfield",
    "OverlapCandidate",
    "Ping",
    "PipelineConfig",
    "Pose2",
    "Pose3",
    "PoseGraph",
    "Raster",
    "RegistrationResult",
    "RunReport",
    "SlamResult",
    "SolverConfig",
    "SolverReport",
    "Submap",
    "SubmapConfig",
    "Survey",
    "SurveyPlan",
    "TerrainSpec",
    "add_beam_noise",
    "build_submaps",
    "compose",
    "consistency_map",
    "corrupt_navigation",
    "depth_raster",
    "detect_overlaps",
    "dump_config",
    "edge_cost",
    "estimate_information",
    "evaluate_submaps",
    "feature_score",
    "generate_terrain",
    "gicp_register",
    "inverse",
    "lift_se2",
    "load_config",
    "load_graph",
    "load_submaps",
    "load_survey",
    "project_se2",
    "read_esri_ascii",
    "relative",
    "remove_outliers",
    "residual",
    "residual_jacobians",
    "run_eval",
    "run_simulate",
    "run_slam",
    "save_graph",
    "save_submaps",
    "save_survey",
    "simulate_survey",
    "submap_boundaries_by_length",
    "update_submaps",
    "voxel_downsample",
    "with_planar",
    "wrap_angle",
]
