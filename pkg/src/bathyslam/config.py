"""Layered YAML pipeline configuration with strict key checking."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .consistency import ConsistencyConfig
from .errors import ConfigError
from .pose_graph import SolverConfig
from .registration import GicpConfig
from .submaps import SubmapConfig
from .survey_sim import DriftModel, SurveyPlan, TerrainSpec


@dataclass(frozen=True)
class BeamNoiseConfig:
    sigma_range: float = 0.05     # meters along the beam
    outlier_rate: float = 0.002   # fraction of spurious returns
    seed: int = 2

    def validate(self) -> None:
        if self.sigma_range < 0:
            raise ConfigError("noise sigma_range must be non-negative")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ConfigError("noise outlier_rate must lie in [0, 1)")


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline parameters, grouped by stage. ``seed`` derives the
    section seeds (terrain, drift, noise) unless those are set explicitly
    in the file."""

    terrain: TerrainSpec = field(default_factory=TerrainSpec)
    survey: SurveyPlan = field(default_factory=SurveyPlan)
    drift: DriftModel = field(default_factory=DriftModel)
    noise: BeamNoiseConfig = field(default_factory=BeamNoiseConfig)
    submap: SubmapConfig = field(default_factory=SubmapConfig)
    gicp: GicpConfig = field(default_factory=GicpConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    seed: int = 0
    threads: int = 1
    output_dir: str = "runs"

    def validate(self) -> None:
        self.terrain.validate()
        self.survey.validate()
        self.drift.validate()
        self.noise.validate()
        self.submap.validate()
        self.gicp.validate()
        self.solver.validate()
        self.consistency.validate()
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Re-derive all section seeds from a global seed."""
        return dataclasses.replace(
            self,
            seed=seed,
            terrain=dataclasses.replace(self.terrain, seed=seed),
            drift=dataclasses.replace(self.drift, seed=seed + 1),
            noise=dataclasses.replace(self.noise, seed=seed + 2),
        )


_SECTIONS = {
    "terrain": TerrainSpec,
    "survey": SurveyPlan,
    "drift": DriftModel,
    "noise": BeamNoiseConfig,
    "submap": SubmapConfig,
    "gicp": GicpConfig,
    "solver": SolverConfig,
    "consistency": ConsistencyConfig,
}
_SCALARS = ("seed", "threads", "output_dir")


def _build_section(name: str, cls, data: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(
            f"unknown key(s) in section '{name}': {', '.join(sorted(unknown))}"
        )
    kwargs = {}
    for key, value in data.items():
        if key == "extent" and isinstance(value, (list, tuple)):
            value = tuple(float(v) for v in value)
        if isinstance(value, str) and value.lower() in ("inf", ".inf", "infinity"):
            value = math.inf
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section '{name}': {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    """Strict construction: unknown sections or keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping")
    unknown = set(data) - set(_SECTIONS) - set(_SCALARS)
    if unknown:
        raise ConfigError(f"unknown configuration section(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    explicit_seeds = set()
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if section is None:
            section = {}
        if not isinstance(section, dict):
            raise ConfigError(f"section '{name}' must be a mapping")
        if "seed" in section:
            explicit_seeds.add(name)
        kwargs[name] = _build_section(name, cls, section)
    for name in _SCALARS:
        if name in data and data[name] is not None:
            kwargs[name] = data[name]
    cfg = PipelineConfig(**kwargs)
    if "seed" in data and data["seed"] is not None:
        derived = cfg.with_seed(int(data["seed"]))
        # keep seeds the file pinned explicitly
        cfg = dataclasses.replace(
            derived,
            terrain=cfg.terrain if "terrain" in explicit_seeds else derived.terrain,
            drift=cfg.drift if "drift" in explicit_seeds else derived.drift,
            noise=cfg.noise if "noise" in explicit_seeds else derived.noise,
        )
    cfg.validate()
    return cfg


def config_to_dict(cfg: PipelineConfig) -> dict:
    out: dict = {}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        if "extent" in section:
            section["extent"] = list(section["extent"])
        for key, value in section.items():
            if isinstance(value, float) and math.isinf(value):
                section[key] = ".inf"
        out[name] = section
    for name in _SCALARS:
        out[name] = getattr(cfg, name)
    return out


def load_config(path) -> PipelineConfig:
    """Parse a YAML configuration file; syntax errors keep their line info."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data)


def dump_config(cfg: PipelineConfig | None = None) -> str:
    """YAML text of the given (or default) configuration."""
    cfg = cfg or PipelineConfig()
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
