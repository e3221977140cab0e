"""Synthetic seabed, lawnmower survey and navigation-drift generation.

Everything here is a pure function of (parameters, seed), so surveys are
exactly reproducible. The sonar is modeled as an ideal fan of equiangular
rays; no beam pattern or refraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError
from .geometry import Pose3, compose, inverse
from .types import Ping


@dataclass(frozen=True)
class TerrainSpec:
    """Parameters of the synthetic seabed generator.

    ``feature_mix`` in [0, 1] scales all relief (0 gives a constant-depth
    plane); the individual amplitudes set the relative weight of smooth
    noise, Gaussian hills and sinusoidal ripples.
    """

    extent: tuple[float, float] = (240.0, 120.0)
    cell_size: float = 1.0
    feature_mix: float = 0.8
    seed: int = 0
    base_depth: float = 30.0
    noise_amplitude: float = 0.8
    noise_smoothness: float = 8.0
    hill_count: int = 6
    hill_amplitude: float = 3.0
    ripple_amplitude: float = 0.3
    ripple_wavelength: float = 9.0

    def validate(self) -> None:
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ConfigError(f"terrain extent must be positive, got {self.extent}")
        if self.cell_size <= 0:
            raise ConfigError(f"terrain cell_size must be positive, got {self.cell_size}")
        if not 0.0 <= self.feature_mix <= 1.0:
            raise ConfigError(f"feature_mix must lie in [0, 1], got {self.feature_mix}")
        if self.base_depth <= 0:
            raise ConfigError("base_depth must be positive")


@dataclass(frozen=True)
class Heightfield:
    """Regular grid of seabed depths (meters, positive down) over x-y.

    ``grid[iy, ix]`` is the depth at ``origin_xy + (ix, iy) * cell_size``.
    Bilinear interpolation is defined on the interior of the grid.
    """

    origin_xy: tuple[float, float]
    cell_size: float
    grid: np.ndarray

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        if grid.ndim != 2 or grid.shape[0] < 2 or grid.shape[1] < 2:
            raise ConfigError("heightfield grid must be 2D with at least 2x2 cells")
        if not np.all(np.isfinite(grid)):
            raise ConfigError("heightfield depths must be finite")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "origin_xy", (float(self.origin_xy[0]), float(self.origin_xy[1])))

    @property
    def extent_xy(self) -> tuple[float, float]:
        ny, nx = self.grid.shape
        return ((nx - 1) * self.cell_size, (ny - 1) * self.cell_size)

    def contains(self, xy: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the interpolable interior."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        ex, ey = self.extent_xy
        u = xy[:, 0] - self.origin_xy[0]
        v = xy[:, 1] - self.origin_xy[1]
        return (u >= 0) & (u <= ex) & (v >= 0) & (v <= ey)

    def depth_at(self, xy: np.ndarray) -> np.ndarray:
        """Bilinear depth at (n, 2) positions; raises if any point is outside."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if not np.all(self.contains(xy)):
            raise ValueError("depth requested outside the heightfield interior")
        u = (xy[:, 0] - self.origin_xy[0]) / self.cell_size
        v = (xy[:, 1] - self.origin_xy[1]) / self.cell_size
        ny, nx = self.grid.shape
        i0 = np.clip(np.floor(u).astype(int), 0, nx - 2)
        j0 = np.clip(np.floor(v).astype(int), 0, ny - 2)
        fu = u - i0
        fv = v - j0
        g = self.grid
        return (
            g[j0, i0] * (1 - fu) * (1 - fv)
            + g[j0, i0 + 1] * fu * (1 - fv)
            + g[j0 + 1, i0] * (1 - fu) * fv
            + g[j0 + 1, i0 + 1] * fu * fv
        )


@dataclass(frozen=True)
class SurveyPlan:
    """Lawnmower survey pattern and sonar geometry.

    ``beam_aperture`` is the full across-track fan angle in radians; the
    swath width on flat seabed is ``2 * altitude * tan(beam_aperture / 2)``.
    The line block is centered inside the terrain extent.
    """

    swath_count: int = 2
    swath_spacing: float = 25.0
    line_length: float = 180.0
    speed: float = 2.0
    ping_rate: float = 5.0
    beam_count: int = 96
    beam_aperture: float = math.pi / 2
    altitude: float = 18.0

    def validate(self) -> None:
        positive = {
            "swath_count": self.swath_count,
            "swath_spacing": self.swath_spacing,
            "line_length": self.line_length,
            "speed": self.speed,
            "ping_rate": self.ping_rate,
            "beam_count": self.beam_count,
            "beam_aperture": self.beam_aperture,
            "altitude": self.altitude,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"survey plan field {name} must be positive, got {value}")
        if self.beam_aperture >= math.pi:
            raise ConfigError("beam_aperture must be below pi radians")

    def swath_width(self) -> float:
        """Across-track coverage on flat seabed at the planned altitude."""
        return 2.0 * self.altitude * math.tan(self.beam_aperture / 2.0)

    @classmethod
    def with_overlap(cls, overlap_fraction: float, **kwargs) -> "SurveyPlan":
        """Plan whose adjacent swaths overlap by the given fraction of a swath."""
        plan = cls(**kwargs)
        if not 0.0 <= overlap_fraction < 1.0:
            raise ConfigError("overlap_fraction must lie in [0, 1)")
        spacing = plan.swath_width() * (1.0 - overlap_fraction)
        return cls(**{**kwargs, "swath_spacing": spacing})


@dataclass(frozen=True)
class DriftModel:
    """Accumulative navigation error injected between submap intervals.

    One planar random-walk increment (sigma_xy meters, sigma_theta radians,
    drawn in the vehicle frame at the boundary pose) is applied at each
    boundary and carried into every subsequent pose, so relative poses
    inside an interval stay exactly equal to the truth.
    """

    sigma_xy: float = 0.5
    sigma_theta: float = 0.008
    seed: int = 1

    def validate(self) -> None:
        if self.sigma_xy < 0 or self.sigma_theta < 0:
            raise ConfigError("drift sigmas must be non-negative")


def generate_terrain(spec: TerrainSpec) -> Heightfield:
    """Deterministic synthetic seabed from layered noise and parametric relief."""
    spec.validate()
    nx = int(round(spec.extent[0] / spec.cell_size)) + 1
    ny = int(round(spec.extent[1] / spec.cell_size)) + 1
    depth = np.full((ny, nx), spec.base_depth, dtype=float)
    if spec.feature_mix > 0.0:
        rng = np.random.default_rng(spec.seed)
        xs = np.arange(nx) * spec.cell_size
        ys = np.arange(ny) * spec.cell_size
        gx, gy = np.meshgrid(xs, ys)

        relief = np.zeros_like(depth)
        if spec.noise_amplitude > 0:
            smooth = gaussian_filter(
                rng.standard_normal((ny, nx)), sigma=spec.noise_smoothness / spec.cell_size
            )
            std = smooth.std()
            if std > 0:
                relief += spec.noise_amplitude * smooth / std
        for _ in range(spec.hill_count):
            cx = rng.uniform(0.0, spec.extent[0])
            cy = rng.uniform(0.0, spec.extent[1])
            sigma = rng.uniform(6.0, 18.0)
            amp = rng.uniform(0.4, 1.0) * spec.hill_amplitude * rng.choice([-1.0, 1.0])
            relief += amp * np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2.0 * sigma**2))
        if spec.ripple_amplitude > 0:
            angle = rng.uniform(0.0, math.pi)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            k = 2.0 * math.pi / spec.ripple_wavelength
            relief += spec.ripple_amplitude * np.sin(
                k * (gx * math.cos(angle) + gy * math.sin(angle)) + phase
            )
        # relief raises the seabed (shallower = smaller depth)
        depth -= spec.feature_mix * relief
    return Heightfield(origin_xy=(0.0, 0.0), cell_size=spec.cell_size, grid=depth)


def _lawnmower_path(terrain: Heightfield, plan: SurveyPlan):
    """Per-ping vehicle x-y positions, yaws and timestamps for the line block."""
    ox, oy = terrain.origin_xy
    ex, ey = terrain.extent_xy
    block_w = (plan.swath_count - 1) * plan.swath_spacing
    x0 = ox + (ex - plan.line_length) / 2.0
    y0 = oy + (ey - block_w) / 2.0

    step = plan.speed / plan.ping_rate
    n_line = int(math.floor(plan.line_length / step)) + 1
    s = np.arange(n_line) * step

    segments = []
    for k in range(plan.swath_count):
        y = y0 + k * plan.swath_spacing
        if k % 2 == 0:
            xs = x0 + s
            yaw = 0.0
        else:
            xs = x0 + plan.line_length - s
            yaw = math.pi
        seg = np.column_stack([xs, np.full(n_line, y), np.full(n_line, yaw)])
        inside = terrain.contains(seg[:, :2])
        if not np.all(inside):
            raise ConfigError(
                f"survey line {k} leaves the terrain extent "
                f"(y={y:.2f}, x in [{xs.min():.2f}, {xs.max():.2f}])"
            )
        segments.append(seg)

    turn_time = plan.swath_spacing / plan.speed
    times = []
    t = 0.0
    for k in range(plan.swath_count):
        times.append(t + np.arange(n_line) / plan.ping_rate)
        t = times[-1][-1] + turn_time
    return np.vstack(segments), np.concatenate(times)


def _intersect_rays(terrain: Heightfield, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray lengths to the seabed for downward rays, NaN where the ray leaves
    the terrain before hitting. Bisection on f(t) = ray_z(t) - depth(xy(t));
    vectorized over all rays of the whole survey at once."""
    n = dirs.shape[0]
    t_lo = np.zeros(n)
    # upper bound: reach 2x the deepest seabed below the origin, then clip to
    # the horizontal extent so every evaluated sample stays interpolable
    max_depth = float(terrain.grid.max())
    t_hi = (max_depth - origins[:, 2]) / np.minimum(dirs[:, 2], 1.0) * 2.0 + 10.0
    ox, oy = terrain.origin_xy
    ex, ey = terrain.extent_xy
    for axis, lo, hi in ((0, ox, ox + ex), (1, oy, oy + ey)):
        d = dirs[:, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_at_lo = (lo - origins[:, axis]) / d
            t_at_hi = (hi - origins[:, axis]) / d
        bound = np.where(d > 0, t_at_hi, np.where(d < 0, t_at_lo, np.inf))
        t_hi = np.minimum(t_hi, np.maximum(bound, 0.0))

    lo = np.array([ox, oy])
    hi = np.array([ox + ex, oy + ey])

    def above_seabed_gap(t, o, d):
        # rays clipped to the border can overshoot it by rounding; clamp the
        # interpolation query (sub-picometer effect on the depth)
        xy = np.clip(o[:, :2] + t[:, None] * d[:, :2], lo, hi)
        return o[:, 2] + t * d[:, 2] - terrain.depth_at(xy)

    valid = above_seabed_gap(t_hi, origins, dirs) >= 0.0  # ray reaches the seabed
    t_lo = t_lo[valid]
    t_hi_v = t_hi[valid]
    d_v = dirs[valid]
    o_v = origins[valid]
    for _ in range(48):
        mid = 0.5 * (t_lo + t_hi_v)
        below = above_seabed_gap(mid, o_v, d_v) >= 0.0
        t_hi_v = np.where(below, mid, t_hi_v)
        t_lo = np.where(below, t_lo, mid)
    out = np.full(n, np.nan)
    out[valid] = 0.5 * (t_lo + t_hi_v)
    return out


def simulate_survey(terrain: Heightfield, plan: SurveyPlan) -> tuple[list[Ping], list[Pose3]]:
    """Simulate a lawnmower survey over the terrain.

    Returns pings (beams in the sensor frame, sensor_pose set to the exact
    vehicle pose) and the matching list of ground-truth poses. The vehicle
    follows the seabed at the planned altitude with zero roll and pitch;
    beams whose rays exit the terrain extent are dropped, and a ping losing
    all of its beams is dropped together with its pose.
    """
    plan.validate()
    path, times = _lawnmower_path(terrain, plan)
    n_pings = path.shape[0]

    half = plan.beam_aperture / 2.0
    angles = np.linspace(-half, half, plan.beam_count)
    beam_dirs = np.column_stack(
        [np.zeros_like(angles), np.sin(angles), np.cos(angles)]
    )  # sensor frame: x forward, y starboard, z down

    depth_below = terrain.depth_at(path[:, :2])
    z = depth_below - plan.altitude
    poses = [Pose3(x, y, zz, 0.0, 0.0, yaw) for (x, y, yaw), zz in zip(path, z)]

    # all rays of the survey in one bisection pass
    world_dirs = np.vstack([beam_dirs @ p.rotation_matrix().T for p in poses])
    origins = np.repeat(np.column_stack([path[:, 0], path[:, 1], z]), plan.beam_count, axis=0)
    ranges = _intersect_rays(terrain, origins, world_dirs).reshape(n_pings, plan.beam_count)

    pings: list[Ping] = []
    truth: list[Pose3] = []
    for k, (pose, t) in enumerate(zip(poses, times)):
        hit = np.isfinite(ranges[k])
        if not np.any(hit):
            continue
        beams = ranges[k, hit, None] * beam_dirs[hit]
        pings.append(Ping(timestamp=float(t), sensor_pose=pose, beams=beams))
        truth.append(pose)
    return pings, truth


def submap_boundaries_by_length(poses: list[Pose3], max_length: float) -> list[int]:
    """Indices where a new submap interval starts (excluding index 0), placed
    every ``max_length`` meters of along-track x-y travel."""
    if max_length <= 0:
        raise ConfigError("max_length must be positive")
    boundaries = []
    dist = 0.0
    for k in range(1, len(poses)):
        a, b = poses[k - 1], poses[k]
        dist += math.hypot(b.x - a.x, b.y - a.y)
        if dist >= max_length:
            boundaries.append(k)
            dist = 0.0
    return boundaries


def corrupt_navigation(
    truth_poses: list[Pose3], submap_boundaries: list[int], model: DriftModel
) -> list[Pose3]:
    """Dead-reckoning stream: truth corrupted by one accumulated random-walk
    increment per submap boundary (relative poses within an interval are
    preserved exactly)."""
    model.validate()
    n = len(truth_poses)
    bounds = list(submap_boundaries)
    if bounds != sorted(bounds) or any(b <= 0 or b >= n for b in bounds):
        raise ValueError("submap boundaries must be sorted and lie inside (0, len(poses))")
    if model.sigma_xy == 0.0 and model.sigma_theta == 0.0:
        return list(truth_poses)

    rng = np.random.default_rng(model.seed)
    boundary_set = set(bounds)
    out: list[Pose3] = []
    accum = Pose3.identity()
    for k, pose in enumerate(truth_poses):
        if k in boundary_set:
            dx, dy = rng.normal(0.0, model.sigma_xy, size=2)
            dtheta = rng.normal(0.0, model.sigma_theta)
            err = Pose3(dx, dy, 0.0, 0.0, 0.0, dtheta)
            # inject the increment in the vehicle frame at the boundary pose
            accum = compose(accum, compose(pose, compose(err, inverse(pose))))
        out.append(compose(accum, pose))
    return out


def add_beam_noise(
    pings: list[Ping], sigma_range: float, outlier_rate: float, seed: int
) -> list[Ping]:
    """Range jitter plus sparse long-range spikes on every beam.

    Outliers are displaced along the beam by at least ``10 * sigma_range + 1``
    meters, which the statistical outlier filter is expected to remove.
    """
    if sigma_range < 0:
        raise ConfigError("sigma_range must be non-negative")
    if not 0.0 <= outlier_rate < 1.0:
        raise ConfigError("outlier_rate must lie in [0, 1)")
    if sigma_range == 0.0 and outlier_rate == 0.0:
        return list(pings)

    rng = np.random.default_rng(seed)
    spike = 10.0 * sigma_range + 1.0
    noisy: list[Ping] = []
    for ping in pings:
        ranges = np.linalg.norm(ping.beams, axis=1)
        dirs = ping.beams / ranges[:, None]
        new_ranges = ranges + rng.normal(0.0, sigma_range, size=ranges.shape)
        if outlier_rate > 0.0:
            mask = rng.random(ranges.shape) < outlier_rate
            new_ranges = new_ranges + mask * rng.uniform(spike, 3.0 * spike, size=ranges.shape)
        noisy.append(
            Ping(
                timestamp=ping.timestamp,
                sensor_pose=ping.sensor_pose,
                beams=new_ranges[:, None] * dirs,
            )
        )
    return noisy
