"""Survey container formats: a versioned binary file and a CSV alternative.

The binary layout (little endian) is

    magic   8 bytes  b"BSLAMSRV"
    version u32      currently 1
    flags   u32      bit 0: truth poses present, bit 1: boundaries present
    n_pings u64
    n_beams u64      total beam count over all pings
    n_bnd   u64      submap boundary count
    timestamps   f64[n_pings]
    beam_counts  u32[n_pings]
    dr_poses     f64[n_pings, 6]   (x y z roll pitch yaw)
    truth_poses  f64[n_pings, 6]   (if flagged)
    beams        f64[n_beams, 3]   (sensor frame, concatenated per ping)
    boundaries   u64[n_bnd]        (if flagged)

The CSV variant (chosen by a ``.csv`` suffix) stores one row per beam with
the ping fields repeated; it starts with the header line
``# BATHYSLAM_SURVEY_CSV 1``. Writing is byte-deterministic for identical
inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BathySlamError
from .geometry import Pose3
from .types import Ping

MAGIC = b"BSLAMSRV"
VERSION = 1
_FLAG_TRUTH = 1
_FLAG_BOUNDARIES = 2
_HEADER = struct.Struct("<8sIIQQQ")
CSV_HEADER = "# BATHYSLAM_SURVEY_CSV 1"

MAP_MAGIC = b"BSLAMMAP"
MAP_VERSION = 1
_MAP_HEADER = struct.Struct("<8sII")
_MAP_SUBMAP_HEADER = struct.Struct("<IQQQ")


@dataclass
class Survey:
    """In-memory survey: aligned pings and navigation poses.

    ``pings[k].sensor_pose`` equals ``dr_poses[k]``; ``truth_poses`` is the
    simulator ground truth when available; ``boundaries`` are the submap
    interval start indices used when the file was produced (allows an
    evaluation run to reproduce the exact submap partition).
    """

    pings: list[Ping]
    dr_poses: list[Pose3]
    truth_poses: list[Pose3] | None = None
    boundaries: list[int] | None = None

    def __post_init__(self):
        if len(self.pings) != len(self.dr_poses):
            raise ValueError("pings and dr_poses must have the same length")
        if self.truth_poses is not None and len(self.truth_poses) != len(self.pings):
            raise ValueError("truth_poses must align with pings")


def _poses_to_array(poses: list[Pose3]) -> np.ndarray:
    return np.array([p.as_array() for p in poses], dtype=float).reshape(len(poses), 6)


def _poses_from_array(arr: np.ndarray) -> list[Pose3]:
    return [Pose3(*row) for row in arr]


def save_survey(path, survey: Survey) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _save_csv(path, survey)
    else:
        _save_binary(path, survey)


def load_survey(path) -> Survey:
    path = Path(path)
    if not path.exists():
        raise BathySlamError(f"survey file not found: {path}")
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    return _load_binary(path)


def _save_binary(path: Path, survey: Survey) -> None:
    n = len(survey.pings)
    timestamps = np.array([p.timestamp for p in survey.pings], dtype=float)
    beam_counts = np.array([p.beams.shape[0] for p in survey.pings], dtype=np.uint32)
    beams = (
        np.vstack([p.beams for p in survey.pings]) if n else np.zeros((0, 3))
    )
    flags = 0
    if survey.truth_poses is not None:
        flags |= _FLAG_TRUTH
    boundaries = np.array(survey.boundaries or [], dtype=np.uint64)
    if survey.boundaries is not None:
        flags |= _FLAG_BOUNDARIES

    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, flags, n, beams.shape[0], boundaries.size))
        fh.write(timestamps.astype("<f8").tobytes())
        fh.write(beam_counts.astype("<u4").tobytes())
        fh.write(_poses_to_array(survey.dr_poses).astype("<f8").tobytes())
        if survey.truth_poses is not None:
            fh.write(_poses_to_array(survey.truth_poses).astype("<f8").tobytes())
        fh.write(beams.astype("<f8").tobytes())
        if survey.boundaries is not None:
            fh.write(boundaries.astype("<u8").tobytes())


def _load_binary(path: Path) -> Survey:
    data = path.read_bytes()
    if len(data) < _HEADER.size or data[:8] != MAGIC:
        raise BathySlamError(f"{path} is not a survey file (bad magic)")
    magic, version, flags, n, n_beams, n_bnd = _HEADER.unpack_from(data)
    if version != VERSION:
        raise BathySlamError(f"{path}: unsupported survey version {version}")

    off = _HEADER.size

    def take(dtype, count, shape=None):
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr.reshape(shape) if shape else arr

    try:
        timestamps = take("<f8", n)
        beam_counts = take("<u4", n)
        dr = take("<f8", n * 6, (n, 6))
        truth = take("<f8", n * 6, (n, 6)) if flags & _FLAG_TRUTH else None
        beams = take("<f8", n_beams * 3, (n_beams, 3))
        boundaries = take("<u8", n_bnd) if flags & _FLAG_BOUNDARIES else None
    except ValueError as exc:
        raise BathySlamError(f"{path}: truncated survey file") from exc
    if int(beam_counts.sum()) != n_beams:
        raise BathySlamError(f"{path}: inconsistent beam counts")

    dr_poses = _poses_from_array(dr)
    offsets = np.concatenate([[0], np.cumsum(beam_counts)]).astype(int)
    pings = [
        Ping(
            timestamp=float(timestamps[k]),
            sensor_pose=dr_poses[k],
            beams=beams[offsets[k]:offsets[k + 1]],
        )
        for k in range(n)
    ]
    return Survey(
        pings=pings,
        dr_poses=dr_poses,
        truth_poses=_poses_from_array(truth) if truth is not None else None,
        boundaries=list(map(int, boundaries)) if boundaries is not None else None,
    )


def save_submaps(path, submaps) -> None:
    """Submap-set serialization: anchors plus conditioned point sets.

    Unlike a survey file this stores the processed map itself, so a
    consistency evaluation of the file reproduces pipeline metrics exactly.
    """
    from .types import Submap  # local import to avoid a cycle at module load

    with open(path, "wb") as fh:
        fh.write(_MAP_HEADER.pack(MAP_MAGIC, MAP_VERSION, len(submaps)))
        for sm in submaps:
            fh.write(
                _MAP_SUBMAP_HEADER.pack(
                    sm.id, sm.ping_range[0], sm.ping_range[1], sm.points.shape[0]
                )
            )
            fh.write(sm.anchor.as_array().astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(sm.points, dtype="<f8").tobytes())


def load_submaps(path):
    """Parse a submap-set file written by :func:`save_submaps`."""
    from .types import Submap

    path = Path(path)
    if not path.exists():
        raise BathySlamError(f"submap file not found: {path}")
    data = path.read_bytes()
    if len(data) < _MAP_HEADER.size or data[:8] != MAP_MAGIC:
        raise BathySlamError(f"{path} is not a submap-set file (bad magic)")
    _, version, count = _MAP_HEADER.unpack_from(data)
    if version != MAP_VERSION:
        raise BathySlamError(f"{path}: unsupported submap-set version {version}")
    off = _MAP_HEADER.size
    submaps = []
    try:
        for _ in range(count):
            sid, start, stop, n_pts = _MAP_SUBMAP_HEADER.unpack_from(data, off)
            off += _MAP_SUBMAP_HEADER.size
            anchor_arr = np.frombuffer(data, dtype="<f8", count=6, offset=off)
            off += anchor_arr.nbytes
            pts = np.frombuffer(data, dtype="<f8", count=n_pts * 3, offset=off).reshape(n_pts, 3)
            off += pts.nbytes
            anchor = Pose3(*anchor_arr)
            xy = anchor.transform(pts)[:, :2]
            lo, hi = xy.min(axis=0), xy.max(axis=0)
            submaps.append(
                Submap(id=sid, anchor=anchor, points=pts,
                       bounds_xy=(lo[0], lo[1], hi[0], hi[1]),
                       ping_range=(int(start), int(stop)))
            )
    except (struct.error, ValueError) as exc:
        raise BathySlamError(f"{path}: truncated submap-set file") from exc
    return submaps


_CSV_COLUMNS = (
    "ping,timestamp,"
    "dr_x,dr_y,dr_z,dr_roll,dr_pitch,dr_yaw,"
    "truth_x,truth_y,truth_z,truth_roll,truth_pitch,truth_yaw,"
    "beam_x,beam_y,beam_z,boundary"
)


def _save_csv(path: Path, survey: Survey) -> None:
    has_truth = survey.truth_poses is not None
    bset = set(survey.boundaries or [])
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        fh.write(_CSV_COLUMNS + "\n")
        for k, ping in enumerate(survey.pings):
            dr = ",".join(f"{v:.17g}" for v in survey.dr_poses[k].as_array())
            truth = (
                ",".join(f"{v:.17g}" for v in survey.truth_poses[k].as_array())
                if has_truth
                else ",,,,,"
            )
            flag = "1" if (survey.boundaries is not None and k in bset) else (
                "0" if survey.boundaries is not None else ""
            )
            for b in ping.beams:
                fh.write(
                    f"{k},{ping.timestamp:.17g},{dr},{truth},"
                    f"{b[0]:.17g},{b[1]:.17g},{b[2]:.17g},{flag}\n"
                )


def _load_csv(path: Path) -> Survey:
    with open(path) as fh:
        first = fh.readline().strip()
        if first != CSV_HEADER:
            raise BathySlamError(f"{path} is not a survey CSV (missing header line)")
        header = fh.readline().strip()
        if header != _CSV_COLUMNS:
            raise BathySlamError(f"{path}: unexpected CSV columns")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if not rows:
        return Survey(pings=[], dr_poses=[])

    pings: list[Ping] = []
    dr_poses: list[Pose3] = []
    truth_poses: list[Pose3] = []
    boundaries: set[int] = set()
    has_truth = rows[0][8] != ""
    has_boundaries = rows[0][17] != ""

    current = None  # (ping_idx, timestamp, dr, truth, beams)
    def flush():
        if current is None:
            return
        idx, ts, dr, truth, beams = current
        pings.append(Ping(timestamp=ts, sensor_pose=dr, beams=np.array(beams)))
        dr_poses.append(dr)
        if truth is not None:
            truth_poses.append(truth)

    for row in rows:
        idx = int(row[0])
        if current is None or idx != current[0]:
            flush()
            dr = Pose3(*(float(v) for v in row[2:8]))
            truth = Pose3(*(float(v) for v in row[8:14])) if has_truth else None
            current = (idx, float(row[1]), dr, truth, [])
            if has_boundaries and row[17] == "1":
                boundaries.add(len(pings))
        current[4].append([float(row[14]), float(row[15]), float(row[16])])
    flush()

    return Survey(
        pings=pings,
        dr_poses=dr_poses,
        truth_poses=truth_poses if has_truth else None,
        boundaries=sorted(boundaries) if has_boundaries else None,
    )
