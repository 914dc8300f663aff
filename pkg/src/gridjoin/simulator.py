"""Line-segment worlds, a planar laser simulator and dataset partitioning.

Random numbers come from numpy's PCG64 bit generator; Gaussian samples are
made from its uniform doubles with the Box-Muller transform so that the
stream is fixed by this module rather than by numpy's normal sampler.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .builder import LaserScan
from .errors import DatasetFormatError, InputError
from .se2 import Pose2

DATASET_VERSION = "gjds-1"

# Hokuyo UTM-30LX style scanner
DEFAULT_BEAMS = 1081
DEFAULT_FOV = math.radians(270.0)
DEFAULT_MAX_RANGE = 30.0


@dataclass
class World:
    segments: np.ndarray  # (K, 2, 2) endpoints in meters
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    waypoints: list[Pose2] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 2, 2)
        self.bounds = tuple(float(b) for b in self.bounds)
        lengths = np.linalg.norm(self.segments[:, 1] - self.segments[:, 0], axis=1)
        if np.any(lengths <= 0):
            raise InputError("world segments must have positive length")
        xmin, ymin, xmax, ymax = self.bounds
        pts = self.segments.reshape(-1, 2)
        if (pts[:, 0].min() < xmin or pts[:, 0].max() > xmax
                or pts[:, 1].min() < ymin or pts[:, 1].max() > ymax):
            raise InputError("world segments extend outside the bounds")

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "bounds": list(self.bounds),
            "segments": self.segments.reshape(-1, 4).tolist(),
            "waypoints": [[p.x, p.y, p.theta] for p in self.waypoints],
        }

    @classmethod
    def from_json(cls, data: dict) -> "World":
        try:
            return cls(
                segments=np.asarray(data["segments"], dtype=float).reshape(-1, 2, 2),
                bounds=data["bounds"],
                waypoints=[Pose2(*w) for w in data.get("waypoints", [])],
                name=data.get("name", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed world description: {exc}") from None


def load_world(name_or_path) -> World:
    """Load a world from a JSON file, or one of the bundled worlds by name."""
    path = Path(name_or_path)
    if path.suffix != ".json" and not path.exists():
        bundled = resources.files("gridjoin") / "worlds" / f"{name_or_path}.json"
        if bundled.is_file():
            return World.from_json(json.loads(bundled.read_text()))
    if not path.is_file():
        raise InputError(f"world file not found: {name_or_path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed world file {path}: {exc}") from None
    return World.from_json(data)


def bundled_worlds() -> list[str]:
    folder = resources.files("gridjoin") / "worlds"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


@dataclass(frozen=True)
class NoiseSpec:
    sigma_range: float = 0.02
    sigma_odo_xy: float = 0.04
    sigma_odo_theta: float = 0.003
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_range, self.sigma_odo_xy, self.sigma_odo_theta) < 0:
            raise InputError("noise standard deviations must be nonnegative")

    @classmethod
    def zero(cls, seed: int = 0) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, seed)


@dataclass(frozen=True)
class ScannerConfig:
    n_beams: int = DEFAULT_BEAMS
    fov: float = DEFAULT_FOV
    max_range: float = DEFAULT_MAX_RANGE

    def angles(self) -> np.ndarray:
        return np.linspace(-0.5 * self.fov, 0.5 * self.fov, self.n_beams)


@dataclass
class Dataset:
    gt_poses: list[Pose2]
    odometry: list[Pose2]
    ranges: np.ndarray  # (n_scans, n_beams), > max_range marks no return
    angles: np.ndarray
    max_range: float
    noise: NoiseSpec

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=float)
        self.angles = np.asarray(self.angles, dtype=float)
        if not (len(self.gt_poses) == len(self.odometry) == self.ranges.shape[0]):
            raise DatasetFormatError("gt, odometry and scan counts differ")
        if self.ranges.ndim != 2 or self.ranges.shape[1] != self.angles.size:
            raise DatasetFormatError("range rows must match the beam angles")

    def __len__(self):
        return len(self.gt_poses)

    def scan(self, k: int, pose_in_submap: Pose2 = Pose2()) -> LaserScan:
        return LaserScan(self.angles, self.ranges[k], self.max_range, pose_in_submap)

    def integrate_odometry(self, start: int = 0, stop: int | None = None,
                           origin: Pose2 = Pose2()) -> list[Pose2]:
        """Compose odometry increments ``start+1 .. stop-1`` onto ``origin``."""
        stop = len(self) if stop is None else stop
        poses = [origin]
        for k in range(start + 1, stop):
            poses.append(poses[-1].compose(self.odometry[k]))
        return poses


class GaussianStream:
    """Box-Muller normals from a PCG64 uniform stream."""

    def __init__(self, seed: int):
        self._rng = np.random.Generator(np.random.PCG64(seed))

    def normals(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self._rng.random(2 * pairs)
        u1 = 1.0 - u[:pairs]  # (0, 1], keeps log finite
        u2 = u[pairs:]
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([radius * np.cos(2.0 * np.pi * u2),
                            radius * np.sin(2.0 * np.pi * u2)])
        return z[:n]


# --------------------------------------------------------------------------
# ray casting


def raycast(world: World, pose: Pose2, angles, max_range: float) -> np.ndarray:
    """Distance along each beam to the nearest segment; ``inf`` where nothing
    is hit within ``max_range``."""
    angles = np.asarray(angles, dtype=float)
    heading = pose.theta + angles
    d = np.stack([np.cos(heading), np.sin(heading)], axis=-1)  # (B, 2)
    a = world.segments[:, 0]  # (K, 2)
    e = world.segments[:, 1] - a
    ao = a - pose.t  # (K, 2)

    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]  # (B, K)
    num_r = ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]
    num_u = ao[None, :, 0] * d[:, None, 1] - ao[None, :, 1] * d[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num_r / denom
        u = num_u / denom
    hit = (denom != 0) & (r > 0) & (u >= 0) & (u <= 1)
    r = np.where(hit, r, np.inf).min(axis=1)
    r[r > max_range] = np.inf
    return r


# --------------------------------------------------------------------------
# trajectories and simulation


def interpolate_waypoints(waypoints, steps_per_leg: int) -> list[Pose2]:
    """Linear position / shortest-arc heading interpolation, fixed steps per leg."""
    if not waypoints:
        raise InputError("no waypoints given")
    if steps_per_leg < 1:
        raise InputError("steps_per_leg must be at least 1")
    poses = []
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        dth = Pose2(0, 0, b.theta - a.theta).theta
        for k in range(steps_per_leg):
            f = k / steps_per_leg
            poses.append(Pose2(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), a.theta + f * dth))
    poses.append(waypoints[-1])
    return poses


def simulate(world: World, waypoints=None, steps_per_leg: int = 30,
             noise: NoiseSpec = NoiseSpec(), scanner: ScannerConfig = ScannerConfig()) -> Dataset:
    """Drive through ``waypoints`` and record ground truth, odometry and scans.

    Ground-truth poses are obtained by composing the exact per-step motion
    increments, so integrating noise-free odometry reproduces them bit for
    bit. Per step the stream yields three odometry normals, then one normal
    per beam.
    """
    waypoints = list(world.waypoints if waypoints is None else waypoints)
    if not waypoints:
        raise InputError("no waypoints given")
    for w in waypoints:
        if not world.contains(w.x, w.y):
            raise InputError(f"waypoint {w} lies outside the world bounds")
    path = interpolate_waypoints(waypoints, steps_per_leg)
    angles = scanner.angles()
    no_return = scanner.max_range + 1.0
    stream = GaussianStream(noise.seed)

    gt = [path[0]]
    odometry = [Pose2()]
    for prev, cur in zip(path[:-1], path[1:]):
        step = prev.between(cur)
        gt.append(gt[-1].compose(step))
        z = stream.normals(3)
        odometry.append(Pose2(step.x + noise.sigma_odo_xy * z[0],
                              step.y + noise.sigma_odo_xy * z[1],
                              step.theta + noise.sigma_odo_theta * z[2]))
    ranges = np.empty((len(gt), angles.size))
    # scans are drawn after the full odometry stream
    for k, pose in enumerate(gt):
        true = raycast(world, pose, angles, scanner.max_range)
        z = stream.normals(angles.size)
        noisy = np.where(np.isfinite(true), true + noise.sigma_range * z, no_return)
        ranges[k] = np.maximum(noisy, 0.0)
    return Dataset(gt, odometry, ranges, angles, scanner.max_range, noise)


# --------------------------------------------------------------------------
# dataset files (JSON lines, one header line then one record per scan)


def write_dataset(dataset: Dataset, destination) -> None:
    header = {
        "version": DATASET_VERSION,
        "angles": dataset.angles.tolist(),
        "max_range": dataset.max_range,
        "noise": {
            "sigma_range": dataset.noise.sigma_range,
            "sigma_odo_xy": dataset.noise.sigma_odo_xy,
            "sigma_odo_theta": dataset.noise.sigma_odo_theta,
        },
        "seed": dataset.noise.seed,
    }
    lines = [json.dumps(header)]
    for g, o, r in zip(dataset.gt_poses, dataset.odometry, dataset.ranges):
        lines.append(json.dumps({"gt": [g.x, g.y, g.theta],
                                 "odo": [o.x, o.y, o.theta],
                                 "ranges": r.tolist()}))
    Path(destination).write_text("\n".join(lines) + "\n")


def read_dataset(source) -> Dataset:
    path = Path(source)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise InputError(f"dataset file not found: {path}") from None
    lines = text.splitlines()
    try:
        header = json.loads(lines[0])
        if header.get("version") != DATASET_VERSION:
            raise DatasetFormatError(
                f"unsupported dataset version {header.get('version')!r}, expected {DATASET_VERSION}")
        noise = NoiseSpec(header["noise"]["sigma_range"], header["noise"]["sigma_odo_xy"],
                          header["noise"]["sigma_odo_theta"], header["seed"])
        records = [json.loads(line) for line in lines[1:] if line.strip()]
        gt = [Pose2(*rec["gt"]) for rec in records]
        odo = [Pose2(*rec["odo"]) for rec in records]
        ranges = np.array([rec["ranges"] for rec in records], dtype=float)
        return Dataset(gt, odo, ranges.reshape(len(records), -1), np.asarray(header["angles"]),
                       float(header["max_range"]), noise)
    except DatasetFormatError:
        raise
    except (IndexError, KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed dataset file {path}: {exc!r}") from None


# --------------------------------------------------------------------------
# partitioning


@dataclass
class Chunk:
    start: int
    stop: int
    frame: Pose2  # initial submap frame, relative to scan 0
    poses: list[Pose2]  # sensor poses relative to the submap frame

    @property
    def indices(self) -> range:
        return range(self.start, self.stop)


def chunk_bounds(n_scans: int, n_submaps: int) -> list[tuple[int, int]]:
    if not 1 <= n_submaps <= n_scans:
        raise InputError(f"n_submaps must lie in [1, {n_scans}], got {n_submaps}")
    edges = np.linspace(0, n_scans, n_submaps + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def partition(dataset: Dataset, n_submaps: int) -> list[Chunk]:
    """Split the scans into contiguous chunks with odometry-initialized frames.

    Frame 0 is the identity; every chunk's within-submap poses are odometry
    integrated from the identity at the chunk's first scan.
    """
    chunks = []
    frame = Pose2()
    for start, stop in chunk_bounds(len(dataset), n_submaps):
        if start > 0:
            frame = frame.compose(dataset.odometry[start])
        poses = dataset.integrate_odometry(start, stop)
        chunks.append(Chunk(start, stop, frame, poses))
        frame = frame.compose(poses[-1])
    return chunks


def ground_truth_chunks(dataset: Dataset, n_submaps: int) -> list[Chunk]:
    """Same split as :func:`partition` but with true frames and poses."""
    g0 = dataset.gt_poses[0]
    chunks = []
    for start, stop in chunk_bounds(len(dataset), n_submaps):
        gs = dataset.gt_poses[start]
        poses = [gs.between(dataset.gt_poses[k]) for k in range(start, stop)]
        chunks.append(Chunk(start, stop, g0.between(gs), poses))
    return chunks
