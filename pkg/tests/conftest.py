from __future__ import annotations

import functools

import numpy as np
import pytest

from gridjoin.builder import BuildParams, LaserScan, Submap, build_submap
from gridjoin.grids import Grid2D, GridLayout
from gridjoin.joiner import JoinProblem
from gridjoin.pipeline import odometry_submaps, truth_submaps
from gridjoin.se2 import Pose2
from gridjoin.simulator import NoiseSpec, ScannerConfig, load_world, simulate

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def room_dataset(seed: int = 0, steps_per_leg: int = 4, n_beams: int = 181, zero_noise: bool = False):
    noise = NoiseSpec.zero(seed) if zero_noise else NoiseSpec(seed=seed)
    return simulate(load_world("room"), steps_per_leg=steps_per_leg, noise=noise,
                    scanner=ScannerConfig(n_beams=n_beams))


@functools.lru_cache(maxsize=None)
def room_instance(n_submaps: int, resolution: float = 0.3, seed: int = 0, steps_per_leg: int = 4,
                  n_beams: int = 181, zero_noise: bool = False):
    """Odometry-initialized join problem on the small room world and its true frames."""
    ds = room_dataset(seed, steps_per_leg, n_beams, zero_noise)
    est = odometry_submaps(ds, n_submaps, resolution)
    ref = truth_submaps(ds, n_submaps, resolution)
    problem = JoinProblem.create(est.submaps, est.frames, s=resolution)
    return problem, ref.frames


def square_scan(pose=Pose2(), n_beams=90, room=4.0):
    """Noise-free scan from ``pose`` inside the square [-room/2, room/2]^2."""
    angles = np.linspace(-np.pi, np.pi, n_beams, endpoint=False)
    half = room / 2
    ranges = []
    for a in angles:
        d = np.array([np.cos(a + pose.theta), np.sin(a + pose.theta)])
        t = []
        for axis in range(2):
            if d[axis] > 1e-12:
                t.append((half - pose.t[axis]) / d[axis])
            elif d[axis] < -1e-12:
                t.append((-half - pose.t[axis]) / d[axis])
        ranges.append(min(t))
    return LaserScan(angles, np.array(ranges), 10.0, pose)


def random_submap(rng, layout: GridLayout, submap_id=0, max_hits=6) -> Submap:
    hits = rng.integers(0, max_hits + 1, size=layout.shape).astype(float)
    occ = np.where(hits > 0, rng.normal(0.0, 1.0, size=layout.shape) * hits, 0.0)
    return Submap(Grid2D(layout, occ), Grid2D(layout, hits), submap_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def three_submap_problem():
    return room_instance(3)[0]


@pytest.fixture(scope="session")
def square_submaps():
    """Two submaps of one square room seen from two poses, built at 0.1 m."""
    layout = GridLayout(50, 50, (-2.45, -2.45), 0.1)
    a = build_submap([square_scan(Pose2(-0.3, 0.1, 0.0))], layout, BuildParams(), 0)
    b = build_submap([square_scan(Pose2(0.4, -0.2, 0.3))], layout, BuildParams(), 1)
    return a, b
