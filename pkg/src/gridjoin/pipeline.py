"""Glue between the simulator, the submap builder and the joiner.

These helpers are what the command-line tools and the demo scripts share:
building one submap per dataset chunk, frame text files, and the
ground-truth reference map used for scoring.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .builder import BuildParams, Submap, build_submap, layout_for_scans
from .errors import InputError
from .grids import Grid2D, GridLayout
from .joiner import JoinProblem, recover_map
from .se2 import Pose2
from .simulator import Chunk, Dataset, ground_truth_chunks, partition


@dataclass
class SubmapSet:
    submaps: list[Submap]
    frames: list[Pose2]


def build_chunk_submaps(dataset: Dataset, chunks: list[Chunk], resolution: float,
                        params: BuildParams = BuildParams()) -> SubmapSet:
    """One submap per chunk, built from the chunk's within-submap poses."""
    submaps = []
    for i, chunk in enumerate(chunks):
        scans = [dataset.scan(k, p) for k, p in zip(chunk.indices, chunk.poses)]
        layout = layout_for_scans(scans, resolution)
        submaps.append(build_submap(scans, layout, params, submap_id=i))
    return SubmapSet(submaps, [c.frame for c in chunks])


def odometry_submaps(dataset: Dataset, n_submaps: int, resolution: float,
                     params: BuildParams = BuildParams()) -> SubmapSet:
    """Submaps and initial frames as a joiner would receive them."""
    return build_chunk_submaps(dataset, partition(dataset, n_submaps), resolution, params)


def truth_submaps(dataset: Dataset, n_submaps: int, resolution: float,
                  params: BuildParams = BuildParams()) -> SubmapSet:
    """The same chunks built and placed with ground-truth poses."""
    return build_chunk_submaps(dataset, ground_truth_chunks(dataset, n_submaps),
                               resolution, params)


def truth_map(truth: SubmapSet, layout: GridLayout) -> Grid2D:
    """Reference map: ground-truth submaps fused at ground-truth frames on ``layout``."""
    problem = JoinProblem(truth.submaps, truth.frames, layout)
    return recover_map(problem)


# --------------------------------------------------------------------------
# frame files: one "id x y theta" line per submap


def write_frames(frames, destination, ids=None) -> None:
    ids = range(len(frames)) if ids is None else ids
    lines = [f"{i} {f.x!r} {f.y!r} {f.theta!r}" for i, f in zip(ids, frames)]
    Path(destination).write_text("\n".join(lines) + "\n")


def read_frames(source) -> dict[int, Pose2]:
    path = Path(source)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise InputError(f"frames file not found: {path}") from None
    frames = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise InputError(f"{path}:{n}: expected 'id x y theta', got {line!r}")
        try:
            i = int(parts[0])
            vals = [float(v) for v in parts[1:]]
        except ValueError:
            raise InputError(f"{path}:{n}: cannot parse {line!r}") from None
        if not np.all(np.isfinite(vals)):
            raise InputError(f"{path}:{n}: non-finite frame value")
        if i in frames:
            raise InputError(f"{path}:{n}: duplicate frame id {i}")
        frames[i] = Pose2(*vals)
    if not frames:
        raise InputError(f"frames file {path} is empty")
    return frames


def frames_for(submaps: list[Submap], table: dict[int, Pose2]) -> list[Pose2]:
    try:
        return [table[sm.id] for sm in submaps]
    except KeyError as exc:
        raise InputError(f"no initial frame for submap id {exc}") from None
