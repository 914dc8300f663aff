"""Evidence-grid construction of local submaps and their hit maps.

Rays are traced cell by cell from the sensor to the beam end. By default
each scan updates a cell at most once: ``log_odds_occ`` if any beam of the
scan ends in it, otherwise ``log_odds_free``, plus one observation in the hit
map. With ``once_per_scan=False`` every beam updates every cell it touches.
No-return beams are traced as free up to ``max_range``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import InputError
from .grids import Grid2D, GridLayout, read_grid, write_grid
from .se2 import Pose2


@dataclass
class LaserScan:
    angles: np.ndarray
    ranges: np.ndarray
    max_range: float
    pose_in_submap: Pose2 = field(default_factory=Pose2)

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.ranges = np.asarray(self.ranges, dtype=float)
        if self.angles.shape != self.ranges.shape or self.angles.ndim != 1:
            raise InputError("angles and ranges must be 1-D arrays of equal length")
        if self.angles.size > 1 and np.any(np.diff(self.angles) <= 0):
            raise InputError("beam angles must be strictly increasing")
        if np.any(self.ranges < 0):
            raise InputError("ranges must be nonnegative")

    @property
    def returns(self) -> np.ndarray:
        return self.ranges <= self.max_range

    def endpoints(self) -> np.ndarray:
        """Beam end points in the submap frame; no-return beams end at max_range."""
        r = np.where(self.returns, self.ranges, self.max_range)
        local = np.column_stack([r * np.cos(self.angles), r * np.sin(self.angles)])
        return self.pose_in_submap.to_world(local)


@dataclass(frozen=True)
class BuildParams:
    log_odds_occ: float = 0.85
    log_odds_free: float = -0.4
    clamp: float = math.inf
    once_per_scan: bool = True


@dataclass
class Submap:
    occupancy: Grid2D
    hits: Grid2D
    id: int = 0

    def __post_init__(self):
        if self.occupancy.layout != self.hits.layout:
            raise InputError("occupancy and hit grids must share one layout")

    @property
    def layout(self) -> GridLayout:
        return self.occupancy.layout


# --------------------------------------------------------------------------
# ray traversal
#
# Coordinates inside the kernels are shifted cell coordinates: cell k spans
# [k, k + 1) so that floor() gives the containing cell.


@numba.njit(cache=True)
def _trace(c0x, c0y, c1x, c1y, out):
    ix = int(math.floor(c0x))
    iy = int(math.floor(c0y))
    ex = int(math.floor(c1x))
    ey = int(math.floor(c1y))
    dx = c1x - c0x
    dy = c1y - c0y
    nx = abs(ex - ix)
    ny = abs(ey - iy)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    inf = np.inf
    if dx > 0:
        tmx = (ix + 1 - c0x) / dx
    elif dx < 0:
        tmx = (c0x - ix) / -dx
    else:
        tmx = inf
    if dy > 0:
        tmy = (iy + 1 - c0y) / dy
    elif dy < 0:
        tmy = (c0y - iy) / -dy
    else:
        tmy = inf
    tdx = 1.0 / abs(dx) if dx != 0 else inf
    tdy = 1.0 / abs(dy) if dy != 0 else inf

    n = 0
    while nx > 0 or ny > 0:
        out[n, 0] = ix
        out[n, 1] = iy
        n += 1
        # x wins ties so corner crossings are deterministic
        if ny == 0 or (nx > 0 and tmx <= tmy):
            ix += sx
            tmx += tdx
            nx -= 1
        else:
            iy += sy
            tmy += tdy
            ny -= 1
    return n


@numba.njit(cache=True)
def _integrate_rays(occ, hits, starts, ends, has_return, l_occ, l_free, clamp,
                    once_per_scan):
    """Apply one scan. With ``once_per_scan`` a cell is updated at most once,
    as occupied if any beam ends in it, otherwise as free."""
    height, width = occ.shape
    cap = 2 * (width + height) + 8
    buf = np.empty((cap, 2), dtype=np.int64)
    mark = np.zeros(occ.shape, dtype=np.int8)
    touched = np.empty((occ.size, 2), dtype=np.int64) if once_per_scan else np.empty((0, 2), dtype=np.int64)
    n_touched = 0
    for r in range(starts.shape[0]):
        c0x = starts[r, 0]
        c0y = starts[r, 1]
        c1x = ends[r, 0]
        c1y = ends[r, 1]
        # clip the end to the grid rectangle so the buffer bound holds
        ex = int(math.floor(c1x))
        ey = int(math.floor(c1y))
        inside_end = 0 <= ex < width and 0 <= ey < height
        if not inside_end:
            dx = c1x - c0x
            dy = c1y - c0y
            t = 1.0
            if dx > 0:
                t = min(t, (width - c0x) / dx)
            elif dx < 0:
                t = min(t, -c0x / dx)
            if dy > 0:
                t = min(t, (height - c0y) / dy)
            elif dy < 0:
                t = min(t, -c0y / dy)
            t = max(t, 0.0)
            # one cell past the edge keeps the last inside cell in the trace
            pad = 1.0 / max(abs(dx), abs(dy), 1e-12)
            t = min(1.0, t + pad)
            c1x = c0x + t * dx
            c1y = c0y + t * dy
        n = _trace(c0x, c0y, c1x, c1y, buf)
        for k in range(n):
            ix = buf[k, 0]
            iy = buf[k, 1]
            if ix < 0 or ix >= width or iy < 0 or iy >= height:
                break
            if once_per_scan:
                if mark[iy, ix] == 0:
                    mark[iy, ix] = 1
                    touched[n_touched, 0] = iy
                    touched[n_touched, 1] = ix
                    n_touched += 1
            else:
                v = occ[iy, ix] + l_free
                occ[iy, ix] = min(max(v, -clamp), clamp)
                hits[iy, ix] += 1.0
        if inside_end and has_return[r]:
            if once_per_scan:
                if mark[ey, ex] == 0:
                    touched[n_touched, 0] = ey
                    touched[n_touched, 1] = ex
                    n_touched += 1
                mark[ey, ex] = 2
            else:
                v = occ[ey, ex] + l_occ
                occ[ey, ex] = min(max(v, -clamp), clamp)
                hits[ey, ex] += 1.0
    for k in range(n_touched):
        iy = touched[k, 0]
        ix = touched[k, 1]
        delta = l_occ if mark[iy, ix] == 2 else l_free
        v = occ[iy, ix] + delta
        occ[iy, ix] = min(max(v, -clamp), clamp)
        hits[iy, ix] += 1.0


def trace_ray(layout: GridLayout, start, end) -> list[tuple[int, int]]:
    """Cells crossed by the segment ``start -> end`` (meters), end cell excluded.

    Cells are visited in order of the incremental grid traversal; when the
    segment passes exactly through a cell corner the x step is taken first.
    Cells outside the layout are reported as well.
    """
    c0 = layout.world_to_cell(start) + 0.5
    c1 = layout.world_to_cell(end) + 0.5
    if np.array_equal(c0, c1):
        raise InputError("degenerate zero-length ray")
    span = np.abs(np.floor(c1) - np.floor(c0))
    buf = np.empty((int(span.sum()) + 1, 2), dtype=np.int64)
    n = _trace(float(c0[0]), float(c0[1]), float(c1[0]), float(c1[1]), buf)
    return [(int(i), int(j)) for i, j in buf[:n]]


# --------------------------------------------------------------------------
# building


def layout_for_scans(scans, resolution: float, margin: float = 1.0) -> GridLayout:
    """Axis-aligned layout covering every sensor position and beam end point."""
    if not scans:
        raise InputError("no scans given")
    pts = [np.array([[s.pose_in_submap.x, s.pose_in_submap.y]]) for s in scans]
    pts += [s.endpoints() for s in scans]
    pts = np.vstack(pts)
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    size = np.ceil((hi - lo) / resolution).astype(int) + 1
    return GridLayout(max(size[0], 2), max(size[1], 2), tuple(lo), resolution)


def build_submap(scans, layout: GridLayout, params: BuildParams = BuildParams(),
                 submap_id: int = 0) -> Submap:
    """Integrate ``scans`` into a fresh occupancy/hit grid pair on ``layout``."""
    if not scans:
        raise InputError("cannot build a submap from zero scans")
    occ = np.zeros(layout.shape)
    hits = np.zeros(layout.shape)
    for scan in scans:
        sensor = np.array([scan.pose_in_submap.x, scan.pose_in_submap.y])
        c0 = layout.world_to_cell(sensor) + 0.5
        if not (0 <= c0[0] < layout.width and 0 <= c0[1] < layout.height):
            raise InputError(f"sensor pose {scan.pose_in_submap} lies outside the submap layout")
        ends = layout.world_to_cell(scan.endpoints()) + 0.5
        starts = np.broadcast_to(c0, ends.shape).copy()
        _integrate_rays(occ, hits, starts, np.ascontiguousarray(ends),
                        scan.returns.copy(), params.log_odds_occ,
                        params.log_odds_free, params.clamp, params.once_per_scan)
    return Submap(Grid2D(layout, occ), Grid2D(layout, hits), submap_id)


# --------------------------------------------------------------------------
# submap files: <stem>.occ.grid, <stem>.hits.grid and a <stem>.json sidecar


def save_submap(submap: Submap, stem) -> None:
    stem = Path(stem)
    write_grid(submap.occupancy, stem.with_suffix(".occ.grid"))
    write_grid(submap.hits, stem.with_suffix(".hits.grid"))
    lay = submap.layout
    sidecar = {
        "id": submap.id,
        "width": lay.width,
        "height": lay.height,
        "origin_x": lay.origin[0],
        "origin_y": lay.origin[1],
        "resolution": lay.resolution,
    }
    stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_submap(stem) -> Submap:
    stem = Path(stem)
    if stem.suffix == ".json":
        stem = stem.with_suffix("")
    try:
        meta = json.loads(stem.with_suffix(".json").read_text())
    except FileNotFoundError:
        raise InputError(f"submap sidecar not found: {stem.with_suffix('.json')}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed submap sidecar {stem}: {exc}") from None
    occ = read_grid(stem.with_suffix(".occ.grid"))
    hits = read_grid(stem.with_suffix(".hits.grid"))
    try:
        declared = GridLayout(meta["width"], meta["height"],
                              (meta["origin_x"], meta["origin_y"]), meta["resolution"])
        submap_id = int(meta["id"])
    except KeyError as exc:
        raise InputError(f"submap sidecar {stem} lacks key {exc}") from None
    if declared != occ.layout:
        raise InputError(f"submap sidecar {stem} disagrees with its grid header")
    return Submap(occ, hits, submap_id)
