"""Regular 2D grids with metric geometry, bilinear sampling and file I/O.

Cell ``(i, j)`` is column ``i`` and row ``j``; its value lives at the cell
center ``origin + (i, j) * resolution``. Values are stored as a
``(height, width)`` float64 array, i.e. row-major with rows along y.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import (
    HeaderError,
    InputError,
    LayoutValidationError,
    NonFiniteError,
    SizeMismatchError,
)

GRID_MAGIC = b"GJGRID01"
HEADER_SIZE = 64
# magic, width, height, origin_x, origin_y, resolution; zero padded to 64 bytes
_HEADER = struct.Struct("<8sIIddd")


@dataclass(frozen=True)
class GridLayout:
    """Lattice geometry: size in cells, metric origin and cell size."""

    width: int
    height: int
    origin: tuple[float, float]
    resolution: float

    def __post_init__(self):
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))
        if self.width < 2 or self.height < 2:
            raise LayoutValidationError(
                f"grid must be at least 2x2 cells, got {self.width}x{self.height}")
        if not (np.isfinite(self.resolution) and self.resolution > 0):
            raise LayoutValidationError(f"resolution must be > 0, got {self.resolution}")
        if not all(np.isfinite(self.origin)):
            raise LayoutValidationError("origin must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height

    def cell_to_world(self, cell) -> np.ndarray:
        return cell_to_world(self, cell)

    def world_to_cell(self, p) -> np.ndarray:
        """Continuous cell coordinates of metric point(s) ``p``."""
        p = np.asarray(p, dtype=float)
        return (p - np.asarray(self.origin)) / self.resolution

    def world_to_cell_floor(self, p) -> np.ndarray:
        """Integer cell whose bilinear footprint starts at ``p``."""
        return np.floor(self.world_to_cell(p)).astype(np.int64)

    def contains_cell(self, cell) -> bool:
        i, j = int(cell[0]), int(cell[1])
        return 0 <= i < self.width and 0 <= j < self.height

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World x and y of every cell center, each shaped ``(height, width)``."""
        xs = self.origin[0] + np.arange(self.width) * self.resolution
        ys = self.origin[1] + np.arange(self.height) * self.resolution
        return np.meshgrid(xs, ys)

    def corners(self) -> np.ndarray:
        """Metric corners of the area covered by the cells, shape ``(4, 2)``."""
        half = 0.5 * self.resolution
        x0, y0 = self.origin[0] - half, self.origin[1] - half
        x1 = self.origin[0] + (self.width - 1) * self.resolution + half
        y1 = self.origin[1] + (self.height - 1) * self.resolution + half
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def cell_to_world(layout: GridLayout, cell) -> np.ndarray:
    """Metric position of a cell center; out-of-bounds cells are allowed."""
    cell = np.asarray(cell, dtype=float)
    return np.asarray(layout.origin) + cell * layout.resolution


class Grid2D:
    """A scalar field over a :class:`GridLayout`."""

    __slots__ = ("layout", "values")

    def __init__(self, layout: GridLayout, values=None):
        self.layout = layout
        if values is None:
            values = np.zeros(layout.shape)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            if values.size != layout.size:
                raise SizeMismatchError(
                    f"expected {layout.size} values, got {values.size}")
            values = values.reshape(layout.shape)
        if values.shape != layout.shape:
            raise SizeMismatchError(
                f"values shape {values.shape} does not match layout {layout.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("grid values must be finite")
        self.values = values

    def __repr__(self):
        return f"Grid2D({self.layout!r})"

    def __eq__(self, other):
        if not isinstance(other, Grid2D):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    def copy(self) -> "Grid2D":
        return Grid2D(self.layout, self.values.copy())

    def sample(self, u, v):
        """Vectorized bilinear sampling, see :func:`bilinear_sample`."""
        return bilinear_sample(self.values, u, v)


@numba.njit(cache=True)
def _bilinear_kernel(values, u, v):
    height, width = values.shape
    n = u.size
    value = np.zeros(n)
    du = np.zeros(n)
    dv = np.zeros(n)
    ok = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        fu = math.floor(u[k])
        fv = math.floor(v[k])
        # NaN fails every comparison and stays invalid
        if not (fu >= 0 and fu <= width - 2 and fv >= 0 and fv <= height - 2):
            continue
        i0 = int(fu)
        j0 = int(fv)
        a = u[k] - fu
        b = v[k] - fv
        v00 = values[j0, i0]
        v10 = values[j0, i0 + 1]
        v01 = values[j0 + 1, i0]
        v11 = values[j0 + 1, i0 + 1]
        dx0 = v10 - v00
        dx1 = v11 - v01
        value[k] = (1.0 - b) * (v00 + a * dx0) + b * (v01 + a * dx1)
        du[k] = (1.0 - b) * dx0 + b * dx1
        dv[k] = (1.0 - a) * (v01 - v00) + a * (v11 - v10)
        ok[k] = True
    return value, du, dv, ok


def bilinear_sample(values: np.ndarray, u, v):
    """Bilinear value and gradient at continuous cell coordinates.

    ``u`` indexes columns and ``v`` rows. Returns ``(value, du, dv, ok)``
    arrays; ``ok`` is False wherever any corner of the 2x2 footprint starting
    at ``floor((u, v))`` is out of bounds, and the other outputs are 0 there.
    On a cell edge the patch of the floor cell is used.
    """
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    shape = u.shape
    values = np.ascontiguousarray(values, dtype=float)
    out = _bilinear_kernel(values, np.ascontiguousarray(u).ravel(), np.ascontiguousarray(v).ravel())
    return tuple(x.reshape(shape) for x in out)


def interp_bilinear(grid: Grid2D, p) -> float | None:
    """Bilinear value at continuous cell coordinates ``p``, or None if out of footprint."""
    value, _, _, ok = bilinear_sample(grid.values, p[0], p[1])
    if not ok:
        return None
    return float(value)


def interp_gradient(grid: Grid2D, p) -> tuple[float, np.ndarray] | None:
    """Bilinear value and its gradient (per cell unit) at ``p``."""
    value, du, dv, ok = bilinear_sample(grid.values, p[0], p[1])
    if not ok:
        return None
    return float(value), np.array([float(du), float(dv)])


# --------------------------------------------------------------------------
# file I/O


def write_grid(grid: Grid2D, destination) -> None:
    """Write ``grid`` in the fixed 64-byte-header binary format."""
    if not np.all(np.isfinite(grid.values)):
        raise NonFiniteError("refusing to write non-finite grid values")
    lay = grid.layout
    header = _HEADER.pack(GRID_MAGIC, lay.width, lay.height,
                          lay.origin[0], lay.origin[1], lay.resolution)
    header = header.ljust(HEADER_SIZE, b"\0")
    payload = np.ascontiguousarray(grid.values, dtype="<f8").tobytes()
    Path(destination).write_bytes(header + payload)


def decode_grid(data: bytes) -> Grid2D:
    if len(data) < HEADER_SIZE:
        raise HeaderError(f"file too short for a grid header ({len(data)} bytes)")
    magic, width, height, ox, oy, res = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise HeaderError(f"bad magic {magic!r}")
    layout = GridLayout(width, height, (ox, oy), res)
    payload = data[HEADER_SIZE:]
    expected = layout.size * 8
    if len(payload) != expected:
        raise SizeMismatchError(
            f"payload has {len(payload)} bytes, expected {expected} for {width}x{height}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(layout.shape)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("grid payload contains NaN or infinity")
    return Grid2D(layout, values)


def read_grid(source) -> Grid2D:
    path = Path(source)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise InputError(f"grid file not found: {path}") from None
    return decode_grid(data)


# --------------------------------------------------------------------------
# rendering


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _logistic(z):
    # tanh form stays finite for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def render_gray(grid: Grid2D, mode: str = "occupancy") -> np.ndarray:
    """8-bit gray image of the grid, top row = largest y."""
    vals = grid.values
    if mode == "occupancy":
        gray = round_half_away(255.0 * (1.0 - _logistic(vals)))
    elif mode == "hit":
        peak = vals.max()
        scaled = vals / peak if peak > 0 else np.zeros_like(vals)
        gray = round_half_away(255.0 * scaled)
    else:
        raise InputError(f"unknown render mode {mode!r}")
    return np.clip(gray, 0, 255).astype(np.uint8)[::-1]


def render_pgm(grid: Grid2D, mode: str, destination) -> None:
    """Write a binary P5 graymap (maxval 255).

    Occupancy mode maps log-odds ``z`` to ``255 * (1 - logistic(z))`` so
    occupied cells are dark and unknown cells mid-gray; hit mode scales counts
    by their maximum.
    """
    img = render_gray(grid, mode)
    height, width = img.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(destination).write_bytes(header + img.tobytes())


def read_pgm(source) -> np.ndarray:
    """Minimal P5 reader for files written by :func:`render_pgm`."""
    data = Path(source).read_bytes()
    magic, size, maxval, pixels = data.split(b"\n", 3)
    if magic != b"P5":
        raise InputError("not a binary PGM")
    width, height = (int(x) for x in size.split())
    if int(maxval) != 255:
        raise InputError("only maxval 255 is supported")
    pixels = np.frombuffer(pixels, dtype=np.uint8)
    return pixels.reshape(height, width)
