"""Joining occupancy-grid submaps by pose-only Gauss-Newton.

The joiner estimates submap frames so that the submaps, projected onto one
global grid, agree with a hit-count weighted global map. Because the map
enters the objective linearly it can be eliminated in closed form: each
iteration solves a small ``3n x 3n`` system in the frames only, and the map
is recovered once at the end.
"""

from .builder import BuildParams, LaserScan, Submap, build_submap, layout_for_scans, load_submap, save_submap
from .errors import (
    DegenerateGeometryError,
    DivergenceError,
    GridJoinError,
    InputError,
    NumericalError,
    SolvabilityError,
)
from .evaluation import MapAccuracy, PoseErrorSummary, map_accuracy, map_auc, map_precision, pose_errors
from .grids import Grid2D, GridLayout, read_grid, render_pgm, write_grid
from .joiner import (
    GnReport,
    JoinProblem,
    ResidualSystem,
    assemble,
    build_global_hit_map,
    full_gn_step,
    pose_only_gn,
    recover_map,
    solve_pose_increment,
)
from .se2 import Pose2
from .simulator import NoiseSpec, ScannerConfig, load_world, partition, simulate

__version__ = "0.1.0"

__all__ = [
    "BuildParams", "LaserScan", "Submap", "build_submap", "layout_for_scans",
    "load_submap", "save_submap",
    "DegenerateGeometryError", "DivergenceError", "GridJoinError", "InputError",
    "NumericalError", "SolvabilityError",
    "MapAccuracy", "PoseErrorSummary", "map_accuracy", "map_auc", "map_precision",
    "pose_errors",
    "Grid2D", "GridLayout", "read_grid", "render_pgm", "write_grid",
    "GnReport", "JoinProblem", "ResidualSystem", "assemble", "build_global_hit_map",
    "full_gn_step", "pose_only_gn", "recover_map", "solve_pose_increment",
    "Pose2",
    "NoiseSpec", "ScannerConfig", "load_world", "partition", "simulate",
]
