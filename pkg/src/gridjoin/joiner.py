"""Joint optimization of submap frames and a global occupancy map.

Each global cell ``j`` that falls inside submap ``i`` yields one residual

    r_ij = w_ij * M_j - L_i(p_ij),    w_ij = N_i(p_ij) / N_M(j)

where ``p_ij`` is the cell center projected into the submap, ``L_i`` and
``N_i`` are bilinear samples of the submap's log-odds and hit grids, and
``N_M`` is the global hit map obtained by summing the projected hit maps.

The map-block of the Gauss-Newton normal equations is diagonal (every
residual touches a single cell), so the map increment can be eliminated in
closed form. What remains is a 3n x 3n system in the frame increments whose
matrix and right-hand side depend only on the frames, never on ``M``.
:func:`pose_only_gn` iterates that reduced system; :func:`recover_map`
returns the optimal map for the final frames. :func:`full_gn_step` solves the
unreduced system and exists as a test oracle.

Frame 0 is the gauge: it stays fixed, its residuals have no pose columns.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .builder import Submap
from .errors import (
    DegenerateGeometryError,
    DivergenceError,
    InputError,
    MemoryGuardError,
    SolvabilityError,
)
from .grids import Grid2D, GridLayout, bilinear_sample
from .se2 import Pose2, drot_matrix, rot_matrix

log = logging.getLogger(__name__)

EPS_HIT = 1e-9
DEFAULT_MARGIN = 2.0
DEFAULT_RESOLUTION = 0.1
DEFAULT_MAX_ITERATIONS = 50
DEFAULT_DELTA_THRESHOLD = 1e-8
MAX_DENSE_CELLS = 20000


def compute_global_layout(submaps, frames, margin: float = DEFAULT_MARGIN,
                          s: float = DEFAULT_RESOLUTION) -> GridLayout:
    """Bounding box of every submap's corners placed by ``frames``, padded by ``margin``.

    The box is covered by whole cells of size ``s``; cell (0, 0) is the one in
    the lower-left corner.
    """
    if not submaps:
        raise InputError("no submaps given")
    if len(submaps) != len(frames):
        raise InputError(f"{len(submaps)} submaps but {len(frames)} frames")
    if not s > 0:
        raise InputError("global resolution must be positive")
    corners = np.vstack([f.to_world(sm.layout.corners()) for sm, f in zip(submaps, frames)])
    lo = corners.min(axis=0) - margin
    hi = corners.max(axis=0) + margin
    size = np.ceil((hi - lo) / s - 1e-9).astype(int)
    size = np.maximum(size, 2)
    return GridLayout(size[0], size[1], tuple(lo + 0.5 * s), s)


@dataclass
class JoinProblem:
    """Submaps, their frames and the fixed global layout.

    ``global_map`` holds the current global occupancy values; only the
    full Gauss-Newton oracle reads it.
    """

    submaps: list[Submap]
    frames: list[Pose2]
    global_layout: GridLayout
    global_hits: Grid2D | None = None
    global_map: Grid2D | None = None

    def __post_init__(self):
        if not self.submaps:
            raise InputError("no submaps given")
        if len(self.frames) != len(self.submaps):
            raise InputError(f"{len(self.submaps)} submaps but {len(self.frames)} frames")
        self.frames = list(self.frames)
        if self.frames[0] != Pose2():
            raise InputError("frame 0 must be the identity")
        xs, ys = self.global_layout.cell_centers()
        self._cell_xy = np.column_stack([xs.ravel(), ys.ravel()])
        if self.global_hits is None:
            self.global_hits = build_global_hit_map(self)

    @classmethod
    def create(cls, submaps, frames, s: float = DEFAULT_RESOLUTION,
               margin: float = DEFAULT_MARGIN) -> "JoinProblem":
        layout = compute_global_layout(submaps, frames, margin, s)
        return cls(list(submaps), list(frames), layout)

    @property
    def n_free(self) -> int:
        """Number of optimized frames (all but the gauge)."""
        return len(self.submaps) - 1

    def with_frames(self, frames) -> "JoinProblem":
        """Copy with new frames and a global hit map rebuilt for them."""
        return JoinProblem(self.submaps, list(frames), self.global_layout,
                           global_map=self.global_map)


@dataclass
class _Projection:
    """Samples of one submap at the projections of all global cells."""

    cells: np.ndarray  # flat global indices with a valid footprint
    u: np.ndarray
    v: np.ndarray
    hits: np.ndarray


def _candidate_cells(problem: JoinProblem, i: int, frame: Pose2) -> np.ndarray:
    """Flat global indices (ascending) of the cells that can fall inside submap ``i``.

    Only a bounding box of the submap's placed footprint, one cell wider on
    each side, is projected; cells outside it have no valid footprint anyway.
    """
    lay = problem.submaps[i].layout
    glay = problem.global_layout
    lo = np.asarray(lay.origin, dtype=float)
    hi = lo + (np.array([lay.width, lay.height]) - 1) * lay.resolution
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]])
    # local = R (g - t)  =>  g = R^T local + t
    world = corners @ rot_matrix(frame.theta) + frame.t
    idx = (world - np.asarray(glay.origin)) / glay.resolution
    c0, r0 = np.maximum(np.floor(idx.min(axis=0)).astype(int) - 1, 0)
    c1, r1 = np.minimum(np.ceil(idx.max(axis=0)).astype(int) + 1, [glay.width - 1, glay.height - 1])
    if c0 > c1 or r0 > r1:
        return np.zeros(0, dtype=np.intp)
    rows, cols = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    return (rows * glay.width + cols).ravel()


def _project(problem: JoinProblem, i: int, frame: Pose2, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lay = problem.submaps[i].layout
    R = rot_matrix(frame.theta)
    dx = problem._cell_xy[cells, 0] - frame.x
    dy = problem._cell_xy[cells, 1] - frame.y
    u = (R[0, 0] * dx + R[0, 1] * dy - lay.origin[0]) / lay.resolution
    v = (R[1, 0] * dx + R[1, 1] * dy - lay.origin[1]) / lay.resolution
    return u, v


def _sample_hits(problem: JoinProblem, frames) -> tuple[list[_Projection], np.ndarray]:
    total = np.zeros(problem.global_layout.size)
    projections = []
    for i, (sm, frame) in enumerate(zip(problem.submaps, frames)):
        candidates = _candidate_cells(problem, i, frame)
        u, v = _project(problem, i, frame, candidates)
        nh, _, _, ok = bilinear_sample(sm.hits.values, u, v)
        # contributions at or below EPS_HIT count as unobserved everywhere,
        # which keeps the weights of each cell summing to one
        keep = np.flatnonzero(ok & (nh > EPS_HIT))
        cells = candidates[keep]
        projections.append(_Projection(cells, u[keep], v[keep], nh[keep]))
        total[cells] += nh[keep]
    return projections, total


def build_global_hit_map(problem: JoinProblem, frames=None) -> Grid2D:
    """Sum of all local hit maps projected onto the global cells."""
    frames = problem.frames if frames is None else frames
    _, total = _sample_hits(problem, frames)
    return Grid2D(problem.global_layout, total.reshape(problem.global_layout.shape))


@dataclass
class ResidualSystem:
    """One linearization of the joining problem.

    Residuals are ordered by submap, then by global cell index. ``grad`` holds
    each residual's row of the pose Jacobian restricted to its own frame
    (zeros for the gauge submap); the map Jacobian has the single entry
    ``omega`` in column ``col``.
    """

    frames: list[Pose2]
    n_free: int
    submap: np.ndarray  # submap index per residual
    cell: np.ndarray  # flat global cell index per residual
    col: np.ndarray  # dense observed-cell index per residual
    omega: np.ndarray
    H: np.ndarray  # L_i(p) per residual
    grad: np.ndarray  # (R, 3)
    points: np.ndarray  # (R, 2) continuous submap cell coordinates
    cell_index_map: np.ndarray  # observed global cells, sorted
    V_diag: np.ndarray  # sum of omega^2 per observed cell
    global_hits: np.ndarray  # N_M, flat
    assemble_seconds: float = 0.0
    _J_r: scipy.sparse.csr_matrix | None = field(default=None, repr=False)

    @property
    def residual_count(self) -> int:
        return self.H.size

    @property
    def n_cells(self) -> int:
        return self.cell_index_map.size

    @property
    def J_r(self) -> scipy.sparse.csr_matrix:
        if self._J_r is None:
            rows = np.repeat(np.arange(self.residual_count), 3)
            cols = (3 * (self.submap[:, None] - 1) + np.arange(3)).ravel()
            vals = self.grad.ravel()
            keep = np.repeat(self.submap > 0, 3)
            self._J_r = scipy.sparse.csr_matrix(
                (vals[keep], (rows[keep], cols[keep])),
                shape=(self.residual_count, 3 * self.n_free))
        return self._J_r

    @property
    def J_M(self) -> scipy.sparse.csr_matrix:
        return scipy.sparse.csr_matrix(
            (self.omega, (np.arange(self.residual_count), self.col)),
            shape=(self.residual_count, self.n_cells))

    def optimal_map_values(self) -> np.ndarray:
        """Minimizer of ``||J_M M - H||^2`` on the observed cells."""
        return np.bincount(self.col, self.omega * self.H, self.n_cells) / self.V_diag

    def residuals(self, map_values: np.ndarray) -> np.ndarray:
        """``F = J_M M - H`` for map values given on the observed cells."""
        return self.omega * map_values[self.col] - self.H

    def reduced_objective(self) -> float:
        """Objective with the map at its optimum for these frames."""
        e = self.residuals(self.optimal_map_values())
        return float(e @ e)

    def omega_sums(self) -> np.ndarray:
        return np.bincount(self.col, self.omega, self.n_cells)


def assemble(problem: JoinProblem, frames=None) -> ResidualSystem:
    """Linearize at ``frames`` (default: the problem's frames).

    The global hit map is rebuilt for ``frames`` first, so weights are always
    consistent with the frames being linearized. Weights are held fixed in
    the pose Jacobian.
    """
    frames = problem.frames if frames is None else list(frames)
    t0 = time.perf_counter()
    projections, total = _sample_hits(problem, frames)

    parts = []
    for i, (sm, frame, pr) in enumerate(zip(problem.submaps, frames, projections)):
        if pr.cells.size == 0:
            continue
        val, du, dv, ok = bilinear_sample(sm.occupancy.values, pr.u, pr.v)
        assert ok.all()
        omega = pr.hits / total[pr.cells]
        grad = np.zeros((pr.cells.size, 3))
        if i > 0:
            # chain rule: submap gradient per cell times d(cell coords)/d(pose)
            R = rot_matrix(frame.theta)
            lever = (problem._cell_xy[pr.cells] - frame.t) @ drot_matrix(frame.theta).T
            scale = 1.0 / sm.layout.resolution
            gu, gv = du * scale, dv * scale
            grad[:, 0] = gu * R[0, 0] + gv * R[1, 0]
            grad[:, 1] = gu * R[0, 1] + gv * R[1, 1]
            grad[:, 2] = -(gu * lever[:, 0] + gv * lever[:, 1])
        parts.append((np.full(pr.cells.size, i), pr.cells, omega, val, grad,
                      np.column_stack([pr.u, pr.v])))

    if not parts:
        raise SolvabilityError("no global cell is observed by any submap")
    submap_idx, cells, omega, H, grad, points = (np.concatenate(x) for x in zip(*parts))
    observed = np.unique(cells)
    col = np.searchsorted(observed, cells)
    if len(problem.submaps) > 1:
        # a submap that shares no cell with the others leaves its frame free
        shared = np.bincount(col, minlength=observed.size)[col] > 1
        for i in range(len(problem.submaps)):
            if not np.any(shared[submap_idx == i]):
                raise SolvabilityError(f"submap {i} shares no observed cell with any other submap")
    V = np.bincount(col, omega * omega, observed.size)
    if not np.all(np.isfinite(H)) or not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite residual inputs during assembly")
    return ResidualSystem(
        frames=list(frames), n_free=len(problem.submaps) - 1, submap=submap_idx,
        cell=cells, col=col, omega=omega, H=H, grad=grad, points=points,
        cell_index_map=observed, V_diag=V, global_hits=total,
        assemble_seconds=time.perf_counter() - t0)


def reduced_system(sys: ResidualSystem) -> tuple[np.ndarray, np.ndarray]:
    """Matrix and right-hand side of the pose-only normal equations.

    ``S = J_r^T J_r - W V^-1 W^T`` with ``W = J_r^T J_M``; ``V`` is diagonal
    so ``W V^-1 W^T`` is a sum of per-cell outer products, accumulated as one
    product of the stacked weighted gradients. The right-hand side
    ``J_r^T H - W V^-1 J_M^T H`` is evaluated in the equivalent form
    ``-J_r^T (J_M V^-1 J_M^T H - H)``, i.e. minus the pose gradient at the
    closed-form map, which avoids cancellation near convergence.
    """
    n = sys.n_free
    dim = 3 * n
    U = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    W = np.zeros((sys.n_cells, dim))
    e = sys.residuals(sys.optimal_map_values())
    for i in range(1, n + 1):
        sel = np.flatnonzero(sys.submap == i)
        if sel.size == 0:
            continue
        g = sys.grad[sel]
        blk = slice(3 * (i - 1), 3 * i)
        U[blk, blk] = g.T @ g
        rhs[blk] = -(g.T @ e[sel])
        W[sys.col[sel], blk] = sys.omega[sel, None] * g
    S = U - W.T @ (W / sys.V_diag[:, None])
    S = 0.5 * (S + S.T)
    return S, rhs


def solve_pose_increment(sys: ResidualSystem) -> np.ndarray:
    """Frame increments (3 per non-gauge frame) from the reduced system."""
    if sys.n_free == 0:
        return np.zeros(0)
    if not np.all(sys.V_diag > 0):
        raise SolvabilityError("observed cell with zero map information")
    S, rhs = reduced_system(sys)
    try:
        factor = scipy.linalg.cho_factor(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        lam = float(np.linalg.eigvalsh(S)[0]) if np.all(np.isfinite(S)) else float("nan")
        raise DegenerateGeometryError(
            f"reduced pose system is not positive definite (smallest eigenvalue {lam:.3e})",
            smallest_eigenvalue=lam) from None
    return scipy.linalg.cho_solve(factor, rhs)


def apply_increment(frames, delta) -> list[Pose2]:
    delta = np.asarray(delta, dtype=float).reshape(-1, 3)
    return [frames[0]] + [f.added(d) for f, d in zip(frames[1:], delta)]


@dataclass
class GnReport:
    iterations: int = 0
    objective_trace: list[float] = field(default_factory=list)
    delta_norm_trace: list[float] = field(default_factory=list)
    converged: bool = False
    assemble_seconds: float = 0.0
    solve_seconds: float = 0.0
    frame_trace: list[list[list[float]]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "objective_trace": self.objective_trace,
            "delta_norm_trace": self.delta_norm_trace,
            "converged": self.converged,
            "assemble_seconds": self.assemble_seconds,
            "solve_seconds": self.solve_seconds,
        }


def pose_only_gn(problem: JoinProblem, tau_k: int = DEFAULT_MAX_ITERATIONS,
                 tau_delta: float = DEFAULT_DELTA_THRESHOLD,
                 max_increases: int = 3) -> tuple[list[Pose2], GnReport]:
    """Pose-only Gauss-Newton from the problem's frames.

    Runs at most ``tau_k`` iterations and stops once the squared norm of the
    frame increment drops below ``tau_delta``. Each iteration rebuilds the
    global hit map at the current frames, assembles, solves the reduced
    system and adds the increment. ``objective_trace`` records the objective
    with the map at its closed-form optimum, before the first and after every
    iteration. ``problem.global_map`` is never read.
    """
    frames = list(problem.frames)
    report = GnReport()
    sys = assemble(problem, frames)
    report.assemble_seconds += sys.assemble_seconds
    report.objective_trace.append(sys.reduced_objective())
    report.frame_trace.append([f.as_array().tolist() for f in frames])
    increases = 0

    for k in range(tau_k):
        t0 = time.perf_counter()
        delta = solve_pose_increment(sys)
        report.solve_seconds += time.perf_counter() - t0
        if not np.all(np.isfinite(delta)):
            raise DivergenceError(f"non-finite pose increment at iteration {k}", report)
        frames = apply_increment(frames, delta)
        sys = assemble(problem, frames)
        report.assemble_seconds += sys.assemble_seconds
        obj = sys.reduced_objective()
        if not math.isfinite(obj):
            raise DivergenceError(f"non-finite objective at iteration {k}", report)
        sq = float(delta @ delta)
        report.iterations = k + 1
        report.delta_norm_trace.append(math.sqrt(sq))
        report.objective_trace.append(obj)
        report.frame_trace.append([f.as_array().tolist() for f in frames])
        log.debug("iter %d objective %.6g |delta|^2 %.3g", k + 1, obj, sq)
        increases = increases + 1 if obj > report.objective_trace[-2] else 0
        if increases >= max_increases:
            raise DivergenceError(
                f"objective increased {increases} consecutive times (iteration {k + 1})", report)
        if sq < tau_delta:
            report.converged = True
            break
    return frames, report


def recover_map(problem: JoinProblem, frames=None, sys: ResidualSystem | None = None) -> Grid2D:
    """Closed-form global map for the given frames; unobserved cells are 0."""
    if sys is None:
        sys = assemble(problem, frames)
    out = np.zeros(problem.global_layout.size)
    out[sys.cell_index_map] = sys.optimal_map_values()
    return Grid2D(problem.global_layout, out.reshape(problem.global_layout.shape))


def objective(problem: JoinProblem, frames, M: Grid2D) -> float:
    """Sum of squared residuals at ``frames`` with global map ``M``."""
    sys = assemble(problem, frames)
    e = sys.residuals(M.values.ravel()[sys.cell_index_map])
    return float(e @ e)


def full_gn_step(problem: JoinProblem, frames=None, M: Grid2D | None = None,
                 sys: ResidualSystem | None = None, method: str = "dense",
                 max_dense_cells: int = MAX_DENSE_CELLS) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton step on poses and map together, without elimination.

    Builds ``J = [J_r J_M]`` and solves ``J^T J delta = -J^T F`` with the map
    values ``M`` (default ``problem.global_map``, else the closed-form map).
    Returns the pose increment and the map increment on the observed cells
    (ordered as ``sys.cell_index_map``). ``method`` is ``"dense"`` (Cholesky of
    the full normal matrix) or ``"sparse"`` (sparse LU).
    """
    if sys is None:
        sys = assemble(problem, frames)
    if M is None:
        M = problem.global_map
    m = sys.optimal_map_values() if M is None else M.values.ravel()[sys.cell_index_map]
    if method == "dense" and sys.n_cells > max_dense_cells:
        raise MemoryGuardError(
            f"{sys.n_cells} observed cells exceed the dense limit of {max_dense_cells}")
    J = scipy.sparse.hstack([sys.J_r, sys.J_M], format="csr")
    F = sys.residuals(m)
    JtJ = (J.T @ J)
    b = -(J.T @ F)
    if method == "dense":
        delta = scipy.linalg.solve(JtJ.toarray(), b, assume_a="pos")
    elif method == "sparse":
        delta = scipy.sparse.linalg.spsolve(JtJ.tocsc(), b)
    else:
        raise InputError(f"unknown method {method!r}")
    dim = 3 * sys.n_free
    return delta[:dim], delta[dim:]
