import math

import numpy as np
import pytest

from gridjoin.builder import Submap
from gridjoin.errors import (
    DegenerateGeometryError,
    DivergenceError,
    InputError,
    MemoryGuardError,
    SolvabilityError,
)
from gridjoin.grids import Grid2D, GridLayout, interp_bilinear
from gridjoin.joiner import (
    JoinProblem,
    assemble,
    build_global_hit_map,
    compute_global_layout,
    full_gn_step,
    objective,
    pose_only_gn,
    recover_map,
    reduced_system,
    solve_pose_increment,
)
from gridjoin.se2 import Pose2, project_global_to_local

from conftest import random_submap, room_instance


def grid_extent(layout):
    c = layout.corners()
    return c[0], c[2]


def make_submap(layout, occ, hits, submap_id=0):
    return Submap(Grid2D(layout, occ), Grid2D(layout, hits), submap_id)


# --------------------------------------------------------------------------
# global layout


def test_layout_identity_submap_with_margin():
    sm = make_submap(GridLayout(100, 100, (0.05, 0.05), 0.1), np.zeros((100, 100)), np.zeros((100, 100)))
    lay = compute_global_layout([sm], [Pose2()], margin=1.0, s=0.1)
    lo, hi = grid_extent(lay)
    assert np.allclose(hi - lo, [12.0, 12.0], atol=1e-9)
    assert np.allclose(lo, [-1.0, -1.0], atol=1e-9)
    assert (lay.width, lay.height) == (120, 120)


def test_layout_union_of_disjoint_submaps():
    lay_a = GridLayout(20, 10, (0.05, 0.05), 0.1)
    z = np.zeros((10, 20))
    a = make_submap(lay_a, z, z)
    b = make_submap(lay_a, z, z, 1)
    lay = compute_global_layout([a, b], [Pose2(), Pose2(10.0, 5.0, 0.0)], margin=0.0, s=0.1)
    lo, hi = grid_extent(lay)
    assert np.allclose(lo, [0, 0], atol=1e-9)
    assert np.all(hi >= [12.0 - 1e-9, 6.0 - 1e-9]) and np.all(hi < [12.1, 6.1])


def test_layout_covers_rotated_corners():
    lay_a = GridLayout(40, 20, (0.05, 0.05), 0.1)
    z = np.zeros((20, 40))
    sm = make_submap(lay_a, z, z)
    frame = Pose2(1.0, -2.0, math.pi / 4)
    lay = compute_global_layout([make_submap(lay_a, z, z, 0), sm], [Pose2(), frame], margin=0.0, s=0.1)
    lo, hi = grid_extent(lay)
    pts = frame.to_world(lay_a.corners())
    assert np.all(pts >= lo - 1e-9) and np.all(pts <= hi + 1e-9)
    assert np.any(np.isclose(pts.min(axis=0), lo, atol=1e-9) | (pts.min(axis=0) < lo + 0.1))


def test_layout_errors():
    with pytest.raises(InputError):
        compute_global_layout([], [])


# --------------------------------------------------------------------------
# global hit map and assembly


def test_hit_map_single_identity_submap(rng):
    lay = GridLayout(30, 20, (0.0, 0.0), 0.1)
    sm = random_submap(rng, lay)
    problem = JoinProblem([sm], [Pose2()], lay)
    nm = problem.global_hits.values
    # the last row and column have no full footprint
    assert np.max(np.abs(nm[:-1, :-1] - sm.hits.values[:-1, :-1])) <= 1e-12


def test_hit_map_doubles_for_identical_submaps(rng):
    lay = GridLayout(30, 20, (0.0, 0.0), 0.1)
    sm = random_submap(rng, lay)
    one = JoinProblem([sm], [Pose2()], lay).global_hits.values
    two = JoinProblem([sm, Submap(sm.occupancy, sm.hits, 1)], [Pose2(), Pose2()], lay).global_hits.values
    assert np.array_equal(two, 2 * one)


def test_hit_map_brute_force(rng):
    lay_a = GridLayout(25, 20, (-1.0, -0.5), 0.1)
    lay_b = GridLayout(18, 22, (0.3, -0.2), 0.12)
    subs = [random_submap(rng, lay_a, 0), random_submap(rng, lay_b, 1)]
    frames = [Pose2(), Pose2(0.4, -0.3, 0.6)]
    problem = JoinProblem.create(subs, frames, s=0.09, margin=0.5)
    glay = problem.global_layout
    expected = np.zeros(glay.shape)
    for j in range(glay.height):
        for i in range(glay.width):
            for sm, f in zip(subs, frames):
                local = project_global_to_local(f, (i, j), glay.resolution, glay.origin)
                p = (local - np.asarray(sm.layout.origin)) / sm.layout.resolution
                v = interp_bilinear(sm.hits, p)
                if v is not None and v > 1e-9:
                    expected[j, i] += v
    assert np.max(np.abs(build_global_hit_map(problem).values - expected)) <= 1e-12


def test_single_submap_system(rng):
    lay = GridLayout(30, 20, (0.0, 0.0), 0.1)
    sm = random_submap(rng, lay)
    problem = JoinProblem([sm], [Pose2()], lay)
    sys = assemble(problem)
    assert np.all(sys.omega == 1.0) and np.all(sys.V_diag == 1.0)
    assert sys.J_r.shape == (sys.residual_count, 0)
    M = recover_map(problem)
    mask = sm.hits.values > 0
    mask[-1, :] = mask[:, -1] = False
    assert np.allclose(M.values[mask], sm.occupancy.values[mask], atol=1e-12)
    assert objective(problem, [Pose2()], M) == pytest.approx(0.0, abs=1e-12)
    assert solve_pose_increment(sys).size == 0


def test_two_identical_colocated_submaps(rng):
    lay = GridLayout(30, 20, (0.0, 0.0), 0.1)
    sm = random_submap(rng, lay)
    problem = JoinProblem([sm, Submap(sm.occupancy, sm.hits, 1)], [Pose2(), Pose2()], lay)
    sys = assemble(problem)
    assert np.all(sys.omega == 0.5)
    assert np.all(sys.V_diag == 0.5)
    assert np.allclose(sys.omega_sums(), 1.0, atol=1e-15)
    M = recover_map(problem)
    single = recover_map(JoinProblem([sm], [Pose2()], lay))
    assert np.allclose(M.values, 2 * single.values, atol=1e-12)
    # already optimal: identical submaps at identity frames
    assert np.max(np.abs(solve_pose_increment(sys))) <= 1e-10


def test_weights_sum_to_one(three_submap_problem):
    sys = assemble(three_submap_problem)
    assert np.max(np.abs(sys.omega_sums() - 1.0)) <= 1e-9
    assert np.all(sys.V_diag > 0)


def test_residual_rows_touch_one_cell_and_frame(three_submap_problem):
    sys = assemble(three_submap_problem)
    assert np.all(np.diff(sys.J_M.indptr) == 1)
    nnz = np.diff(sys.J_r.indptr)
    assert np.all(nnz[sys.submap == 0] == 0)
    cols = sys.J_r.tocoo()
    assert np.all(cols.col // 3 == sys.submap[cols.row] - 1)


def test_solvability_errors():
    lay = GridLayout(10, 10, (0.0, 0.0), 0.1)
    hits = np.ones((10, 10))
    occ = np.linspace(-1, 1, 100).reshape(10, 10)
    a = make_submap(lay, occ, hits, 0)
    b = make_submap(lay, occ, hits, 1)
    far = JoinProblem.create([a, b], [Pose2(), Pose2(50.0, 0.0, 0.0)], s=0.1)
    with pytest.raises(SolvabilityError):
        assemble(far)
    empty = make_submap(lay, np.zeros((10, 10)), np.zeros((10, 10)))
    with pytest.raises(SolvabilityError):
        assemble(JoinProblem([empty], [Pose2()], lay))


def test_flat_submaps_are_degenerate():
    lay = GridLayout(20, 20, (0.0, 0.0), 0.1)
    a = make_submap(lay, np.zeros((20, 20)), np.ones((20, 20)), 0)
    b = make_submap(lay, np.zeros((20, 20)), np.ones((20, 20)), 1)
    problem = JoinProblem.create([a, b], [Pose2(), Pose2(0.05, 0.0, 0.0)], s=0.1)
    with pytest.raises(DegenerateGeometryError) as info:
        solve_pose_increment(assemble(problem))
    assert info.value.smallest_eigenvalue is not None
    assert abs(info.value.smallest_eigenvalue) <= 1e-9


def test_gauge_frame_must_be_identity(rng):
    lay = GridLayout(10, 10, (0.0, 0.0), 0.1)
    with pytest.raises(InputError):
        JoinProblem([random_submap(rng, lay)], [Pose2(0.1, 0, 0)], lay)


# --------------------------------------------------------------------------
# Jacobian, reduced system and the full oracle


def frozen_residual(problem, sys, r, frames, M):
    """Residual ``r`` of ``sys`` at ``frames`` with its weight and cell held fixed."""
    glay = problem.global_layout
    i = sys.submap[r]
    sm = problem.submaps[i]
    cell = np.array(np.unravel_index(sys.cell[r], glay.shape)[::-1])
    local = project_global_to_local(frames[i], cell, glay.resolution, glay.origin)
    p = (local - np.asarray(sm.layout.origin)) / sm.layout.resolution
    return sys.omega[r] * M[sys.col[r]] - interp_bilinear(sm.occupancy, p)


def test_jacobian_matches_finite_differences(three_submap_problem, rng):
    problem = three_submap_problem
    sys = assemble(problem)
    M = sys.optimal_map_values()
    h = 1e-6
    picks = rng.choice(np.flatnonzero(sys.submap > 0), 150, replace=False)
    # keep samples whose bilinear patch does not change under the perturbation
    frac = sys.points[picks] - np.floor(sys.points[picks])
    picks = picks[np.all((frac > 1e-3) & (frac < 1 - 1e-3), axis=1)]
    J = sys.J_r.toarray()
    worst = 0.0
    for r in picks:
        i = sys.submap[r]
        for k in range(3):
            d = np.zeros(3)
            d[k] = h
            fp = list(problem.frames)
            fm = list(problem.frames)
            fp[i] = fp[i].added(d)
            fm[i] = fm[i].added(-d)
            num = (frozen_residual(problem, sys, r, fp, M) - frozen_residual(problem, sys, r, fm, M)) / (2 * h)
            ana = J[r, 3 * (i - 1) + k]
            worst = max(worst, abs(num - ana) / max(abs(ana), 1e-2))
    assert worst <= 1e-4


def test_reduced_system_matches_explicit_schur(three_submap_problem):
    sys = assemble(three_submap_problem)
    S, rhs = reduced_system(sys)
    Jr = sys.J_r.toarray()
    JM = sys.J_M.toarray()
    V = JM.T @ JM
    assert np.count_nonzero(V - np.diag(np.diag(V))) == 0
    Vinv = np.diag(1.0 / np.diag(V))
    S_ref = Jr.T @ Jr - Jr.T @ JM @ Vinv @ JM.T @ Jr
    rhs_ref = Jr.T @ sys.H - Jr.T @ JM @ Vinv @ JM.T @ sys.H
    assert np.allclose(S, S_ref, rtol=1e-10, atol=1e-8 * np.abs(S_ref).max())
    assert np.allclose(rhs, rhs_ref, rtol=1e-8, atol=1e-8 * np.abs(rhs_ref).max())


@pytest.mark.parametrize("n", [2, 3])
def test_pose_only_equals_full_gn(n):
    problem, _ = room_instance(n)
    frames = list(problem.frames)
    for _ in range(3):
        sys = assemble(problem, frames)
        d_pose = solve_pose_increment(sys)
        d_full, _ = full_gn_step(problem, frames, sys=sys, method="dense")
        assert np.linalg.norm(d_pose - d_full) / np.linalg.norm(d_full) <= 1e-8
        frames = [frames[0]] + [f.added(d) for f, d in zip(frames[1:], d_pose.reshape(-1, 3))]


def test_full_step_second_block_row(three_submap_problem, rng):
    problem = three_submap_problem
    sys = assemble(problem)
    M0 = Grid2D(problem.global_layout, rng.normal(size=problem.global_layout.shape))
    d_pose, d_map = full_gn_step(problem, M=M0, sys=sys, method="dense")
    # V dM = b_M - W^T dr with b_M = -J_M^T F
    F = sys.residuals(M0.values.ravel()[sys.cell_index_map])
    JM = sys.J_M
    lhs = sys.V_diag * d_map
    rhs = -(JM.T @ F) - (JM.T @ (sys.J_r @ d_pose))
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.abs(rhs).max())
    sparse_pose, sparse_map = full_gn_step(problem, M=M0, sys=sys, method="sparse")
    assert np.allclose(sparse_pose, d_pose, rtol=1e-8, atol=1e-12)


def test_full_step_single_submap_is_map_only(rng):
    lay = GridLayout(20, 15, (0.0, 0.0), 0.1)
    sm = random_submap(rng, lay)
    problem = JoinProblem([sm], [Pose2()], lay)
    M0 = Grid2D(lay, rng.normal(size=lay.shape))
    d_pose, d_map = full_gn_step(problem, M=M0)
    sys = assemble(problem)
    assert d_pose.size == 0
    expected = sys.optimal_map_values() - M0.values.ravel()[sys.cell_index_map]
    assert np.allclose(d_map, expected, atol=1e-12)


def test_full_step_memory_guard(three_submap_problem):
    with pytest.raises(MemoryGuardError):
        full_gn_step(three_submap_problem, max_dense_cells=10)
    with pytest.raises(InputError):
        full_gn_step(three_submap_problem, method="qr")


def test_recover_map_matches_dense_least_squares(three_submap_problem):
    sys = assemble(three_submap_problem)
    JM = sys.J_M.toarray()
    ref = np.linalg.lstsq(JM, sys.H, rcond=None)[0]
    got = recover_map(three_submap_problem, sys=sys).values.ravel()[sys.cell_index_map]
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) <= 1e-10
    unobserved = np.ones(three_submap_problem.global_layout.size, bool)
    unobserved[sys.cell_index_map] = False
    assert np.all(recover_map(three_submap_problem, sys=sys).values.ravel()[unobserved] == 0)


def test_closed_form_map_is_a_minimum(three_submap_problem, rng):
    problem = three_submap_problem
    M = recover_map(problem)
    base = objective(problem, problem.frames, M)
    for _ in range(5):
        delta = rng.normal(size=M.values.shape)
        delta *= 1e-3 / np.linalg.norm(delta)
        assert objective(problem, problem.frames, Grid2D(M.layout, M.values + delta)) > base


def test_objective_of_zero_inputs_is_zero():
    lay = GridLayout(10, 10, (0.0, 0.0), 0.1)
    sm = make_submap(lay, np.zeros((10, 10)), np.ones((10, 10)))
    problem = JoinProblem([sm], [Pose2()], lay)
    assert objective(problem, [Pose2()], Grid2D(lay)) == 0.0


# --------------------------------------------------------------------------
# the pose-only loop


def test_zero_iterations_returns_initial_frames(three_submap_problem):
    frames, report = pose_only_gn(three_submap_problem, tau_k=0)
    assert frames == three_submap_problem.frames
    assert report.iterations == 0 and len(report.objective_trace) == 1


def test_gn_report_shape_and_progress(three_submap_problem):
    frames, report = pose_only_gn(three_submap_problem, tau_k=8)
    assert len(report.objective_trace) == report.iterations + 1
    assert len(report.delta_norm_trace) == report.iterations
    assert frames[0] == Pose2()
    assert report.objective_trace[-1] <= report.objective_trace[0]
    assert set(report.to_json()) == {"iterations", "objective_trace", "delta_norm_trace",
                                     "converged", "assemble_seconds", "solve_seconds"}


def test_map_values_never_influence_pose_iterates(rng):
    problem, _ = room_instance(2)
    lay = problem.global_layout
    traces = []
    for seed in (1, 2):
        M0 = Grid2D(lay, np.random.default_rng(seed).normal(size=lay.shape) * 10)
        p = JoinProblem(problem.submaps, problem.frames, lay, global_map=M0)
        _, report = pose_only_gn(p, tau_k=4)
        traces.append(repr(report.frame_trace))
    assert traces[0] == traces[1]


def test_divergence_carries_the_iteration_history():
    # at the true frames the discretized objective is not minimal; GN ends up
    # oscillating and the increase rule aborts
    problem, _ = room_instance(3, resolution=0.2, zero_noise=True)
    with pytest.raises(DivergenceError) as info:
        pose_only_gn(problem, tau_k=50)
    report = info.value.report
    trace = report.objective_trace
    assert len(trace) == report.iterations + 1 == len(report.frame_trace)
    assert trace[-1] > trace[-2] > trace[-3] > trace[-4]
