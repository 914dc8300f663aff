"""Joining four submaps of the 50 x 50 m office world.

This is the setting of the simulation experiment: default noise, four
submaps at 0.1 m. Pure Gauss-Newton has a narrow basin of convergence on
occupancy grids, so with half a meter of odometry drift the iteration can
stall or start to oscillate; the joiner then aborts with a DivergenceError
that carries the iteration history. The demo prints either the result or
the best iterate seen before the abort.

    python demos/02_office_join.py [world] [steps_per_leg]
"""

import sys

import numpy as np

from gridjoin import (
    DivergenceError, JoinProblem, NoiseSpec, load_world, map_accuracy, pose_errors,
    pose_only_gn, recover_map, simulate,
)
from gridjoin.pipeline import odometry_submaps, truth_map, truth_submaps
from gridjoin.se2 import poses_from_array

world = sys.argv[1] if len(sys.argv) > 1 else "office"
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 8
resolution = 0.1

dataset = simulate(load_world(world), steps_per_leg=steps, noise=NoiseSpec(seed=0))
est = odometry_submaps(dataset, 4, resolution)
ref = truth_submaps(dataset, 4, resolution)
problem = JoinProblem.create(est.submaps, est.frames, s=resolution)
h, w = problem.global_layout.shape
print(f"{world}: {len(dataset)} scans, global grid {w} x {h} cells")

reference = truth_map(ref, problem.global_layout)
init = pose_errors(est.frames[1:], ref.frames[1:])
print(f"odometry frames  MAE {init.mae_trans:.3f} m / {init.mae_rot:.4f} rad")
print(f"initial map      {map_accuracy(recover_map(problem), reference)}")

try:
    frames, report = pose_only_gn(problem)
    label = f"joined ({report.iterations} iterations, converged={report.converged})"
except DivergenceError as exc:
    print(f"aborted: {exc}")
    report = exc.report
    best = int(np.argmin(report.objective_trace))
    frames = poses_from_array(report.frame_trace[best])
    label = f"best iterate {best}"

e = pose_errors(frames[1:], ref.frames[1:])
print(f"{label}: MAE {e.mae_trans:.3f} m / {e.mae_rot:.4f} rad")
print(f"map              {map_accuracy(recover_map(problem, frames), reference)}")
