"""Pose-only Gauss-Newton against the full (frames + map) Gauss-Newton step.

Both compute the same frame increment: the map block of the full normal
equations is diagonal, so eliminating it leaves a small dense system in the
frames. The demo checks that the increments agree and times both on one
linearization of a five-submap office instance.

    python demos/03_pose_only_vs_full_gn.py
"""

import statistics
import time

import numpy as np

from gridjoin import JoinProblem, NoiseSpec, assemble, full_gn_step, load_world, simulate, solve_pose_increment
from gridjoin.pipeline import odometry_submaps

dataset = simulate(load_world("office"), steps_per_leg=4, noise=NoiseSpec(seed=0))
est = odometry_submaps(dataset, 5, 0.1)
problem = JoinProblem.create(est.submaps, est.frames, s=0.1)
sys_ = assemble(problem)
print(f"{len(est.submaps)} submaps, {sys_.n_cells} observed cells, "
      f"{sys_.residual_count} residuals")

pose = solve_pose_increment(sys_)
full, _ = full_gn_step(problem, sys=sys_, method="sparse")
print(f"relative difference of the frame increments: "
      f"{np.linalg.norm(pose - full) / np.linalg.norm(full):.2e}")


def timed(fn, repeats=5):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


t_pose = timed(lambda: solve_pose_increment(assemble(problem)))
t_full = timed(lambda: full_gn_step(problem, sys=assemble(problem), method="sparse"))
print(f"per iteration: pose-only {t_pose * 1e3:.0f} ms, full GN {t_full * 1e3:.0f} ms, "
      f"speedup {t_full / t_pose:.2f}x")
