"""Pose-error and map-accuracy metrics.

Pose errors are plain per-index differences (all frames share the gauge of
frame 0, so no alignment step is needed). Map accuracy scores an estimated
log-odds grid against a truth grid: unknown truth cells (exactly 0) and
unobserved estimate cells (exactly 0) are dropped before ranking.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InputError
from .grids import Grid2D
from .se2 import normalize_angle, poses_to_array


@dataclass(frozen=True)
class PoseErrorSummary:
    mae_trans: float
    mae_rot: float
    rmse_trans: float
    rmse_rot: float

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MapAccuracy:
    auc: float
    precision: float
    n_cells_scored: int

    def to_json(self) -> dict:
        return asdict(self)


def pose_errors(estimated, truth) -> PoseErrorSummary:
    """MAE and RMSE of translation (Euclidean) and rotation (wrapped) errors."""
    est = poses_to_array(estimated)
    ref = poses_to_array(truth)
    if est.shape != ref.shape:
        raise InputError(f"pose lists differ in length: {len(est)} vs {len(ref)}")
    if len(est) == 0:
        raise InputError("no poses to compare")
    dt = np.linalg.norm(est[:, :2] - ref[:, :2], axis=1)
    dr = np.abs(normalize_angle(est[:, 2] - ref[:, 2]))
    dr = np.atleast_1d(dr)
    return PoseErrorSummary(
        mae_trans=float(dt.mean()),
        mae_rot=float(dr.mean()),
        rmse_trans=float(np.sqrt(np.mean(dt**2))),
        rmse_rot=float(np.sqrt(np.mean(dr**2))),
    )


def _check_layouts(estimate: Grid2D, truth: Grid2D):
    if estimate.layout != truth.layout:
        raise InputError("estimate and truth grids must share one layout")


def scored_cells(estimate: Grid2D, truth: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """Scores and binary labels of the cells used by :func:`map_auc`."""
    _check_layouts(estimate, truth)
    t = truth.values.ravel()
    e = estimate.values.ravel()
    keep = (t != 0) & (e != 0)
    return e[keep], t[keep] > 0


def auc_from_scores(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if labels.size == 0:
        raise InputError("no cells to score")
    if n_pos == 0 or n_neg == 0:
        raise InputError("truth has a single class; AUC is undefined")
    ranks = rankdata(scores)  # average ranks implement the half-count of ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def map_auc(estimate: Grid2D, truth: Grid2D) -> float:
    scores, labels = scored_cells(estimate, truth)
    return auc_from_scores(scores, labels)


def map_precision(estimate: Grid2D, truth: Grid2D) -> float:
    """Fraction of predicted-occupied cells (log-odds > 0) that are occupied in truth.

    Only cells with known truth take part.
    """
    _check_layouts(estimate, truth)
    t = truth.values.ravel()
    e = estimate.values.ravel()
    known = t != 0
    predicted = known & (e > 0)
    n_pred = int(predicted.sum())
    if n_pred == 0:
        raise InputError("estimate predicts no occupied cells; precision is undefined")
    return float(np.count_nonzero(t[predicted] > 0) / n_pred)


def map_accuracy(estimate: Grid2D, truth: Grid2D) -> MapAccuracy:
    scores, labels = scored_cells(estimate, truth)
    return MapAccuracy(auc_from_scores(scores, labels), map_precision(estimate, truth),
                       int(scores.size))
