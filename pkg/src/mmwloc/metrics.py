"""Trajectory accuracy and consistency metrics: ATE, RPE, RMSE, NEES.

ATE is the mean Euclidean position error and RMSE its root-mean-square
counterpart; both are computed in the shared anchor frame (no alignment).
RPE measures frame-to-frame drift and is translation invariant. NEES is the
covariance-normalized squared estimation error; for a consistent filter its
mean approaches the subspace dimension.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._linalg import SpdSolver


def _check_positions(est, true):
    est = np.atleast_2d(np.asarray(est, dtype=float))
    true = np.atleast_2d(np.asarray(true, dtype=float))
    if est.shape != true.shape:
        raise ValueError(f"trajectory shapes differ: {est.shape} vs {true.shape}")
    if len(est) < 1:
        raise ValueError("trajectories are empty")
    return est, true


def ate(est_positions, true_positions) -> float:
    """Mean Euclidean position error over epochs."""
    est, true = _check_positions(est_positions, true_positions)
    return float(np.mean(np.linalg.norm(est - true, axis=1)))


def rmse(est_positions, true_positions) -> float:
    """Root-mean-square Euclidean position error over epochs."""
    est, true = _check_positions(est_positions, true_positions)
    return float(np.sqrt(np.mean(np.linalg.norm(est - true, axis=1) ** 2)))


def rpe(est_positions, true_positions, delta: int = 1) -> float:
    """Mean error of epoch-to-epoch displacement over a delta-epoch horizon."""
    est, true = _check_positions(est_positions, true_positions)
    if delta < 1:
        raise ValueError(f"delta must be >= 1, got {delta}")
    if len(est) < delta + 1:
        raise ValueError(f"need at least {delta + 1} epochs for delta={delta}")
    est_step = est[delta:] - est[:-delta]
    true_step = true[delta:] - true[:-delta]
    return float(np.mean(np.linalg.norm(est_step - true_step, axis=1)))


def nees(est_means, est_covs, true_states, subspace: str = "position",
         flat: bool = False):
    """Normalized estimation error squared per epoch.

    Returns (series, mean). ``subspace`` picks the error components:
    'position' (default; 2-D when flat) or 'full' (excluding the pinned
    vertical states when flat).
    """
    est_means = np.asarray(est_means, dtype=float)
    true_states = np.asarray(true_states, dtype=float)
    if subspace == "position":
        idx = [0, 1] if flat else [0, 1, 2]
    elif subspace == "full":
        idx = [0, 1, 3, 4, 6] if flat else list(range(7))
    else:
        raise ValueError(f"subspace must be position|full, got {subspace!r}")
    series = np.empty(len(est_means))
    for k in range(len(est_means)):
        err = est_means[k, idx] - true_states[k, idx]
        cov = np.asarray(est_covs[k], dtype=float)[np.ix_(idx, idx)]
        series[k] = SpdSolver(cov).quad_form(err)
    return series, float(np.mean(series))


@dataclass
class MetricReport:
    """Aggregated trajectory metrics for one estimate series."""

    ate: float
    rpe: float
    rmse: float
    nees_mean: float
    nees_series: np.ndarray
    error_series: np.ndarray

    def to_dict(self) -> dict:
        return {
            "ate": self.ate,
            "rpe": self.rpe,
            "rmse": self.rmse,
            "nees_mean": self.nees_mean,
        }


def compute_report(est_means, est_covs, true_states, flat: bool = False,
                   rpe_delta: int = 1) -> MetricReport:
    """Full metric report for an estimated trajectory against ground truth."""
    est_means = np.asarray(est_means, dtype=float)
    true_states = np.asarray(true_states, dtype=float)
    est_pos = est_means[:, 0:3]
    true_pos = true_states[:, 0:3]
    series, mean = nees(est_means, est_covs, true_states, flat=flat)
    return MetricReport(
        ate=ate(est_pos, true_pos),
        rpe=rpe(est_pos, true_pos, delta=rpe_delta),
        rmse=rmse(est_pos, true_pos),
        nees_mean=mean,
        nees_series=series,
        error_series=np.linalg.norm(est_pos - true_pos, axis=1),
    )
