"""Bayesian filter updates: linearized (EKF), unscented (UKF) and cubature
(CKF) measurement updates over a common predict contract.

All functions are dimension-agnostic (n inferred from the estimate), pure,
and return a fresh posterior. Angular measurement components are handled by
wrapping residuals about a reference projection, never by averaging raw
angles. Covariance updates use the Joseph form (EKF) or the sigma-form
P - K S K^T, both symmetrized.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._linalg import SpdSolver, chol_lower, symmetrize
from .robustness import GateConfig, chi2_quantile
from .state_space import StateEstimate, TransitionModel


@dataclass(frozen=True)
class UkfParams:
    """Scaled unscented-transform parameters.

    The default kappa keeps n + lambda = alpha^2 (n + kappa) strictly
    positive for the 7-state model (n + lambda = 10), avoiding the negative
    spread that kappa = 3 - n would give.
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 3.0


DEFAULT_UKF_PARAMS = UkfParams()


@dataclass
class SigmaSet:
    points: np.ndarray   # (2n+1, n), row 0 is the mean
    w_mean: np.ndarray
    w_cov: np.ndarray


@dataclass
class UpdateResult:
    """Posterior plus the innovation diagnostics the robustness layers need."""

    estimate: StateEstimate
    innovation: np.ndarray
    innovation_cov: np.ndarray
    nis: float
    accepted: bool
    gate_threshold: Optional[float] = None


def _wrap_residual(values: np.ndarray, angular: Optional[np.ndarray]) -> np.ndarray:
    if angular is not None and np.any(angular):
        values = np.array(values, copy=True)
        wrapped = (values[..., angular] + np.pi) % (2.0 * np.pi) - np.pi
        values[..., angular] = np.where(wrapped == -np.pi, np.pi, wrapped)
    return values


def _gate_threshold(gate_cfg: Optional[GateConfig], dof: int) -> Optional[float]:
    if gate_cfg is None or dof < 1:
        return None
    gate_cfg.validate()
    return chi2_quantile(dof, gate_cfg.confidence)


def ekf_update(pred: StateEstimate, z: np.ndarray, predicted_z: np.ndarray,
               jac: np.ndarray, noise_cov: np.ndarray,
               angular: Optional[np.ndarray] = None,
               gate_cfg: Optional[GateConfig] = None) -> UpdateResult:
    """Linearized measurement update.

    K = P H^T S^-1 with S = H P H^T + R; the posterior covariance uses the
    Joseph form (I - KH) P (I - KH)^T + K R K^T, which stays PSD for any
    gain. When a gate config is given and the NIS exceeds the chi-square
    threshold, the prediction is returned as the posterior.
    """
    z = np.asarray(z, dtype=float)
    predicted_z = np.asarray(predicted_z, dtype=float)
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    noise_cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    n = pred.mean.size
    d = z.size
    if jac.shape != (d, n) or noise_cov.shape != (d, d):
        raise ValueError(
            f"layout mismatch: z {z.shape}, H {jac.shape}, R {noise_cov.shape}, n={n}"
        )

    innovation = _wrap_residual(z - predicted_z, angular)
    s_mat = symmetrize(jac @ pred.cov @ jac.T + noise_cov)
    solver = SpdSolver(s_mat)
    nis_value = solver.quad_form(innovation)

    threshold = _gate_threshold(gate_cfg, d)
    accepted = threshold is None or nis_value < threshold
    if not accepted:
        return UpdateResult(pred.copy(), innovation, s_mat, nis_value, False, threshold)

    gain = solver.solve(jac @ pred.cov).T          # P H^T S^-1
    mean = pred.mean + gain @ innovation
    closed = np.eye(n) - gain @ jac
    cov = symmetrize(closed @ pred.cov @ closed.T + gain @ noise_cov @ gain.T)
    posterior = StateEstimate(mean=mean, cov=cov, epoch=pred.epoch)
    return UpdateResult(posterior, innovation, s_mat, nis_value, True, threshold)


def sigma_points(est: StateEstimate, params: UkfParams = DEFAULT_UKF_PARAMS) -> SigmaSet:
    """Scaled unscented sigma set: 2n+1 points, row 0 at the mean."""
    n = est.mean.size
    lam = params.alpha ** 2 * (n + params.kappa) - n
    if n + lam <= 0:
        raise ValueError(
            f"unscented spread n + lambda must be > 0 (alpha={params.alpha}, kappa={params.kappa})"
        )
    root = chol_lower((n + lam) * est.cov)
    points = np.tile(est.mean, (2 * n + 1, 1))
    points[1:n + 1] += root.T
    points[n + 1:] -= root.T
    w_mean = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    w_cov = w_mean.copy()
    w_mean[0] = lam / (n + lam)
    w_cov[0] = w_mean[0] + (1.0 - params.alpha ** 2 + params.beta)
    return SigmaSet(points=points, w_mean=w_mean, w_cov=w_cov)


def cubature_points(est: StateEstimate):
    """Third-degree cubature rule: 2n equally weighted points at
    mean +/- sqrt(n) L_i, with L the lower Cholesky factor of P."""
    n = est.mean.size
    root = np.sqrt(n) * chol_lower(est.cov)
    points = np.tile(est.mean, (2 * n, 1))
    points[:n] += root.T
    points[n:] -= root.T
    weights = np.full(2 * n, 1.0 / (2.0 * n))
    return points, weights


def ukf_predict(est: StateEstimate, model: TransitionModel, process_noise: np.ndarray,
                params: UkfParams = DEFAULT_UKF_PARAMS) -> StateEstimate:
    """Sigma-point prediction through the (linear) transition; agrees with
    the closed-form propagate to rounding error and exists as a cross-check."""
    sigma = sigma_points(est, params)
    moved = sigma.points @ model.matrix.T
    mean = sigma.w_mean @ moved
    centered = moved - mean
    cov = symmetrize(
        (sigma.w_cov[:, None] * centered).T @ centered + process_noise
    )
    return StateEstimate(mean=mean, cov=cov, epoch=est.epoch + 1)


def _sigma_measurement_update(pred: StateEstimate, points: np.ndarray,
                              w_mean: np.ndarray, w_cov: np.ndarray,
                              z: np.ndarray, h: Callable, noise_cov: np.ndarray,
                              angular: Optional[np.ndarray],
                              gate_cfg: Optional[GateConfig]) -> UpdateResult:
    """Shared sigma-point update: projected points -> moments -> gain.

    Angular columns are averaged through residuals wrapped about the first
    point's projection, so a sigma cloud straddling +/-pi cannot smear.
    """
    z = np.asarray(z, dtype=float)
    projected = np.atleast_2d(np.asarray(h(points), dtype=float))
    reference = projected[0]
    offsets = _wrap_residual(projected - reference, angular)
    z_hat = reference + w_mean @ offsets
    residuals = _wrap_residual(projected - z_hat, angular)
    noise_cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    s_mat = symmetrize((w_cov[:, None] * residuals).T @ residuals + noise_cov)
    centered = points - pred.mean
    cross = (w_cov[:, None] * centered).T @ residuals  # (n, d)

    innovation = _wrap_residual(z - z_hat, angular)
    solver = SpdSolver(s_mat)
    nis_value = solver.quad_form(innovation)

    threshold = _gate_threshold(gate_cfg, z.size)
    accepted = threshold is None or nis_value < threshold
    if not accepted:
        return UpdateResult(pred.copy(), innovation, s_mat, nis_value, False, threshold)

    gain = solver.solve(cross.T).T                 # P_xz S^-1
    mean = pred.mean + gain @ innovation
    cov = symmetrize(pred.cov - gain @ s_mat @ gain.T)
    posterior = StateEstimate(mean=mean, cov=cov, epoch=pred.epoch)
    return UpdateResult(posterior, innovation, s_mat, nis_value, True, threshold)


def ukf_update(pred: StateEstimate, z: np.ndarray, h: Callable,
               noise_cov: np.ndarray, params: UkfParams = DEFAULT_UKF_PARAMS,
               angular: Optional[np.ndarray] = None,
               gate_cfg: Optional[GateConfig] = None) -> UpdateResult:
    """Unscented measurement update. ``h`` maps an (m, n) batch of states to
    (m, d) measurements."""
    sigma = sigma_points(pred, params)
    return _sigma_measurement_update(
        pred, sigma.points, sigma.w_mean, sigma.w_cov, z, h, noise_cov, angular, gate_cfg
    )


def ckf_update(pred: StateEstimate, z: np.ndarray, h: Callable,
               noise_cov: np.ndarray,
               angular: Optional[np.ndarray] = None,
               gate_cfg: Optional[GateConfig] = None) -> UpdateResult:
    """Cubature measurement update (2n equal weights); same algebra as the
    UKF with the cubature point set."""
    points, weights = cubature_points(pred)
    return _sigma_measurement_update(
        pred, points, weights, weights, z, h, noise_cov, angular, gate_cfg
    )
