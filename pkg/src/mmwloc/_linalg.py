"""Shared linear-algebra helpers: SPD solves and PSD-preserving utilities."""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError

# Condition-number ceiling for equilibrated SPD matrices.
MAX_CONDITION = 1e12


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """Return the symmetric part 0.5 * (M + M^T)."""
    return 0.5 * (mat + mat.T)


def chol_lower(mat: np.ndarray, jitter: float = 1e-12) -> np.ndarray:
    """Lower-triangular Cholesky factor with a single jittered retry.

    Semidefinite inputs (e.g. pinned-axis covariances in flat mode) fail a
    plain factorization; adding jitter * I once makes them factorable with
    negligible perturbation.
    """
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"covariance factorization failed even with {jitter:g} jitter"
        ) from exc


class SpdSolver:
    """Cholesky solver for an SPD matrix with diagonal (Jacobi) equilibration.

    Innovation covariances here mix units (seconds, radians, m/s), so the raw
    condition number is dominated by unit disparity rather than true near
    singularity. Solves are performed on D^-1 S D^-1 with D = sqrt(diag(S)),
    and the ill-conditioning check applies to that equilibrated matrix. The
    condition estimate is the squared ratio of extreme Cholesky diagonal
    entries, a cheap lower bound adequate for failure detection.
    """

    def __init__(self, mat: np.ndarray, max_cond: float = MAX_CONDITION):
        mat = np.asarray(mat, dtype=float)
        diag = np.diag(mat)
        if mat.size == 0:
            raise NumericalError("cannot factor an empty matrix")
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0.0):
            raise NumericalError("matrix has non-positive or non-finite diagonal")
        self._scale = np.sqrt(diag)
        normalized = symmetrize(mat / np.outer(self._scale, self._scale))
        try:
            self._factor = cho_factor(normalized, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("innovation covariance is singular") from exc
        ldiag = np.diag(self._factor[0])
        cond_est = (ldiag.max() / ldiag.min()) ** 2
        if not np.isfinite(cond_est) or cond_est > max_cond:
            raise NumericalError(
                f"innovation covariance too ill-conditioned (est. {cond_est:.3g})"
            )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Return S^-1 @ rhs for a vector or matrix right-hand side."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == 1:
            scaled = rhs / self._scale
            return cho_solve(self._factor, scaled, check_finite=False) / self._scale
        scaled = rhs / self._scale[:, None]
        sol = cho_solve(self._factor, scaled, check_finite=False)
        return sol / self._scale[:, None]

    def quad_form(self, vec: np.ndarray) -> float:
        """Return vec^T S^-1 vec (always >= 0 for SPD S)."""
        scaled = np.asarray(vec, dtype=float) / self._scale
        return float(scaled @ cho_solve(self._factor, scaled, check_finite=False))
