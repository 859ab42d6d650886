"""7-state constant-velocity kinematics.

State layout: [x, y, z, vx, vy, vz, b] with positions in m, velocities in
m/s and b the slowly varying Doppler/oscillator bias expressed in m/s
radial-velocity equivalent (bias_Hz = bias_ms * f_c / c for a carrier f_c).
"""

from dataclasses import dataclass

import numpy as np

from ._linalg import symmetrize

STATE_DIM = 7

POS = slice(0, 3)
VEL = slice(3, 6)
BIAS = 6


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """Discrete constant-velocity transition: block identity with dt coupling
    from velocity into position and an independent bias row."""

    matrix: np.ndarray
    dt: float


@dataclass
class ProcessNoiseParams:
    """Diagonal process-noise settings.

    Horizontal position/velocity noise is symmetric in x and y; vertical
    terms may differ (and are zeroed in flat-terrain mode). The velocity
    variances scale affinely with the per-epoch Doppler spread:
    sigma_v^2 = base * (1 + kappa_d * spread), so zero spread recovers the
    static filter.
    """

    sigma_p2: float = 0.005
    sigma_pz2: float = 0.002
    sigma_v2_base: float = 0.02
    sigma_vz2_base: float = 0.002
    sigma_b2: float = 5e-4
    kappa_d: float = 12.0

    def validate(self) -> None:
        for name in ("sigma_p2", "sigma_pz2", "sigma_v2_base",
                     "sigma_vz2_base", "sigma_b2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"process noise {name} must be >= 0, got {value}")

    def flattened(self) -> "ProcessNoiseParams":
        """Copy with the vertical axis pinned (flat-terrain mode)."""
        return ProcessNoiseParams(
            sigma_p2=self.sigma_p2,
            sigma_pz2=0.0,
            sigma_v2_base=self.sigma_v2_base,
            sigma_vz2_base=0.0,
            sigma_b2=self.sigma_b2,
            kappa_d=self.kappa_d,
        )


@dataclass
class StateEstimate:
    """Filter belief: mean state and covariance at a given epoch."""

    mean: np.ndarray
    cov: np.ndarray
    epoch: int = 0

    def copy(self) -> "StateEstimate":
        return StateEstimate(self.mean.copy(), self.cov.copy(), self.epoch)

    @property
    def position(self) -> np.ndarray:
        return self.mean[POS]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[VEL]

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.mean[VEL]))


def build_transition(dt: float) -> TransitionModel:
    """Constant-velocity transition matrix for sampling interval dt."""
    if not np.isfinite(dt) or dt <= 0.0:
        raise ValueError(f"dt must be positive and finite, got {dt}")
    mat = np.eye(STATE_DIM)
    mat[0, 3] = dt
    mat[1, 4] = dt
    mat[2, 5] = dt
    mat.flags.writeable = False
    return TransitionModel(matrix=mat, dt=float(dt))


def build_process_noise(params: ProcessNoiseParams, doppler_spread: float) -> np.ndarray:
    """Diagonal 7x7 process noise with Doppler-spread-scaled velocity terms."""
    params.validate()
    if not np.isfinite(doppler_spread) or doppler_spread < 0.0:
        raise ValueError(f"doppler_spread must be >= 0, got {doppler_spread}")
    scale = 1.0 + params.kappa_d * doppler_spread
    sigma_v2 = params.sigma_v2_base * scale
    sigma_vz2 = params.sigma_vz2_base * scale
    return np.diag([
        params.sigma_p2, params.sigma_p2, params.sigma_pz2,
        sigma_v2, sigma_v2, sigma_vz2,
        params.sigma_b2,
    ])


def propagate(est: StateEstimate, model: TransitionModel, process_noise: np.ndarray) -> StateEstimate:
    """One prediction step: mean -> F mean, cov -> F P F^T + Q (symmetrized)."""
    mat = model.matrix
    n = mat.shape[0]
    if est.mean.shape != (n,) or est.cov.shape != (n, n):
        raise ValueError(
            f"state dimension mismatch: mean {est.mean.shape}, cov {est.cov.shape}, F {mat.shape}"
        )
    if process_noise.shape != (n, n):
        raise ValueError(f"process noise shape {process_noise.shape} != {(n, n)}")
    mean = mat @ est.mean
    cov = symmetrize(mat @ est.cov @ mat.T + process_noise)
    return StateEstimate(mean=mean, cov=cov, epoch=est.epoch + 1)
