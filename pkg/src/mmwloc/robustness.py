"""Consistency hardening: chi-square innovation gating, windowed adaptive
noise scaling, and the fixed-interval Rauch-Tung-Striebel smoother."""

import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from ._linalg import SpdSolver, symmetrize
from .errors import NumericalError

GAMMA_MIN = 0.5
GAMMA_MAX = 2.0


# --- chi-square quantiles ---------------------------------------------------
# Self-contained regularized incomplete gamma (series + continued fraction)
# inverted by bisection. Tests validate against an independent implementation.

_GAMMA_EPS = 1e-15
_GAMMA_ITMAX = 500


def _gamma_p_series(a: float, x: float) -> float:
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_GAMMA_ITMAX):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # Lentz's algorithm for the upper-tail continued fraction
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_ITMAX + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def regularized_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0.0:
        raise ValueError(f"shape parameter must be > 0, got {a}")
    if x < 0.0:
        raise ValueError(f"argument must be >= 0, got {x}")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_contfrac(a, x)


def chi2_cdf(x: float, dof: int) -> float:
    return regularized_gamma_p(0.5 * dof, 0.5 * x)


@lru_cache(maxsize=None)
def chi2_quantile(dof: int, p: float) -> float:
    """p-quantile of the chi-square distribution with ``dof`` degrees of
    freedom, found by bracketing + bisection on the CDF."""
    if not isinstance(dof, (int, np.integer)) or dof < 1:
        raise ValueError(f"dof must be a positive integer, got {dof!r}")
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p}")
    hi = float(max(dof, 1))
    while chi2_cdf(hi, dof) < p:
        hi *= 2.0
        if hi > 1e12:
            raise NumericalError("quantile bracketing failed")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# --- innovation gating --------------------------------------------------------

@dataclass
class GateConfig:
    confidence: float = 0.99
    per_channel: bool = False  # diagnostics: also flag individual channels

    def validate(self) -> None:
        if not (0.0 < self.confidence < 1.0):
            raise ValueError(f"gate confidence must be in (0, 1), got {self.confidence}")


@dataclass
class GateDecision:
    accepted: bool
    nis: float
    threshold: float
    dof: int
    channel_flags: Optional[np.ndarray] = None  # per-channel normalized-residual flags


def nis(innovation: np.ndarray, innovation_cov: np.ndarray) -> float:
    """Normalized innovation squared y^T S^-1 y via an SPD factorization."""
    innovation = np.asarray(innovation, dtype=float)
    if innovation.size == 0:
        return 0.0
    return SpdSolver(innovation_cov).quad_form(innovation)


def gate(innovation: np.ndarray, innovation_cov: np.ndarray,
         cfg: GateConfig) -> GateDecision:
    """Accept iff NIS stays below the chi-square quantile at cfg.confidence."""
    cfg.validate()
    innovation = np.asarray(innovation, dtype=float)
    dof = innovation.size
    value = nis(innovation, innovation_cov)
    threshold = chi2_quantile(dof, cfg.confidence) if dof >= 1 else math.inf
    flags = None
    if cfg.per_channel and dof >= 1:
        scalar_gate = chi2_quantile(1, cfg.confidence)
        flags = innovation ** 2 / np.diag(np.asarray(innovation_cov)) > scalar_gate
    return GateDecision(accepted=value < threshold, nis=value,
                        threshold=threshold, dof=dof, channel_flags=flags)


# --- adaptive noise scaling ---------------------------------------------------

@dataclass
class AdaptationState:
    """Sliding window of normalized NIS values driving the joint Q/R scale.

    Once the window is full, gamma is recomputed every epoch as the clamped
    window mean of NIS/dof; before that it stays at 1. The clamp to
    [0.5, 2] bounds the feedback loop by construction.
    """

    window: int = 20
    gamma: float = 1.0
    values: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"adaptation window must be >= 1, got {self.window}")
        self.values = deque(self.values, maxlen=self.window)


def adapt(state: AdaptationState, latest_nis: float, dof: int) -> float:
    """Push NIS/dof into the window and return the (possibly updated) gamma."""
    if dof < 1:
        raise ValueError(f"dof must be >= 1, got {dof}")
    state.values.append(latest_nis / dof)
    if len(state.values) == state.window:
        mean = sum(state.values) / state.window
        state.gamma = min(GAMMA_MAX, max(GAMMA_MIN, mean))
    return state.gamma


# --- RTS smoothing -------------------------------------------------------------

@dataclass
class SmootherInput:
    """Per-epoch forward-filter history for one smoothing window.

    ``predicted_*[k]`` is the prediction FOR epoch k (made at k-1); entry 0
    is present for shape symmetry but unused. ``transitions[k]`` is the
    transition matrix used to reach epoch k. Predicted covariances already
    contain the gamma-scaled process noise the filter actually applied, so
    the backward pass replays exactly what the forward pass used.
    """

    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    transitions: np.ndarray

    def __post_init__(self):
        n = len(self.filtered_means)
        for name in ("filtered_covs", "predicted_means", "predicted_covs", "transitions"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"smoother input {name} length != {n}")
        if n == 0:
            raise ValueError("smoother window is empty")


def rts_smooth(data: SmootherInput):
    """Backward RTS pass over one window.

    Returns (means, covs) of the same length as the input; the terminal epoch
    is seeded with its filtered estimate. Gains use the logged predictions:
    C_k = P_k|k F^T P_k+1|k^-1.
    """
    n = len(data.filtered_means)
    means = np.array(data.filtered_means, dtype=float, copy=True)
    covs = np.array(data.filtered_covs, dtype=float, copy=True)
    for k in range(n - 2, -1, -1):
        f_next = data.transitions[k + 1]
        p_pred = data.predicted_covs[k + 1]
        try:
            solver = SpdSolver(p_pred)
        except NumericalError as exc:
            raise NumericalError(f"singular predicted covariance at offset {k + 1}") from exc
        # C = P_f F^T P_pred^-1  computed as (P_pred^-1 (F P_f))^T
        gain = solver.solve(f_next @ covs[k]).T
        means[k] = means[k] + gain @ (means[k + 1] - data.predicted_means[k + 1])
        covs[k] = symmetrize(
            covs[k] + gain @ (covs[k + 1] - p_pred) @ gain.T
        )
    return means, covs
