"""Speed-gated hybrid filter pipeline.

Per epoch: predict with the shared constant-velocity model (gamma-scaled,
Doppler-spread-adapted process noise), classify mobility from the predicted
speed, route to the EKF (low mobility) or UKF (high mobility) update with
chi-square gating, feed accepted NIS values to the adaptive noise scaler,
and log everything needed for windowed RTS smoothing afterwards.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DegenerateGeometryError, NumericalError
from .filters import (
    DEFAULT_UKF_PARAMS,
    UkfParams,
    UpdateResult,
    ckf_update,
    ekf_update,
    ukf_update,
)
from .measurement import (
    Anchor,
    MeasurementBundle,
    align_bundle,
    evaluate_stack,
    measurement_jacobian,
    sort_anchors,
)
from .robustness import (
    AdaptationState,
    GateConfig,
    SmootherInput,
    adapt,
    chi2_quantile,
    rts_smooth,
)
from .state_space import (
    ProcessNoiseParams,
    StateEstimate,
    build_process_noise,
    build_transition,
    propagate,
)

FILTER_CHOICES = ("hybrid", "ekf", "ukf", "ckf")


class MobilityMode(Enum):
    LOW = "low_mobility"
    HIGH = "high_mobility"
    OUT_OF_RANGE = "out_of_range"


@dataclass
class InitOffsets:
    """Initialization relative to first-epoch ground truth: mean = truth +
    offsets, diagonal covariance from the *_var entries."""

    position: tuple = (1.0, 1.0, 1.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    bias: float = 0.0
    position_var: float = 10.0
    velocity_var: float = 4.0
    bias_var: float = 1.0


@dataclass
class PipelineConfig:
    filter: str = "hybrid"
    dt: float = 1.0
    flat: bool = False
    v_lm: float = 2.0               # m/s, low-mobility ceiling
    v_hm: float = 20.0              # m/s, design window ceiling
    hysteresis: float = 0.2         # m/s band around v_lm
    gating: bool = True
    gate: GateConfig = field(default_factory=GateConfig)
    adaptation: bool = True
    adaptation_window: int = 20
    smoothing: bool = True
    smoother_window: int = 200
    ukf: UkfParams = field(default_factory=UkfParams)
    process_noise: ProcessNoiseParams = field(default_factory=ProcessNoiseParams)
    init: InitOffsets = field(default_factory=InitOffsets)

    def validate(self) -> None:
        problems = []
        if self.filter not in FILTER_CHOICES:
            problems.append(f"pipeline.filter must be one of {FILTER_CHOICES}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            problems.append("pipeline.dt must be > 0")
        if not (0.0 < self.v_lm < self.v_hm):
            problems.append(
                f"pipeline.v_lm ({self.v_lm}) must be positive and below "
                f"pipeline.v_hm ({self.v_hm})"
            )
        if self.hysteresis < 0.0:
            problems.append("pipeline.hysteresis must be >= 0")
        if self.adaptation_window < 1:
            problems.append("pipeline.adaptation_window must be >= 1")
        if self.smoother_window < 1:
            problems.append("pipeline.smoother_window must be >= 1")
        try:
            self.gate.validate()
        except ValueError as exc:
            problems.append(f"pipeline.gate: {exc}")
        try:
            self.process_noise.validate()
        except ValueError as exc:
            problems.append(f"pipeline.process_noise: {exc}")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class EpochLog:
    """One per-epoch record; the smoother and the reports read these back."""

    epoch: int
    mode: MobilityMode
    filter_used: str
    speed: float
    predicted: StateEstimate
    posterior: StateEstimate
    innovation: Optional[np.ndarray]
    nis: Optional[float]
    accepted: Optional[bool]        # None when the epoch had no usable update
    gate_threshold: Optional[float]
    gamma: float
    switched: bool
    warning: Optional[str]
    process_noise: np.ndarray
    excluded_channels: int = 0


def estimate_speed(pred: StateEstimate) -> float:
    """Speed of the predicted mean (the mobility classifier's input)."""
    return float(np.linalg.norm(pred.mean[3:6]))


def classify(speed: float, prev_mode: Optional[MobilityMode],
             cfg: PipelineConfig) -> MobilityMode:
    """Threshold classifier with a hysteresis band around v_lm.

    Within the band the previous mode persists; above v_hm the epoch is out
    of the design window.
    """
    if not (speed >= 0.0 and math.isfinite(speed)):
        raise ValueError(f"speed must be finite and >= 0, got {speed}")
    if speed > cfg.v_hm:
        return MobilityMode.OUT_OF_RANGE
    boundary = cfg.v_lm
    if prev_mode is MobilityMode.LOW:
        boundary = cfg.v_lm + cfg.hysteresis
    elif prev_mode in (MobilityMode.HIGH, MobilityMode.OUT_OF_RANGE):
        boundary = cfg.v_lm - cfg.hysteresis
    return MobilityMode.LOW if speed <= boundary else MobilityMode.HIGH


def handoff(est: StateEstimate, from_mode: MobilityMode,
            to_mode: MobilityMode) -> StateEstimate:
    """Branch handoff. Both filters share the 7-state parameterization, so
    this is the identity on mean and covariance; the switch itself is logged
    by the caller."""
    if from_mode is to_mode:
        raise ValueError("handoff requires distinct modes")
    return est


class HybridPipeline:
    """Single-track pipeline instance. Not thread-safe; run one per track."""

    def __init__(self, anchors, config: PipelineConfig):
        config.validate()
        self.config = config
        self.anchors = sort_anchors(anchors)
        self.transition = build_transition(config.dt)
        self.process_params = (
            config.process_noise.flattened() if config.flat else config.process_noise
        )
        self.adaptation = AdaptationState(window=config.adaptation_window)
        self.estimate: Optional[StateEstimate] = None
        self.mode: Optional[MobilityMode] = None
        self.logs: List[EpochLog] = []
        self._layouts = {}

    # -- initialization ------------------------------------------------------

    def initialize_from_truth(self, true_state, epoch: int = 0) -> StateEstimate:
        """Perturbed-truth initialization (the default experiment setup)."""
        init = self.config.init
        mean = np.asarray(true_state, dtype=float).copy()
        mean[0:3] += np.asarray(init.position, dtype=float)
        mean[3:6] += np.asarray(init.velocity, dtype=float)
        mean[6] += init.bias
        var = [init.position_var] * 3 + [init.velocity_var] * 3 + [init.bias_var]
        if self.config.flat:
            mean[2] = true_state[2]
            mean[5] = true_state[5]
            var[2] = 0.0
            var[5] = 0.0
        est = StateEstimate(mean=mean, cov=np.diag(var), epoch=epoch)
        self.initialize(est)
        return est

    def initialize(self, est: StateEstimate) -> None:
        self.estimate = est.copy()
        self.mode = None
        self.logs = []
        self.adaptation = AdaptationState(window=self.config.adaptation_window)

    # -- per-epoch loop --------------------------------------------------------

    def _align(self, bundle: MeasurementBundle, include_odometry: bool):
        use_odo = include_odometry and bundle.odometry is not None
        key = (tuple((e.anchor_id, e.channel) for e in bundle.entries), use_odo)
        layout = self._layouts.get(key)
        if layout is None:
            layout, z, rdiag = align_bundle(self.anchors, bundle, include_odometry)
            self._layouts[key] = layout
            return layout, z, rdiag
        # bundle entries are canonically sorted, so they align with the rows
        values = [e.value for e in bundle.entries]
        variances = [e.variance for e in bundle.entries]
        if use_odo:
            values.extend(bundle.odometry)
            variances.extend(bundle.odometry_variance)
        return layout, np.array(values), np.array(variances)

    def _run_update(self, filter_used: str, pred: StateEstimate, layout,
                    z: np.ndarray, rdiag: np.ndarray, gamma: float,
                    gate_cfg: Optional[GateConfig]) -> UpdateResult:
        noise_cov = np.diag(gamma * rdiag)
        if filter_used == "ekf":
            predicted_z = evaluate_stack(pred.mean, layout)
            jac = measurement_jacobian(pred.mean, layout)
            return ekf_update(pred, z, predicted_z, jac, noise_cov,
                              angular=layout.angular, gate_cfg=gate_cfg)
        if filter_used == "ukf":
            return ukf_update(pred, z, lambda pts: evaluate_stack(pts, layout),
                              noise_cov, self.config.ukf,
                              angular=layout.angular, gate_cfg=gate_cfg)
        return ckf_update(pred, z, lambda pts: evaluate_stack(pts, layout),
                          noise_cov, angular=layout.angular, gate_cfg=gate_cfg)

    def _channel_screen(self, filter_used: str, pred: StateEstimate, layout,
                        z: np.ndarray, rdiag: np.ndarray, gamma: float,
                        gate_cfg: GateConfig, first: UpdateResult):
        """Per-channel chi-square exclusion on top of the bundle gate.

        Channels whose marginal normalized residual y_j^2 / S_jj exceeds the
        scalar gate are dropped and the update is retried on the remainder;
        the bundle gate still decides acceptance of whatever survives. Falls
        back to the plain bundle decision when exclusion cannot produce an
        acceptable subset."""
        scalar_gate = chi2_quantile(1, gate_cfg.confidence)
        keep = np.ones(layout.dim, dtype=bool)
        current = first
        for _ in range(3):
            ratios = current.innovation ** 2 / np.diag(current.innovation_cov)
            flagged = ratios > scalar_gate
            if not flagged.any():
                break
            kept_idx = np.flatnonzero(keep)
            keep[kept_idx[flagged]] = False
            if not keep.any():
                return first, 0
            current = self._run_update(
                filter_used, pred, layout.subset(keep), z[keep], rdiag[keep],
                gamma, gate_cfg,
            )
        excluded = int(layout.dim - keep.sum())
        if excluded and current.accepted:
            return current, excluded
        if current.accepted or first.accepted:
            # no exclusions needed, or exclusion failed to clean the bundle:
            # fall back to whichever full-bundle outcome stands
            return (current, excluded) if current.accepted else (first, 0)
        return first, 0

    def step(self, bundle: MeasurementBundle) -> EpochLog:
        cfg = self.config
        if self.estimate is None:
            raise RuntimeError("pipeline is not initialized")
        if not (np.all(np.isfinite(self.estimate.mean))
                and np.all(np.isfinite(self.estimate.cov))):
            raise NumericalError(f"state diverged before epoch {bundle.epoch}")
        if bundle.epoch not in (self.estimate.epoch, self.estimate.epoch + 1):
            raise ValueError(
                f"bundle epoch {bundle.epoch} does not follow estimate epoch "
                f"{self.estimate.epoch}"
            )

        gamma = self.adaptation.gamma if cfg.adaptation else 1.0
        q = gamma * build_process_noise(self.process_params, bundle.doppler_spread)
        if bundle.epoch == self.estimate.epoch:
            # initialization epoch: the prior belief is the prediction
            pred = self.estimate.copy()
        else:
            pred = propagate(self.estimate, self.transition, q)

        speed = estimate_speed(pred)
        warning = None
        mode = classify(speed, self.mode, cfg)
        if cfg.filter == "hybrid":
            if mode is MobilityMode.OUT_OF_RANGE:
                filter_used = "ukf"
                warning = "speed above design window; falling back to ukf"
            else:
                filter_used = "ekf" if mode is MobilityMode.LOW else "ukf"
        else:
            filter_used = cfg.filter
        switched = self.mode is not None and mode is not self.mode
        if switched:
            pred = handoff(pred, self.mode, mode)

        gate_cfg = cfg.gate if cfg.gating else None
        result: Optional[UpdateResult] = None
        excluded = 0
        try:
            layout, z, rdiag = self._align(
                bundle, include_odometry=(mode is MobilityMode.LOW)
            )
            if layout.dim > 0:
                result = self._run_update(filter_used, pred, layout, z, rdiag,
                                          gamma, gate_cfg)
                if gate_cfg is not None and gate_cfg.per_channel:
                    result, excluded = self._channel_screen(
                        filter_used, pred, layout, z, rdiag, gamma, gate_cfg, result
                    )
        except (NumericalError, DegenerateGeometryError) as exc:
            result = None
            warning = f"update failed, epoch is prediction-only: {exc}"

        if result is None:
            posterior = pred.copy()
            log = EpochLog(
                epoch=bundle.epoch, mode=mode, filter_used=filter_used,
                speed=speed, predicted=pred, posterior=posterior,
                innovation=None, nis=None, accepted=None, gate_threshold=None,
                gamma=gamma, switched=switched, warning=warning, process_noise=q,
                excluded_channels=excluded,
            )
        else:
            posterior = result.estimate
            # every computed NIS feeds the adapter so that gamma can grow and
            # reopen the gate during sustained model mismatch; values from
            # rejected epochs are winsorized at the gate threshold so isolated
            # outliers cannot pin gamma at its ceiling (accepted epochs sit
            # below the threshold already, so this changes nothing for them)
            if cfg.adaptation and result.innovation.size >= 1:
                fed = result.nis
                if result.gate_threshold is not None:
                    fed = min(fed, result.gate_threshold)
                adapt(self.adaptation, fed, result.innovation.size)
            log = EpochLog(
                epoch=bundle.epoch, mode=mode, filter_used=filter_used,
                speed=speed, predicted=pred, posterior=posterior,
                innovation=result.innovation, nis=result.nis,
                accepted=result.accepted, gate_threshold=result.gate_threshold,
                gamma=gamma, switched=switched, warning=warning, process_noise=q,
                excluded_channels=excluded,
            )
        if not (np.all(np.isfinite(posterior.mean))
                and np.all(np.isfinite(posterior.cov))):
            raise NumericalError(f"state diverged at epoch {bundle.epoch}")
        self.estimate = posterior
        self.mode = mode
        self.logs.append(log)
        return log

    # -- post-processing -------------------------------------------------------

    def filtered_trajectory(self):
        means = np.array([log.posterior.mean for log in self.logs])
        covs = np.array([log.posterior.cov for log in self.logs])
        return means, covs

    def smoothed_trajectory(self):
        """Windowed RTS smoothing over the accumulated logs (window length
        config.smoother_window; a shorter terminal window is smoothed as-is)."""
        if not self.logs:
            raise ValueError("no epochs to smooth")
        n = len(self.logs)
        window = self.config.smoother_window
        means = np.empty((n, 7))
        covs = np.empty((n, 7, 7))
        fmat = self.transition.matrix
        for start in range(0, n, window):
            chunk = self.logs[start:start + window]
            data = SmootherInput(
                filtered_means=np.array([l.posterior.mean for l in chunk]),
                filtered_covs=np.array([l.posterior.cov for l in chunk]),
                predicted_means=np.array([l.predicted.mean for l in chunk]),
                predicted_covs=np.array([l.predicted.cov for l in chunk]),
                transitions=np.broadcast_to(fmat, (len(chunk), 7, 7)),
            )
            smoothed_means, smoothed_covs = rts_smooth(data)
            means[start:start + len(chunk)] = smoothed_means
            covs[start:start + len(chunk)] = smoothed_covs
        return means, covs
