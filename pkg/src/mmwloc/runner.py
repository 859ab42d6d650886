"""End-to-end run orchestration: scenario -> pipeline -> metrics -> report."""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import __version__
from ._kernels import active_backend
from .config import ScenarioConfig
from .errors import NumericalError
from .metrics import MetricReport, compute_report
from .pipeline import EpochLog, HybridPipeline, MobilityMode
from .scenario import GroundTruth, gen_trajectory, synthesize


@dataclass
class RunReport:
    """Aggregated outcome of one run; ``metrics`` describes the final
    trajectory (smoothed when smoothing is enabled, filtered otherwise)."""

    seed: int
    epochs: int
    filter: str
    gating: bool
    adaptation: bool
    smoothing: bool
    flat: bool
    metrics: MetricReport
    filtered: MetricReport
    smoothed: Optional[MetricReport]
    mode_histogram: dict
    mode_transitions: int
    gate_rejection_rate: float
    failed: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "tool": "mmwloc",
            "version": __version__,
            "backend": active_backend(),
            "seed": self.seed,
            "epochs": self.epochs,
            "filter": self.filter,
            "flags": {
                "gating": self.gating,
                "adaptation": self.adaptation,
                "smoothing": self.smoothing,
                "flat": self.flat,
            },
            "metrics": self.metrics.to_dict(),
            "filtered": self.filtered.to_dict(),
            "smoothed": self.smoothed.to_dict() if self.smoothed else None,
            "mode_histogram": self.mode_histogram,
            "mode_transitions": self.mode_transitions,
            "gate_rejection_rate": self.gate_rejection_rate,
        }


@dataclass
class RunResult:
    config: ScenarioConfig
    truth: GroundTruth
    bundles: list
    logs: List[EpochLog]
    filtered_means: Optional[np.ndarray]
    filtered_covs: Optional[np.ndarray]
    smoothed_means: Optional[np.ndarray]
    smoothed_covs: Optional[np.ndarray]
    report: Optional[RunReport]
    failed: Optional[str] = None


def simulate_scenario(cfg: ScenarioConfig):
    """Generate (truth, bundles) for a config; pure in (config, seed)."""
    cfg.validate()
    truth = gen_trajectory(
        cfg.trajectory, cfg.seed,
        bias_walk_sigma=cfg.bias_walk_sigma,
        doppler_coeff=cfg.doppler_spread_coeff,
    )
    bundles = synthesize(
        truth, cfg.anchors, cfg.noise, cfg.outliers, cfg.seed,
        odometry=cfg.odometry, noise_scale=cfg.noise_scale,
    )
    return truth, bundles


def run_scenario(cfg: ScenarioConfig, truth: Optional[GroundTruth] = None,
                 bundles: Optional[list] = None) -> RunResult:
    """Run the configured pipeline over a (possibly freshly simulated)
    measurement stream and compute the metric report.

    A numerical failure mid-run does not raise: the partial epoch logs are
    returned with ``failed`` set so callers can flush diagnostics.
    """
    cfg.validate()
    if (truth is None) != (bundles is None):
        raise ValueError("provide both truth and bundles, or neither")
    if truth is None:
        truth, bundles = simulate_scenario(cfg)
    if len(bundles) == 0:
        raise ValueError("measurement stream is empty")
    if len(bundles) != len(truth):
        raise ValueError("measurement stream and ground truth lengths differ")
    epochs = [b.epoch for b in bundles]
    if any(b - a != 1 for a, b in zip(epochs, epochs[1:])):
        raise ValueError("measurement stream epochs must be contiguous ascending")

    pipe = HybridPipeline(cfg.anchors, cfg.pipeline)
    pipe.initialize_from_truth(truth.states[0], epoch=epochs[0])

    failed = None
    try:
        for bundle in bundles:
            pipe.step(bundle)
        filtered_means, filtered_covs = pipe.filtered_trajectory()
        if cfg.pipeline.smoothing:
            smoothed_means, smoothed_covs = pipe.smoothed_trajectory()
        else:
            smoothed_means, smoothed_covs = None, None
    except NumericalError as exc:
        return RunResult(
            config=cfg, truth=truth, bundles=bundles, logs=pipe.logs,
            filtered_means=None, filtered_covs=None,
            smoothed_means=None, smoothed_covs=None,
            report=None, failed=str(exc),
        )

    n = len(pipe.logs)
    true_states = truth.states[:n]
    filtered_report = compute_report(
        filtered_means, filtered_covs, true_states, flat=cfg.pipeline.flat
    )
    smoothed_report = (
        compute_report(smoothed_means, smoothed_covs, true_states, flat=cfg.pipeline.flat)
        if smoothed_means is not None else None
    )

    histogram = {mode.value: 0 for mode in MobilityMode}
    for log in pipe.logs:
        histogram[log.mode.value] += 1
    transitions = sum(1 for log in pipe.logs if log.switched)
    decided = [log.accepted for log in pipe.logs if log.accepted is not None]
    rejection_rate = (
        sum(1 for a in decided if not a) / len(decided) if decided else 0.0
    )

    report = RunReport(
        seed=cfg.seed,
        epochs=n,
        filter=cfg.pipeline.filter,
        gating=cfg.pipeline.gating,
        adaptation=cfg.pipeline.adaptation,
        smoothing=cfg.pipeline.smoothing,
        flat=cfg.pipeline.flat,
        metrics=smoothed_report if smoothed_report is not None else filtered_report,
        filtered=filtered_report,
        smoothed=smoothed_report,
        mode_histogram=histogram,
        mode_transitions=transitions,
        gate_rejection_rate=rejection_rate,
        failed=failed,
    )
    return RunResult(
        config=cfg, truth=truth, bundles=bundles, logs=pipe.logs,
        filtered_means=filtered_means, filtered_covs=filtered_covs,
        smoothed_means=smoothed_means, smoothed_covs=smoothed_covs,
        report=report,
    )
