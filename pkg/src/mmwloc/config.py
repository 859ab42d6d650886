"""Scenario configuration: the single structured document the CLI consumes.

Every tunable (speed gates 2.0/20.0 m/s, gate confidence 0.99, the [0.5, 2]
noise-scale clamp, smoother window 200, dt = 1 s, ...) surfaces as a named,
defaulted key. Validation errors name the offending field path.
"""

import copy
from dataclasses import dataclass, field
from typing import List, Optional

import yaml

from .errors import ConfigError
from .measurement import Anchor, Channel, NoiseProfile
from .pipeline import FILTER_CHOICES, InitOffsets, PipelineConfig
from .robustness import GateConfig
from .scenario import (
    OutlierModel,
    TrajectoryProfile,
    default_anchors,
    pedestrian_profile,
)
from .filters import UkfParams
from .state_space import ProcessNoiseParams


@dataclass
class ScenarioConfig:
    """Umbrella config: world (anchors, trajectory, noise) + filter settings."""

    seed: int = 0
    anchors: List[Anchor] = field(default_factory=default_anchors)
    trajectory: TrajectoryProfile = field(default_factory=pedestrian_profile)
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    outliers: OutlierModel = field(default_factory=OutlierModel)
    odometry: bool = True
    doppler_spread_coeff: float = 0.1
    bias_walk_sigma: float = 0.01
    noise_scale: float = 1.0
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def validate(self) -> None:
        problems = []
        try:
            self.trajectory.validate()
        except ValueError as exc:
            problems.append(f"trajectory: {exc}")
        try:
            self.noise.validate()
        except ValueError as exc:
            problems.append(f"noise: {exc}")
        try:
            self.outliers.validate()
        except ValueError as exc:
            problems.append(f"outliers: {exc}")
        if self.doppler_spread_coeff < 0.0:
            problems.append("doppler_spread_coeff must be >= 0")
        if self.bias_walk_sigma < 0.0:
            problems.append("bias_walk_sigma must be >= 0")
        if self.noise_scale < 0.0:
            problems.append("noise_scale must be >= 0")
        # pipeline dt always follows the trajectory's sampling interval
        self.pipeline.dt = self.trajectory.dt
        try:
            self.pipeline.validate()
        except ConfigError as exc:
            problems.append(str(exc))
        try:
            from .measurement import sort_anchors

            sort_anchors(self.anchors)
        except ValueError as exc:
            problems.append(f"anchors: {exc}")
        if problems:
            raise ConfigError("; ".join(problems))

    def copy(self) -> "ScenarioConfig":
        return copy.deepcopy(self)


def _reject_unknown(mapping: dict, allowed, path: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")


def _get(mapping: dict, key: str, default, path: str, kind=None):
    value = mapping.get(key, default)
    if kind is not None and value is not None and not isinstance(value, kind):
        names = kind if isinstance(kind, type) else kind[0]
        raise ConfigError(f"{path}.{key}: expected {names.__name__}, got {value!r}")
    return value


def _anchor_from_dict(entry: dict, path: str) -> Anchor:
    if not isinstance(entry, dict):
        raise ConfigError(f"{path}: anchor entries must be mappings")
    _reject_unknown(entry, ("id", "position", "kind", "channels"), path)
    for required in ("id", "position"):
        if required not in entry:
            raise ConfigError(f"{path}.{required}: required")
    channels = entry.get("channels")
    try:
        parsed = (
            frozenset(Channel.from_key(str(c)) for c in channels)
            if channels is not None
            else frozenset({Channel.TOA, Channel.AOA_AZ, Channel.AOA_EL, Channel.AOD})
        )
        return Anchor(
            id=str(entry["id"]),
            position=entry["position"],
            kind=entry.get("kind", "physical"),
            channels=parsed,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


_NOISE_KEYS = {
    "toa": "sigma_toa",
    "aoa_az": "sigma_az",
    "aoa_el": "sigma_el",
    "aod": "sigma_aod",
    "doppler": "sigma_dop",
    "odo_speed": "sigma_vodo",
    "odo_heading": "sigma_hodo",
}


def from_dict(raw: dict) -> ScenarioConfig:
    """Build and validate a ScenarioConfig from a parsed YAML mapping."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _reject_unknown(
        raw,
        ("seed", "anchors", "trajectory", "noise", "outliers", "odometry",
         "doppler_spread_coeff", "bias_walk_sigma", "noise_scale", "pipeline"),
        "config",
    )
    cfg = ScenarioConfig()
    cfg.seed = int(_get(raw, "seed", 0, "config", (int,)))
    cfg.odometry = bool(_get(raw, "odometry", True, "config", (bool,)))
    cfg.doppler_spread_coeff = float(_get(raw, "doppler_spread_coeff", 0.1, "config", (int, float)))
    cfg.bias_walk_sigma = float(_get(raw, "bias_walk_sigma", 0.01, "config", (int, float)))
    cfg.noise_scale = float(_get(raw, "noise_scale", 1.0, "config", (int, float)))

    if "anchors" in raw:
        anchors = raw["anchors"]
        if not isinstance(anchors, list):
            raise ConfigError("anchors: expected a list")
        cfg.anchors = [
            _anchor_from_dict(a, f"anchors[{i}]") for i, a in enumerate(anchors)
        ]

    if "trajectory" in raw:
        t = raw["trajectory"]
        _reject_unknown(
            t,
            ("kind", "duration", "dt", "speed_range", "speed_profile",
             "waypoints", "heading_noise", "speed_jitter"),
            "trajectory",
        )
        cfg.trajectory = TrajectoryProfile(
            kind=_get(t, "kind", "pedestrian", "trajectory", (str,)),
            duration=int(_get(t, "duration", 200, "trajectory", (int,))),
            dt=float(_get(t, "dt", 1.0, "trajectory", (int, float))),
            speed_range=(
                tuple(float(v) for v in t["speed_range"])
                if t.get("speed_range") is not None else None
            ),
            speed_profile=_get(t, "speed_profile", "wander", "trajectory", (str,)),
            waypoints=t.get("waypoints"),
            heading_noise=float(_get(t, "heading_noise", 0.02, "trajectory", (int, float))),
            speed_jitter=(
                float(t["speed_jitter"]) if t.get("speed_jitter") is not None else None
            ),
        )

    if "noise" in raw:
        n = raw["noise"]
        _reject_unknown(n, _NOISE_KEYS, "noise")
        kwargs = {}
        for key, attr in _NOISE_KEYS.items():
            if key in n:
                kwargs[attr] = float(n[key])
        cfg.noise = NoiseProfile(**kwargs)

    if "outliers" in raw:
        o = raw["outliers"]
        _reject_unknown(o, ("rate", "magnitude", "channels"), "outliers")
        channels = o.get("channels")
        try:
            parsed = (
                frozenset(Channel.from_key(str(c)) for c in channels)
                if channels is not None
                else OutlierModel().channels
            )
        except ValueError as exc:
            raise ConfigError(f"outliers.channels: {exc}") from None
        cfg.outliers = OutlierModel(
            rate=float(_get(o, "rate", 0.0, "outliers", (int, float))),
            magnitude=float(_get(o, "magnitude", 10.0, "outliers", (int, float))),
            channels=parsed,
        )

    if "pipeline" in raw:
        p = raw["pipeline"]
        _reject_unknown(
            p,
            ("filter", "flat", "v_lm", "v_hm", "hysteresis", "gating",
             "gate_confidence", "adaptation", "adaptation_window", "smoothing",
             "smoother_window", "ukf", "process_noise", "init"),
            "pipeline",
        )
        pl = PipelineConfig(
            filter=_get(p, "filter", "hybrid", "pipeline", (str,)),
            flat=bool(_get(p, "flat", False, "pipeline", (bool,))),
            v_lm=float(_get(p, "v_lm", 2.0, "pipeline", (int, float))),
            v_hm=float(_get(p, "v_hm", 20.0, "pipeline", (int, float))),
            hysteresis=float(_get(p, "hysteresis", 0.2, "pipeline", (int, float))),
            gating=bool(_get(p, "gating", True, "pipeline", (bool,))),
            gate=GateConfig(
                confidence=float(_get(p, "gate_confidence", 0.99, "pipeline", (int, float)))
            ),
            adaptation=bool(_get(p, "adaptation", True, "pipeline", (bool,))),
            adaptation_window=int(_get(p, "adaptation_window", 20, "pipeline", (int,))),
            smoothing=bool(_get(p, "smoothing", True, "pipeline", (bool,))),
            smoother_window=int(_get(p, "smoother_window", 200, "pipeline", (int,))),
        )
        if "ukf" in p:
            u = p["ukf"]
            _reject_unknown(u, ("alpha", "beta", "kappa"), "pipeline.ukf")
            pl.ukf = UkfParams(
                alpha=float(u.get("alpha", 1.0)),
                beta=float(u.get("beta", 2.0)),
                kappa=float(u.get("kappa", 3.0)),
            )
        if "process_noise" in p:
            q = p["process_noise"]
            _reject_unknown(
                q,
                ("sigma_p2", "sigma_pz2", "sigma_v2_base", "sigma_vz2_base",
                 "sigma_b2", "kappa_d"),
                "pipeline.process_noise",
            )
            pl.process_noise = ProcessNoiseParams(**{k: float(v) for k, v in q.items()})
        if "init" in p:
            i = p["init"]
            _reject_unknown(
                i,
                ("position", "velocity", "bias", "position_var", "velocity_var",
                 "bias_var"),
                "pipeline.init",
            )
            defaults = InitOffsets()
            pl.init = InitOffsets(
                position=tuple(i.get("position", defaults.position)),
                velocity=tuple(i.get("velocity", defaults.velocity)),
                bias=float(i.get("bias", defaults.bias)),
                position_var=float(i.get("position_var", defaults.position_var)),
                velocity_var=float(i.get("velocity_var", defaults.velocity_var)),
                bias_var=float(i.get("bias_var", defaults.bias_var)),
            )
        cfg.pipeline = pl

    cfg.validate()
    return cfg


def load_config(path) -> ScenarioConfig:
    """Parse and validate a YAML scenario config file."""
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if raw is None:
        raw = {}
    return from_dict(raw)


# --- canonical scenario presets -------------------------------------------------
# The process-noise settings below are calibration for the bundled scenarios
# (constant-altitude circuits; pedestrian vs vehicular dynamics classes), on
# top of the per-epoch Doppler-spread scaling that adapts within a run.

def lm_scenario(duration: int = 200, seed: int = 0) -> ScenarioConfig:
    """Default low-mobility scenario: pedestrian circuit with odometry."""
    from .scenario import pedestrian_profile

    cfg = ScenarioConfig(seed=seed)
    cfg.trajectory = pedestrian_profile(duration=duration)
    cfg.odometry = True
    cfg.pipeline.gate = GateConfig(per_channel=True)
    cfg.pipeline.process_noise = ProcessNoiseParams(
        sigma_p2=0.002, sigma_pz2=1e-6,
        sigma_v2_base=0.01, sigma_vz2_base=1e-6,
        sigma_b2=5e-4, kappa_d=12.0,
    )
    cfg.validate()
    return cfg


def hm_scenario(duration: int = 200, seed: int = 0) -> ScenarioConfig:
    """Default high-mobility scenario: 12 m/s vehicular circuit, no odometry."""
    from .scenario import vehicular_profile

    cfg = ScenarioConfig(seed=seed)
    cfg.trajectory = vehicular_profile(duration=duration)
    cfg.odometry = False
    cfg.pipeline.gate = GateConfig(per_channel=True)
    cfg.pipeline.process_noise = ProcessNoiseParams(
        sigma_p2=0.005, sigma_pz2=1e-6,
        sigma_v2_base=0.1, sigma_vz2_base=1e-6,
        sigma_b2=5e-4, kappa_d=12.0,
    )
    cfg.validate()
    return cfg


def accelerating_scenario(duration: int = 150, seed: int = 0,
                          top_speed: float = 10.0) -> ScenarioConfig:
    """Straight-line 0 -> top_speed ramp crossing the mobility gate once."""
    from .scenario import accelerating_profile

    cfg = ScenarioConfig(seed=seed)
    cfg.trajectory = accelerating_profile(duration=duration, top_speed=top_speed)
    cfg.odometry = True
    cfg.pipeline.gate = GateConfig(per_channel=True)
    # straight-lane ramp: velocity noise kept small so the predicted speed
    # stays well inside the hysteresis band while crossing the gate
    cfg.pipeline.process_noise = ProcessNoiseParams(
        sigma_p2=0.002, sigma_pz2=1e-6,
        sigma_v2_base=0.005, sigma_vz2_base=1e-6,
        sigma_b2=5e-4, kappa_d=2.0,
    )
    cfg.validate()
    return cfg
