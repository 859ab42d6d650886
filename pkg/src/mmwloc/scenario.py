"""Scenario generation: ground-truth trajectories, noisy measurement streams
with optional multipath-style outliers, and the CSV interchange format.

All generators are pure functions of (config, seed); identical inputs yield
bit-identical outputs.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CsvFormatError
from .measurement import (
    PER_ANCHOR_CHANNELS,
    Anchor,
    Channel,
    MeasurementBundle,
    NoiseProfile,
    assemble_R,
    build_layout,
    evaluate_stack,
    sort_anchors,
)

SPEED_CAPS = {"pedestrian": 2.0, "vehicular": 20.0}
SPEED_PROFILES = ("constant", "ramp", "wander")


@dataclass
class TrajectoryProfile:
    """Waypoint-following trajectory description.

    ``speed_profile`` shapes the speed over time within ``speed_range``:
    constant (midpoint), ramp (linear min->max) or wander (clipped random
    walk, ``speed_jitter`` m/s per step). Waypoints are followed cyclically;
    omit them to get the built-in circuit for the kind.
    """

    kind: str = "pedestrian"        # pedestrian | vehicular | custom
    duration: int = 200             # epochs
    dt: float = 1.0                 # s
    speed_range: Optional[Tuple[float, float]] = None
    speed_profile: str = "wander"
    waypoints: Optional[Sequence] = None
    heading_noise: float = 0.02     # rad / sqrt(s)
    speed_jitter: Optional[float] = None

    def resolved_speed_range(self) -> Tuple[float, float]:
        if self.speed_range is not None:
            return tuple(float(v) for v in self.speed_range)
        return {"pedestrian": (0.8, 1.4), "vehicular": (11.0, 13.0)}.get(self.kind, (1.0, 1.0))

    def resolved_jitter(self) -> float:
        if self.speed_jitter is not None:
            return float(self.speed_jitter)
        return 0.3 if self.kind == "vehicular" else 0.05

    def resolved_waypoints(self) -> np.ndarray:
        if self.waypoints is not None:
            pts = np.asarray(self.waypoints, dtype=float)
            if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
                raise ValueError("waypoints must be an (n>=2, 3) array")
            return pts
        if self.kind == "pedestrian":
            return circuit_waypoints(80.0, 60.0, corner_radius=8.0, spacing=4.0,
                                     center=(40.0, 30.0), z=1.5)
        if self.kind == "vehicular":
            return circuit_waypoints(400.0, 260.0, corner_radius=110.0, spacing=20.0,
                                     center=(100.0, 30.0), z=1.5)
        raise ValueError("custom trajectories must supply waypoints")

    def validate(self) -> None:
        if self.kind not in ("pedestrian", "vehicular", "custom"):
            raise ValueError(f"trajectory kind {self.kind!r} unknown")
        if self.duration < 2:
            raise ValueError(f"duration must be >= 2 epochs, got {self.duration}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.speed_profile not in SPEED_PROFILES:
            raise ValueError(f"speed_profile must be one of {SPEED_PROFILES}")
        lo, hi = self.resolved_speed_range()
        if not (0.0 <= lo <= hi):
            raise ValueError(f"speed_range must satisfy 0 <= min <= max, got {(lo, hi)}")
        cap = SPEED_CAPS.get(self.kind)
        if cap is not None and hi > cap:
            raise ValueError(
                f"{self.kind} speeds must stay <= {cap} m/s, got max {hi}"
            )
        if self.heading_noise < 0.0:
            raise ValueError("heading_noise must be >= 0")
        self.resolved_waypoints()


@dataclass
class GroundTruth:
    """True per-epoch states plus the per-epoch Doppler spread."""

    states: np.ndarray          # (N, 7)
    doppler_spread: np.ndarray  # (N,)
    dt: float

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, 0:3]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, 3:6]

    def __len__(self) -> int:
        return len(self.states)


@dataclass
class OutlierModel:
    """Variance-inflated Gaussian spikes emulating multipath hits."""

    rate: float = 0.0
    magnitude: float = 10.0
    channels: frozenset = frozenset(
        {Channel.TOA, Channel.AOA_AZ, Channel.AOA_EL, Channel.AOD}
    )

    def __post_init__(self):
        self.channels = frozenset(Channel(c) for c in self.channels)

    def validate(self) -> None:
        if not (0.0 <= self.rate <= 1.0):
            raise ValueError(f"outlier rate must be in [0, 1], got {self.rate}")
        if self.magnitude <= 0.0:
            raise ValueError(f"outlier magnitude must be > 0, got {self.magnitude}")


def circuit_waypoints(width: float, height: float, corner_radius: float = 0.0,
                      spacing: float = 5.0, center=(0.0, 0.0), z: float = 0.0) -> np.ndarray:
    """Waypoints along a rounded-rectangle circuit, sampled every ~spacing m.

    Dense sampling keeps per-epoch direction changes small so the path stays
    close to the constant-velocity assumption away from the corners.
    """
    cx, cy = center
    hw = width / 2.0 - corner_radius
    hh = height / 2.0 - corner_radius
    if hw < 0 or hh < 0:
        raise ValueError("corner radius too large for circuit dimensions")
    points: List[Tuple[float, float]] = []

    def straight(p0, p1):
        length = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
        steps = max(1, int(math.ceil(length / spacing)))
        for i in range(steps):
            t = i / steps
            points.append((p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])))

    def arc(c, a0, a1):
        length = abs(a1 - a0) * corner_radius
        steps = max(1, int(math.ceil(length / spacing)))
        for i in range(steps):
            a = a0 + (a1 - a0) * i / steps
            points.append((c[0] + corner_radius * math.cos(a),
                           c[1] + corner_radius * math.sin(a)))

    right = cx + width / 2.0
    left = cx - width / 2.0
    top = cy + height / 2.0
    bottom = cy - height / 2.0
    straight((right, cy - hh), (right, cy + hh))
    if corner_radius > 0.0:
        arc((cx + hw, cy + hh), 0.0, math.pi / 2.0)
    straight((cx + hw, top), (cx - hw, top))
    if corner_radius > 0.0:
        arc((cx - hw, cy + hh), math.pi / 2.0, math.pi)
    straight((left, cy + hh), (left, cy - hh))
    if corner_radius > 0.0:
        arc((cx - hw, cy - hh), math.pi, 1.5 * math.pi)
    straight((cx - hw, bottom), (cx + hw, bottom))
    if corner_radius > 0.0:
        arc((cx + hw, cy - hh), 1.5 * math.pi, 2.0 * math.pi)
    return np.array([(x, y, z) for x, y in points])


def default_anchors() -> List[Anchor]:
    """Three-anchor layout: one physical LoS gNB plus two virtual anchors."""
    full = frozenset(PER_ANCHOR_CHANNELS)
    return [
        Anchor("gNB1", (0.0, 0.0, 10.0), "physical", full | {Channel.DOPPLER}),
        Anchor("gNB2", (200.0, -60.0, 15.0), "virtual", full),
        Anchor("gNB3", (80.0, 140.0, 12.0), "virtual", full),
    ]


def pedestrian_profile(duration: int = 200, dt: float = 1.0) -> TrajectoryProfile:
    return TrajectoryProfile(kind="pedestrian", duration=duration, dt=dt)


def vehicular_profile(duration: int = 200, dt: float = 1.0) -> TrajectoryProfile:
    return TrajectoryProfile(kind="vehicular", duration=duration, dt=dt,
                             heading_noise=0.005)


def accelerating_profile(duration: int = 150, dt: float = 1.0,
                         top_speed: float = 10.0) -> TrajectoryProfile:
    """Straight-line launch from rest, ramping linearly to top_speed."""
    # the lane passes north of the anchors so no azimuth ever degenerates
    return TrajectoryProfile(
        kind="custom",
        duration=duration,
        dt=dt,
        speed_range=(0.0, top_speed),
        speed_profile="ramp",
        waypoints=[(-60.0, 40.0, 1.5), (20000.0, 40.0, 1.5)],
        heading_noise=0.0,
    )


def _speed_series(profile: TrajectoryProfile, rng: np.random.Generator) -> np.ndarray:
    lo, hi = profile.resolved_speed_range()
    n = profile.duration
    if profile.speed_profile == "constant":
        return np.full(n, 0.5 * (lo + hi))
    if profile.speed_profile == "ramp":
        return np.linspace(lo, hi, n)
    jitter = profile.resolved_jitter()
    speeds = np.empty(n)
    speeds[0] = 0.5 * (lo + hi)
    steps = rng.normal(0.0, jitter, size=n - 1)
    for k in range(1, n):
        speeds[k] = min(hi, max(lo, speeds[k - 1] + steps[k - 1]))
    return speeds


def gen_trajectory(profile: TrajectoryProfile, seed: int, *,
                   bias_walk_sigma: float = 0.01,
                   doppler_coeff: float = 0.1) -> GroundTruth:
    """Generate a waypoint-following constant-velocity ground truth.

    Positions integrate velocities exactly at dt resolution; the Doppler
    bias state follows a slow random walk; the per-epoch Doppler spread is
    doppler_coeff * speed.
    """
    profile.validate()
    rng = np.random.default_rng([int(seed), 0])
    waypoints = profile.resolved_waypoints()
    n = profile.duration
    dt = profile.dt
    speeds = _speed_series(profile, rng)
    heading_steps = (
        rng.normal(0.0, profile.heading_noise * math.sqrt(dt), size=n)
        if profile.heading_noise > 0.0 else np.zeros(n)
    )
    bias_steps = (
        rng.normal(0.0, bias_walk_sigma, size=n)
        if bias_walk_sigma > 0.0 else np.zeros(n)
    )

    states = np.zeros((n, 7))
    pos = waypoints[0].astype(float).copy()
    target = 1
    bias = 0.0
    for k in range(n):
        speed = speeds[k]
        guard = 0
        while True:
            delta = waypoints[target] - pos
            dist = float(np.linalg.norm(delta))
            if dist > max(speed * dt, 1e-9) or guard > len(waypoints):
                break
            target = (target + 1) % len(waypoints)
            guard += 1
        direction = delta / dist
        if heading_steps[k] != 0.0:
            c, s = math.cos(heading_steps[k]), math.sin(heading_steps[k])
            dx, dy = direction[0], direction[1]
            direction = np.array([c * dx - s * dy, s * dx + c * dy, direction[2]])
            norm = float(np.linalg.norm(direction))
            if norm > 0.0:
                direction = direction / norm
        vel = speed * direction
        states[k, 0:3] = pos
        states[k, 3:6] = vel
        states[k, 6] = bias
        pos = pos + dt * vel
        bias += bias_steps[k]
    spread = doppler_coeff * speeds
    return GroundTruth(states=states, doppler_spread=spread, dt=dt)


def synthesize(truth: GroundTruth, anchors: Iterable[Anchor], noise: NoiseProfile,
               outliers: OutlierModel, seed: int, *,
               odometry: bool = False, noise_scale: float = 1.0) -> List[MeasurementBundle]:
    """Draw a noisy measurement stream from the true states.

    Outliers multiply the drawn noise of a hit channel by
    ``outliers.magnitude``; the advertised variance stays at the profile
    value, which is what makes them gating targets. With noise_scale = 0 the
    stream equals the noiseless stacked observation exactly.
    """
    noise.validate()
    outliers.validate()
    anchors = sort_anchors(anchors)
    layout = build_layout(anchors, with_odometry=False)
    clean = evaluate_stack(truth.states, layout)
    variances = np.diag(assemble_R(noise, layout))
    sigmas = np.sqrt(variances)

    rng = np.random.default_rng([int(seed), 1])
    draws = rng.standard_normal(clean.shape) * sigmas * noise_scale
    if outliers.rate > 0.0:
        affected = np.array(
            [ch in outliers.channels for _, ch in layout.rows], dtype=bool
        )
        hits = rng.random(clean.shape) < outliers.rate
        draws = np.where(hits & affected, draws * outliers.magnitude, draws)
    values = clean + draws
    if noise_scale != 0.0:
        wrapped = (values[:, layout.angular] + np.pi) % (2.0 * np.pi) - np.pi
        values[:, layout.angular] = np.where(wrapped == -np.pi, np.pi, wrapped)

    odo_values = None
    if odometry:
        vx, vy = truth.states[:, 3], truth.states[:, 4]
        speeds = np.hypot(vx, vy)
        headings = np.where(speeds < 1e-9, 0.0, np.arctan2(vy, vx))
        odo_draw = rng.standard_normal((len(truth), 2))
        odo_speed = speeds + odo_draw[:, 0] * noise.sigma_vodo * noise_scale
        odo_heading = headings + odo_draw[:, 1] * noise.sigma_hodo * noise_scale
        if noise_scale != 0.0:
            w = (odo_heading + np.pi) % (2.0 * np.pi) - np.pi
            odo_heading = np.where(w == -np.pi, np.pi, w)
        odo_values = np.column_stack([odo_speed, odo_heading])
    odo_var = (noise.sigma_vodo ** 2, noise.sigma_hodo ** 2)

    bundles = []
    for k in range(len(truth)):
        entries = [
            (aid, ch, values[k, j], variances[j])
            for j, (aid, ch) in enumerate(layout.rows)
        ]
        bundles.append(MeasurementBundle(
            epoch=k,
            entries=entries,
            odometry=tuple(odo_values[k]) if odo_values is not None else None,
            odometry_variance=odo_var if odo_values is not None else None,
            doppler_spread=float(truth.doppler_spread[k]),
        ))
    return bundles


# --- CSV interchange ---------------------------------------------------------

_TRUTH_COLUMNS = (
    "epoch", "true_x", "true_y", "true_z", "true_vx", "true_vy", "true_vz",
    "true_b", "doppler_spread",
)


def _channel_columns(anchors: Sequence[Anchor]) -> List[Tuple[str, str, Channel]]:
    cols = []
    for anchor in anchors:
        for ch in PER_ANCHOR_CHANNELS:
            if ch in anchor.channels:
                cols.append((f"{ch.key}_{anchor.id}", anchor.id, ch))
    return cols


def save_csv(path, truth: GroundTruth, bundles: Sequence[MeasurementBundle],
             anchors: Iterable[Anchor]) -> None:
    """Write truth + measurements in the documented CSV schema."""
    anchors = sort_anchors(anchors)
    if len(bundles) != len(truth):
        raise ValueError("bundle stream and ground truth lengths differ")
    chan_cols = _channel_columns(anchors)
    has_odometry = any(b.odometry is not None for b in bundles)
    header = list(_TRUTH_COLUMNS) + [name for name, _, _ in chan_cols] + ["doppler"]
    if has_odometry:
        header += ["odo_speed", "odo_heading"]

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, bundle in enumerate(bundles):
            present = {(e.anchor_id, e.channel): e.value for e in bundle.entries}
            row = [str(bundle.epoch)]
            row += [repr(float(v)) for v in truth.states[k]]
            row.append(repr(float(truth.doppler_spread[k])))
            for _, aid, ch in chan_cols:
                value = present.get((aid, ch))
                row.append("" if value is None else repr(float(value)))
            dop = next(
                (e.value for e in bundle.entries if e.channel == Channel.DOPPLER), None
            )
            row.append("" if dop is None else repr(float(dop)))
            if has_odometry:
                if bundle.odometry is None:
                    row += ["", ""]
                else:
                    row += [repr(float(bundle.odometry[0])), repr(float(bundle.odometry[1]))]
            writer.writerow(row)


def load_csv(path, anchors: Iterable[Anchor],
             noise: Optional[NoiseProfile] = None, dt: float = 1.0):
    """Read a scenario CSV back into (GroundTruth, bundles).

    Per-entry variances come from ``noise`` (anchors/noise travel with the
    config, not the file). Empty cells are masked channels for that epoch;
    whole missing optional columns mask the channel for the entire run.
    """
    anchors = sort_anchors(anchors)
    noise = noise or NoiseProfile()
    noise.validate()
    los_id = next(a.id for a in anchors if a.is_los)
    chan_cols = {name: (aid, ch) for name, aid, ch in _channel_columns(anchors)}
    odo_var = (noise.sigma_vodo ** 2, noise.sigma_hodo ** 2)

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: file is empty") from None
        if tuple(header[:len(_TRUTH_COLUMNS)]) != _TRUTH_COLUMNS:
            raise CsvFormatError(
                f"{path}: header must start with {','.join(_TRUTH_COLUMNS)}"
            )
        col_index = {name: i for i, name in enumerate(header)}
        unknown = [
            name for name in header[len(_TRUTH_COLUMNS):]
            if name not in chan_cols and name not in ("doppler", "odo_speed", "odo_heading")
        ]
        if unknown:
            raise CsvFormatError(f"{path}: unknown columns {unknown}")

        states, spreads, bundles = [], [], []
        prev_epoch = None
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}"
                )

            def cell(name):
                idx = col_index.get(name)
                if idx is None:
                    return None
                text = row[idx].strip()
                return None if text == "" else text

            def parse(name, text):
                try:
                    return float(text)
                except ValueError:
                    raise CsvFormatError(
                        f"{path}:{lineno}: bad value {text!r} in column {name}"
                    ) from None

            try:
                epoch = int(row[0])
            except ValueError:
                raise CsvFormatError(f"{path}:{lineno}: bad epoch {row[0]!r}") from None
            if prev_epoch is not None and epoch <= prev_epoch:
                raise CsvFormatError(
                    f"{path}:{lineno}: epochs must be strictly increasing "
                    f"({prev_epoch} then {epoch})"
                )
            prev_epoch = epoch

            truth_vals = [parse(name, row[i + 1]) for i, name in enumerate(_TRUTH_COLUMNS[1:8])]
            spread_text = cell("doppler_spread")
            spread = parse("doppler_spread", spread_text) if spread_text is not None else 0.0

            entries = []
            for name, (aid, ch) in chan_cols.items():
                text = cell(name)
                if text is not None:
                    entries.append((aid, ch, parse(name, text), noise.variance(ch)))
            dop_text = cell("doppler")
            if dop_text is not None:
                entries.append(
                    (los_id, Channel.DOPPLER, parse("doppler", dop_text),
                     noise.variance(Channel.DOPPLER))
                )

            odometry = None
            speed_text, heading_text = cell("odo_speed"), cell("odo_heading")
            if speed_text is not None and heading_text is not None:
                odometry = (parse("odo_speed", speed_text), parse("odo_heading", heading_text))

            states.append(truth_vals)
            spreads.append(spread)
            bundles.append(MeasurementBundle(
                epoch=epoch,
                entries=entries,
                odometry=odometry,
                odometry_variance=odo_var if odometry is not None else None,
                doppler_spread=spread,
            ))

    if not bundles:
        raise CsvFormatError(f"{path}: no data rows")
    truth = GroundTruth(
        states=np.array(states, dtype=float),
        doppler_spread=np.array(spreads, dtype=float),
        dt=dt,
    )
    return truth, bundles
