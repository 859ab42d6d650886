"""Anchors, observation channels and the stacked nonlinear measurement model.

Channels per anchor: ToA (s), AoA azimuth/elevation (rad), AoD (rad). One
anchor per scenario is the line-of-sight (LoS) anchor, identified by having
the Doppler channel; LoS Doppler is expressed in m/s radial-velocity
equivalent and includes the bias state. Odometry (speed, heading) is a
state-only observation used in the low-mobility regime.

The stacking order is canonical so model and data vectors align:
anchors ascending by id, channels [ToA, AoA_az, AoA_el, AoD] within each
anchor, then the LoS Doppler, then odometry (speed, heading) when present.
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import DegenerateGeometryError

SPEED_OF_LIGHT = 299792458.0


class Channel(IntEnum):
    TOA = 0
    AOA_AZ = 1
    AOA_EL = 2
    AOD = 3
    DOPPLER = 4
    ODO_SPEED = 5
    ODO_HEADING = 6

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> "Channel":
        try:
            return cls[key.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown channel {key!r}") from None


# Channels measured per anchor, in canonical order.
PER_ANCHOR_CHANNELS = (Channel.TOA, Channel.AOA_AZ, Channel.AOA_EL, Channel.AOD)
# Channels whose residuals live on the circle and must be wrapped.
ANGULAR_CHANNELS = frozenset(
    {Channel.AOA_AZ, Channel.AOA_EL, Channel.AOD, Channel.ODO_HEADING}
)


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    wrapped = _kernels.numpy_backend.wrap_array(theta)
    if np.isscalar(theta) or np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


@dataclass
class Anchor:
    """A known-position gNB (physical, or a virtual mirror anchor).

    ``channels`` is the capability mask; the single anchor carrying
    Channel.DOPPLER is the LoS anchor.
    """

    id: str
    position: np.ndarray
    kind: str = "physical"
    channels: frozenset = frozenset(PER_ANCHOR_CHANNELS)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(self.position)):
            raise ValueError(f"anchor {self.id!r} has non-finite position")
        if self.kind not in ("physical", "virtual"):
            raise ValueError(f"anchor {self.id!r} kind must be physical|virtual")
        self.channels = frozenset(Channel(c) for c in self.channels)

    @property
    def is_los(self) -> bool:
        return Channel.DOPPLER in self.channels


@dataclass
class NoiseProfile:
    """Per-channel measurement noise standard deviations.

    Defaults reflect cm-level ranging and ~1 degree angular resolution of a
    wideband 28 GHz link; all values are configurable.
    """

    sigma_toa: float = 3e-9                      # s
    sigma_az: float = math.radians(1.0)          # rad
    sigma_el: float = math.radians(1.0)          # rad
    sigma_aod: float = math.radians(1.0)         # rad
    sigma_dop: float = 0.5                       # m/s equivalent
    sigma_vodo: float = 0.1                      # m/s
    sigma_hodo: float = math.radians(2.0)        # rad

    def validate(self) -> None:
        for name, value in self.__dict__.items():
            if not (value > 0.0 and math.isfinite(value)):
                raise ValueError(f"noise {name} must be > 0, got {value}")

    def sigma(self, channel: Channel) -> float:
        return {
            Channel.TOA: self.sigma_toa,
            Channel.AOA_AZ: self.sigma_az,
            Channel.AOA_EL: self.sigma_el,
            Channel.AOD: self.sigma_aod,
            Channel.DOPPLER: self.sigma_dop,
            Channel.ODO_SPEED: self.sigma_vodo,
            Channel.ODO_HEADING: self.sigma_hodo,
        }[channel]

    def variance(self, channel: Channel) -> float:
        return self.sigma(channel) ** 2


class MeasurementEntry(NamedTuple):
    anchor_id: str
    channel: Channel
    value: float
    variance: float


def _canonical_entry_key(entry: MeasurementEntry):
    return (entry.channel == Channel.DOPPLER, entry.anchor_id, int(entry.channel))


@dataclass
class MeasurementBundle:
    """One epoch's observations, canonically ordered.

    ``odometry`` is a (speed, heading) pair with its own variances; it is
    separate from the per-anchor entries because only the low-mobility branch
    consumes it. ``doppler_spread`` is the per-epoch spread used to scale
    process noise (0 when the stream does not provide it).
    """

    epoch: int
    entries: list
    odometry: Optional[tuple] = None
    odometry_variance: Optional[tuple] = None
    doppler_spread: float = 0.0

    def __post_init__(self):
        self.entries = sorted(
            (MeasurementEntry(e[0], Channel(e[1]), float(e[2]), float(e[3])) for e in self.entries),
            key=_canonical_entry_key,
        )
        for e in self.entries:
            if not (e.variance > 0.0 and math.isfinite(e.variance)):
                raise ValueError(f"entry ({e.anchor_id}, {e.channel.key}) variance must be > 0")
            if not math.isfinite(e.value):
                raise ValueError(f"entry ({e.anchor_id}, {e.channel.key}) value is not finite")
        if self.odometry is not None:
            speed, heading = self.odometry
            if not (math.isfinite(speed) and math.isfinite(heading)):
                raise ValueError("odometry values must be finite")
            if self.odometry_variance is None:
                raise ValueError("odometry requires odometry_variance")
            if any(not (v > 0.0 and math.isfinite(v)) for v in self.odometry_variance):
                raise ValueError("odometry variances must be > 0")

    @property
    def dim(self) -> int:
        return len(self.entries) + (2 if self.odometry is not None else 0)


@dataclass(eq=False)
class MeasurementLayout:
    """Row map of a stacked measurement vector.

    ``rows`` pairs each element with its (anchor id, channel); odometry rows
    use an empty anchor id. The int32 arrays feed the geometry kernels.
    """

    rows: tuple
    anchor_ids: tuple
    anchor_xyz: np.ndarray
    row_anchor: np.ndarray
    row_channel: np.ndarray
    angular: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.rows)

    def signature(self) -> tuple:
        return self.rows

    def subset(self, keep: np.ndarray) -> "MeasurementLayout":
        """Layout restricted to the rows where ``keep`` is True (used by
        chi-square exclusion when editing a bundle)."""
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.dim,):
            raise ValueError(f"keep mask must have shape ({self.dim},)")
        return MeasurementLayout(
            rows=tuple(r for r, k in zip(self.rows, keep) if k),
            anchor_ids=self.anchor_ids,
            anchor_xyz=self.anchor_xyz,
            row_anchor=np.ascontiguousarray(self.row_anchor[keep]),
            row_channel=np.ascontiguousarray(self.row_channel[keep]),
            angular=self.angular[keep],
        )


def sort_anchors(anchors: Iterable[Anchor]) -> list:
    """Validate an anchor set and return it sorted ascending by id."""
    anchors = sorted(anchors, key=lambda a: a.id)
    if not anchors:
        raise ValueError("anchor set is empty")
    ids = [a.id for a in anchors]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate anchor ids: {ids}")
    los = [a.id for a in anchors if a.is_los]
    if len(los) != 1:
        raise ValueError(
            f"exactly one anchor must carry the Doppler channel (LoS); got {los or 'none'}"
        )
    return anchors


def _layout_from_rows(anchors: Sequence[Anchor], rows: list) -> MeasurementLayout:
    index = {a.id: i for i, a in enumerate(anchors)}
    anchor_xyz = np.ascontiguousarray([a.position for a in anchors], dtype=float)
    row_anchor = np.array(
        [index[aid] if aid else -1 for aid, _ in rows], dtype=np.int32
    )
    row_channel = np.array([int(ch) for _, ch in rows], dtype=np.int32)
    angular = np.array([ch in ANGULAR_CHANNELS for _, ch in rows], dtype=bool)
    return MeasurementLayout(
        rows=tuple(rows),
        anchor_ids=tuple(a.id for a in anchors),
        anchor_xyz=anchor_xyz,
        row_anchor=row_anchor,
        row_channel=row_channel,
        angular=angular,
    )


def build_layout(anchors: Iterable[Anchor], with_odometry: bool = False) -> MeasurementLayout:
    """Full canonical layout implied by the anchors' channel masks."""
    anchors = sort_anchors(anchors)
    rows = []
    for anchor in anchors:
        for ch in PER_ANCHOR_CHANNELS:
            if ch in anchor.channels:
                rows.append((anchor.id, ch))
    los = next(a for a in anchors if a.is_los)
    rows.append((los.id, Channel.DOPPLER))
    if with_odometry:
        rows.append(("", Channel.ODO_SPEED))
        rows.append(("", Channel.ODO_HEADING))
    return _layout_from_rows(anchors, rows)


def align_bundle(anchors: Iterable[Anchor], bundle: MeasurementBundle,
                 include_odometry: bool):
    """Build the per-epoch (layout, z, r_diag) triple for a bundle.

    Rows follow the canonical order restricted to entries actually present in
    the bundle (missing entries are masked channels). Odometry is appended
    only when requested and available.
    """
    anchors = sort_anchors(anchors)
    available = {}
    for e in bundle.entries:
        key = (e.anchor_id, e.channel)
        if key in available:
            raise ValueError(f"duplicate measurement for {key}")
        available[key] = e

    rows, values, variances = [], [], []

    def take(aid: str, ch: Channel):
        entry = available.pop((aid, ch), None)
        if entry is not None:
            rows.append((aid, ch))
            values.append(entry.value)
            variances.append(entry.variance)

    for anchor in anchors:
        for ch in PER_ANCHOR_CHANNELS:
            if ch in anchor.channels:
                take(anchor.id, ch)
    los = next(a for a in anchors if a.is_los)
    take(los.id, Channel.DOPPLER)
    if available:
        raise ValueError(f"bundle entries outside anchor capabilities: {sorted(available)}")

    if include_odometry and bundle.odometry is not None:
        rows.append(("", Channel.ODO_SPEED))
        rows.append(("", Channel.ODO_HEADING))
        values.extend(bundle.odometry)
        variances.extend(bundle.odometry_variance)

    layout = _layout_from_rows(anchors, rows)
    return layout, np.array(values, dtype=float), np.array(variances, dtype=float)


def evaluate_stack(states, layout: MeasurementLayout) -> np.ndarray:
    """Evaluate the stacked observation function for one state or a batch."""
    arr = np.asarray(states, dtype=float)
    single = arr.ndim == 1
    batch = np.ascontiguousarray(arr.reshape(1, -1) if single else arr)
    out = _kernels.measure_batch(
        batch, layout.anchor_xyz, layout.row_anchor, layout.row_channel
    )
    return out[0] if single else out


def stack_predicted(state, anchors: Iterable[Anchor], with_odometry: bool = False):
    """Predicted measurement vector plus its layout descriptor."""
    layout = build_layout(anchors, with_odometry=with_odometry)
    return evaluate_stack(state, layout), layout


def measurement_jacobian(state, layout: MeasurementLayout) -> np.ndarray:
    """Analytic (d, 7) Jacobian of the stacked observation at ``state``."""
    arr = np.ascontiguousarray(state, dtype=float)
    return _kernels.jacobian(arr, layout.anchor_xyz, layout.row_anchor, layout.row_channel)


def assemble_R(profile: NoiseProfile, layout: MeasurementLayout) -> np.ndarray:
    """Diagonal measurement-noise covariance in layout order."""
    if layout.dim == 0:
        return np.zeros((0, 0))
    return np.diag([profile.variance(ch) for _, ch in layout.rows])


# --- single-channel reference functions -----------------------------------
# Scalar versions of the kernel math; tests assert the stacked kernels agree.

def toa(pos, anchor: Anchor) -> float:
    """Time of arrival ||p - p_a|| / c in seconds."""
    delta = np.asarray(pos, dtype=float) - anchor.position
    dist2 = float(delta @ delta)
    if dist2 <= 1e-18:
        raise DegenerateGeometryError(f"position coincides with anchor {anchor.id!r}")
    return math.sqrt(dist2) / SPEED_OF_LIGHT


def aoa(pos, anchor: Anchor):
    """(azimuth, elevation) of the user as seen along anchor->user geometry."""
    delta = np.asarray(pos, dtype=float) - anchor.position
    rho2 = float(delta[0] ** 2 + delta[1] ** 2)
    if rho2 <= 1e-18:
        raise DegenerateGeometryError(
            f"zero horizontal separation from anchor {anchor.id!r}"
        )
    azimuth = wrap_angle(math.atan2(delta[1], delta[0]))
    elevation = math.atan2(delta[2], math.sqrt(rho2))
    return azimuth, elevation


def aod(pos, anchor: Anchor) -> float:
    """Departure bearing, pointing user -> anchor; equals azimuth + pi wrapped."""
    delta = np.asarray(pos, dtype=float) - anchor.position
    rho2 = float(delta[0] ** 2 + delta[1] ** 2)
    if rho2 <= 1e-18:
        raise DegenerateGeometryError(
            f"zero horizontal separation from anchor {anchor.id!r}"
        )
    return wrap_angle(math.atan2(-delta[1], -delta[0]))


def doppler_los(pos, vel, bias: float, anchor: Anchor) -> float:
    """LoS radial velocity plus bias, in m/s equivalent."""
    delta = np.asarray(pos, dtype=float) - anchor.position
    dist2 = float(delta @ delta)
    if dist2 <= 1e-18:
        raise DegenerateGeometryError(f"position coincides with anchor {anchor.id!r}")
    return float(np.asarray(vel, dtype=float) @ delta) / math.sqrt(dist2) + bias


def odometry(state) -> tuple:
    """(speed, heading) of the horizontal velocity; heading is 0 when stationary."""
    state = np.asarray(state, dtype=float)
    vx, vy = state[3], state[4]
    speed = math.hypot(vx, vy)
    if speed < 1e-9:
        return speed, 0.0
    return speed, wrap_angle(math.atan2(vy, vx))
