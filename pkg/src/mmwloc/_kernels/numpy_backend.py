"""Vectorized NumPy geometry kernels (fallback backend).

Row descriptors come from a measurement layout: ``row_anchor[j]`` indexes
into ``anchor_xyz`` (ignored for odometry rows, where it is -1) and
``row_channel[j]`` is one of the channel codes below. The compiled backend
implements the same contract; parity is enforced by tests.
"""

import numpy as np

from ..errors import DegenerateGeometryError

SPEED_OF_LIGHT = 299792458.0

# Channel codes, kept in sync with mmwloc.measurement.Channel.
TOA = 0
AOA_AZ = 1
AOA_EL = 2
AOD = 3
DOPPLER = 4
ODO_SPEED = 5
ODO_HEADING = 6

COINCIDENT_TOL2 = 1e-18  # squared meters
ODO_SPEED_TOL = 1e-9     # m/s; below this heading defaults to 0


def wrap_array(theta):
    """Wrap angles elementwise into (-pi, pi]."""
    wrapped = (np.asarray(theta, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def _require(ok: np.ndarray, what: str, row: int) -> None:
    if not np.all(ok):
        raise DegenerateGeometryError(f"degenerate geometry for {what} (row {row})")


def measure_batch(states, anchor_xyz, row_anchor, row_channel):
    """Evaluate the stacked observation function for a batch of states.

    Args:
        states: (m, 7) array of state vectors.
        anchor_xyz: (A, 3) anchor positions.
        row_anchor, row_channel: (d,) int32 row descriptors.

    Returns:
        (m, d) array of predicted measurements.
    """
    states = np.asarray(states, dtype=float)
    m = states.shape[0]
    d = row_channel.shape[0]
    out = np.empty((m, d))
    pos = states[:, 0:3]
    vel = states[:, 3:6]
    bias = states[:, 6]

    diff = pos[:, None, :] - anchor_xyz[None, :, :]  # (m, A, 3)
    rho2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
    r2 = rho2 + diff[..., 2] ** 2
    r = np.sqrt(r2)

    for j in range(d):
        ch = row_channel[j]
        a = row_anchor[j]
        if ch == TOA:
            _require(r2[:, a] > COINCIDENT_TOL2, "ToA", j)
            out[:, j] = r[:, a] / SPEED_OF_LIGHT
        elif ch == AOA_AZ:
            _require(rho2[:, a] > COINCIDENT_TOL2, "AoA azimuth", j)
            out[:, j] = wrap_array(np.arctan2(diff[:, a, 1], diff[:, a, 0]))
        elif ch == AOA_EL:
            _require(r2[:, a] > COINCIDENT_TOL2, "AoA elevation", j)
            out[:, j] = np.arctan2(diff[:, a, 2], np.sqrt(rho2[:, a]))
        elif ch == AOD:
            _require(rho2[:, a] > COINCIDENT_TOL2, "AoD", j)
            out[:, j] = wrap_array(np.arctan2(-diff[:, a, 1], -diff[:, a, 0]))
        elif ch == DOPPLER:
            _require(r2[:, a] > COINCIDENT_TOL2, "Doppler", j)
            radial = np.einsum("ij,ij->i", vel, diff[:, a, :]) / r[:, a]
            out[:, j] = radial + bias
        elif ch == ODO_SPEED:
            out[:, j] = np.hypot(vel[:, 0], vel[:, 1])
        elif ch == ODO_HEADING:
            speed = np.hypot(vel[:, 0], vel[:, 1])
            heading = wrap_array(np.arctan2(vel[:, 1], vel[:, 0]))
            out[:, j] = np.where(speed < ODO_SPEED_TOL, 0.0, heading)
        else:
            raise ValueError(f"unknown channel code {ch}")
    return out


def jacobian(state, anchor_xyz, row_anchor, row_channel):
    """Analytic Jacobian of the stacked observation function at one state.

    Returns a (d, 7) array whose rows follow the layout order.
    """
    state = np.asarray(state, dtype=float)
    d = row_channel.shape[0]
    out = np.zeros((d, 7))
    px, py, pz, vx, vy, vz = state[:6]

    for j in range(d):
        ch = row_channel[j]
        a = row_anchor[j]
        if ch <= DOPPLER:
            ax, ay, az = anchor_xyz[a]
            dx, dy, dz = px - ax, py - ay, pz - az
            rho2 = dx * dx + dy * dy
            r2 = rho2 + dz * dz
        if ch == TOA:
            if r2 <= COINCIDENT_TOL2:
                raise DegenerateGeometryError(f"degenerate geometry for ToA (row {j})")
            cr = SPEED_OF_LIGHT * np.sqrt(r2)
            out[j, 0] = dx / cr
            out[j, 1] = dy / cr
            out[j, 2] = dz / cr
        elif ch in (AOA_AZ, AOD):
            if rho2 <= COINCIDENT_TOL2:
                raise DegenerateGeometryError(f"degenerate geometry for bearing (row {j})")
            out[j, 0] = -dy / rho2
            out[j, 1] = dx / rho2
        elif ch == AOA_EL:
            # derivative carries 1/rho, so the horizontal check applies here too
            if rho2 <= COINCIDENT_TOL2:
                raise DegenerateGeometryError(f"degenerate geometry for elevation (row {j})")
            rho = np.sqrt(rho2)
            out[j, 0] = -dx * dz / (r2 * rho)
            out[j, 1] = -dy * dz / (r2 * rho)
            out[j, 2] = rho / r2
        elif ch == DOPPLER:
            if r2 <= COINCIDENT_TOL2:
                raise DegenerateGeometryError(f"degenerate geometry for Doppler (row {j})")
            r = np.sqrt(r2)
            ux, uy, uz = dx / r, dy / r, dz / r
            vr = vx * ux + vy * uy + vz * uz
            out[j, 0] = (vx - vr * ux) / r
            out[j, 1] = (vy - vr * uy) / r
            out[j, 2] = (vz - vr * uz) / r
            out[j, 3] = ux
            out[j, 4] = uy
            out[j, 5] = uz
            out[j, 6] = 1.0
        elif ch == ODO_SPEED:
            s = np.hypot(vx, vy)
            if s > ODO_SPEED_TOL:
                out[j, 3] = vx / s
                out[j, 4] = vy / s
        elif ch == ODO_HEADING:
            s2 = vx * vx + vy * vy
            if s2 > ODO_SPEED_TOL ** 2:
                out[j, 3] = -vy / s2
                out[j, 4] = vx / s2
        else:
            raise ValueError(f"unknown channel code {ch}")
    return out
