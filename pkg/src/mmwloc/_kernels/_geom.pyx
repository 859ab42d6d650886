# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled geometry kernels. Contract identical to numpy_backend."""

from libc.math cimport sqrt, atan2, hypot, floor, M_PI

import numpy as np

from mmwloc.errors import DegenerateGeometryError

cdef double C_LIGHT = 299792458.0
cdef double TWO_PI = 2.0 * M_PI
cdef double COINC_TOL2 = 1e-18
cdef double ODO_TOL = 1e-9

cdef int TOA = 0
cdef int AOA_AZ = 1
cdef int AOA_EL = 2
cdef int AOD = 3
cdef int DOPPLER = 4
cdef int ODO_SPEED = 5
cdef int ODO_HEADING = 6


cdef inline double _wrap(double theta) noexcept nogil:
    # (theta + pi) mod 2pi - pi, mapped onto (-pi, pi]
    cdef double w = (theta + M_PI) - TWO_PI * floor((theta + M_PI) / TWO_PI) - M_PI
    if w == -M_PI:
        return M_PI
    return w


def measure_batch(double[:, ::1] states, double[:, ::1] anchor_xyz,
                  int[::1] row_anchor, int[::1] row_channel):
    cdef Py_ssize_t m = states.shape[0]
    cdef Py_ssize_t d = row_channel.shape[0]
    out_arr = np.empty((m, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef int ch, a
    cdef double dx, dy, dz, rho2, r2, r, radial, speed

    for i in range(m):
        for j in range(d):
            ch = row_channel[j]
            a = row_anchor[j]
            if ch <= DOPPLER:
                dx = states[i, 0] - anchor_xyz[a, 0]
                dy = states[i, 1] - anchor_xyz[a, 1]
                dz = states[i, 2] - anchor_xyz[a, 2]
                rho2 = dx * dx + dy * dy
                r2 = rho2 + dz * dz
            if ch == TOA:
                if r2 <= COINC_TOL2:
                    raise DegenerateGeometryError(f"degenerate geometry for ToA (row {j})")
                out[i, j] = sqrt(r2) / C_LIGHT
            elif ch == AOA_AZ:
                if rho2 <= COINC_TOL2:
                    raise DegenerateGeometryError(f"degenerate geometry for AoA azimuth (row {j})")
                out[i, j] = _wrap(atan2(dy, dx))
            elif ch == AOA_EL:
                if r2 <= COINC_TOL2:
                    raise DegenerateGeometryError(f"degenerate geometry for AoA elevation (row {j})")
                out[i, j] = atan2(dz, sqrt(rho2))
            elif ch == AOD:
                if rho2 <= COINC_TOL2:
                    raise DegenerateGeometryError(f"degenerate geometry for AoD (row {j})")
                out[i, j] = _wrap(atan2(-dy, -dx))
            elif ch == DOPPLER:
                if r2 <= COINC_TOL2:
                    raise DegenerateGeometryError(f"degenerate geometry for Doppler (row {j})")
                r = sqrt(r2)
                radial = (states[i, 3] * dx + states[i, 4] * dy + states[i, 5] * dz) / r
                out[i, j] = radial + states[i, 6]
            elif ch == ODO_SPEED:
                out[i, j] = hypot(states[i, 3], states[i, 4])
            elif ch == ODO_HEADING:
                speed = hypot(states[i, 3], states[i, 4])
                if speed < ODO_TOL:
                    out[i, j] = 0.0
                else:
                    out[i, j] = _wrap(atan2(states[i, 4], states[i, 3]))
            else:
                raise ValueError(f"unknown channel code {ch}")
    return out_arr


def jacobian(double[::1] state, double[:, ::1] anchor_xyz,
             int[::1] row_anchor, int[::1] row_channel):
    cdef Py_ssize_t d = row_channel.shape[0]
    out_arr = np.zeros((d, 7), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t j
    cdef int ch, a
    cdef double dx, dy, dz, rho2, rho, r2, r, cr, ux, uy, uz, vr, s, s2
    cdef double vx = state[3], vy = state[4], vz = state[5]

    for j in range(d):
        ch = row_channel[j]
        a = row_anchor[j]
        if ch <= DOPPLER:
            dx = state[0] - anchor_xyz[a, 0]
            dy = state[1] - anchor_xyz[a, 1]
            dz = state[2] - anchor_xyz[a, 2]
            rho2 = dx * dx + dy * dy
            r2 = rho2 + dz * dz
        if ch == TOA:
            if r2 <= COINC_TOL2:
                raise DegenerateGeometryError(f"degenerate geometry for ToA (row {j})")
            cr = C_LIGHT * sqrt(r2)
            out[j, 0] = dx / cr
            out[j, 1] = dy / cr
            out[j, 2] = dz / cr
        elif ch == AOA_AZ or ch == AOD:
            if rho2 <= COINC_TOL2:
                raise DegenerateGeometryError(f"degenerate geometry for bearing (row {j})")
            out[j, 0] = -dy / rho2
            out[j, 1] = dx / rho2
        elif ch == AOA_EL:
            if rho2 <= COINC_TOL2:
                raise DegenerateGeometryError(f"degenerate geometry for elevation (row {j})")
            rho = sqrt(rho2)
            out[j, 0] = -dx * dz / (r2 * rho)
            out[j, 1] = -dy * dz / (r2 * rho)
            out[j, 2] = rho / r2
        elif ch == DOPPLER:
            if r2 <= COINC_TOL2:
                raise DegenerateGeometryError(f"degenerate geometry for Doppler (row {j})")
            r = sqrt(r2)
            ux = dx / r
            uy = dy / r
            uz = dz / r
            vr = vx * ux + vy * uy + vz * uz
            out[j, 0] = (vx - vr * ux) / r
            out[j, 1] = (vy - vr * uy) / r
            out[j, 2] = (vz - vr * uz) / r
            out[j, 3] = ux
            out[j, 4] = uy
            out[j, 5] = uz
            out[j, 6] = 1.0
        elif ch == ODO_SPEED:
            s = hypot(vx, vy)
            if s > ODO_TOL:
                out[j, 3] = vx / s
                out[j, 4] = vy / s
        elif ch == ODO_HEADING:
            s2 = vx * vx + vy * vy
            if s2 > ODO_TOL * ODO_TOL:
                out[j, 3] = -vy / s2
                out[j, 4] = vx / s2
        else:
            raise ValueError(f"unknown channel code {ch}")
    return out_arr
