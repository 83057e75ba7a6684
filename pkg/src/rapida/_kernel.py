"""Compiled inner loop for the control-step integration.

Semantics mirror physics.spring_forces / physics.resolve_collisions exactly;
a cross-check test keeps the two paths in agreement. Falls back to a pure
Python implementation when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f
        if args and callable(args[0]):
            return args[0]
        return deco


@njit(cache=True)
def control_step(pos, vel, masses, ia, ib, rest, kind, kstiff, damping, gravity,
                 segments, friction, grip_pos, grip_vel, pin, substeps, dt):
    n = pos.shape[0]
    ns = ia.shape[0]
    nseg = segments.shape[0]
    forces = np.zeros((n, 2))
    for _ in range(substeps):
        grip_pos[0] += grip_vel[0] * dt
        grip_pos[1] += grip_vel[1] * dt

        for i in range(n):
            forces[i, 0] = 0.0
            forces[i, 1] = 0.0
        for s in range(ns):
            a = ia[s]
            b = ib[s]
            dx = pos[b, 0] - pos[a, 0]
            dy = pos[b, 1] - pos[a, 1]
            length = np.sqrt(dx * dx + dy * dy)
            if length < 1e-9:
                continue
            ux = dx / length
            uy = dy / length
            k = kstiff[kind[s]]
            fmag = k * (length - rest[s])
            rvx = vel[b, 0] - vel[a, 0]
            rvy = vel[b, 1] - vel[a, 1]
            fmag += damping * (rvx * ux + rvy * uy)
            forces[a, 0] += fmag * ux
            forces[a, 1] += fmag * uy
            forces[b, 0] -= fmag * ux
            forces[b, 1] -= fmag * uy

        for i in range(n):
            vel[i, 0] += forces[i, 0] / masses[i] * dt
            vel[i, 1] += (forces[i, 1] / masses[i] - gravity) * dt
            pos[i, 0] += vel[i, 0] * dt
            pos[i, 1] += vel[i, 1] * dt

        if pin >= 0:
            pos[pin, 0] = grip_pos[0]
            pos[pin, 1] = grip_pos[1]
            vel[pin, 0] = grip_vel[0]
            vel[pin, 1] = grip_vel[1]

        for g in range(nseg):
            ax = segments[g, 0]
            ay = segments[g, 1]
            abx = segments[g, 2] - ax
            aby = segments[g, 3] - ay
            limit = segments[g, 4]
            len2 = abx * abx + aby * aby
            if len2 < 1e-9:
                continue
            inv = 1.0 / np.sqrt(len2)
            nx = -aby * inv
            ny = abx * inv
            for i in range(n):
                rx = pos[i, 0] - ax
                ry = pos[i, 1] - ay
                sd = rx * nx + ry * ny
                if sd >= -1e-12 or sd <= -limit:
                    continue
                t = (rx * abx + ry * aby) / len2
                if t < 0.0 or t > 1.0:
                    continue
                pos[i, 0] -= sd * nx
                pos[i, 1] -= sd * ny
                vn = vel[i, 0] * nx + vel[i, 1] * ny
                if vn < 0.0:
                    vtx = vel[i, 0] - vn * nx
                    vty = vel[i, 1] - vn * ny
                    vt_mag = np.sqrt(vtx * vtx + vty * vty)
                    denom = vt_mag if vt_mag > 1e-9 else 1e-9
                    factor = 1.0 - friction * (-vn) / denom
                    if factor < 0.0:
                        factor = 0.0
                    vel[i, 0] = vtx * factor
                    vel[i, 1] = vty * factor

        if pin >= 0:
            pos[pin, 0] = grip_pos[0]
            pos[pin, 1] = grip_pos[1]
            vel[pin, 0] = grip_vel[0]
            vel[pin, 1] = grip_vel[1]


@njit(cache=True)
def ray_cast(origin, dirs, segments, max_range):
    """Min hit distance per ray against (M, 4) segments; max_range if no hit.

    Mirrors observe._ray_segment_distances_reference; the cross-check test
    keeps the two in agreement.
    """
    nrays = dirs.shape[0]
    nseg = segments.shape[0]
    out = np.empty(nrays)
    for r in range(nrays):
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        best = max_range
        for m in range(nseg):
            ax = segments[m, 0]
            ay = segments[m, 1]
            sx = segments[m, 2] - ax
            sy = segments[m, 3] - ay
            denom = dx * sy - dy * sx
            if denom < 1e-12 and denom > -1e-12:
                continue
            aox = ax - origin[0]
            aoy = ay - origin[1]
            t = (aox * sy - aoy * sx) / denom
            if t <= 1e-9 or t >= best:
                continue
            u = (aox * dy - aoy * dx) / denom
            if u < 0.0 or u > 1.0:
                continue
            best = t
        out[r] = best
    return out
