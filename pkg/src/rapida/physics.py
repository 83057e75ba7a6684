"""2D mass-spring deformable simulator with static rigid geometry and a
kinematic gripper.

The deformable is a chain (rows=1) or a small grid strip. Integration is
semi-implicit Euler with substeps; collisions are one-sided segment
projections with Coulomb-like tangential damping (no restitution).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernel import control_step

log = logging.getLogger(__name__)

STRETCH, SHEAR, BEND = 0, 1, 2

_EPS_LEN = 1e-9
_PROJ_TOL = 1e-12
# default depth limit: deeper "penetrations" mean the particle is on the far side
DEFAULT_DEPTH_LIMIT = 0.2


class SimulationDiverged(RuntimeError):
    def __init__(self, time_step):
        super().__init__(f"simulation diverged (NaN/Inf state) at time_step {time_step}")
        self.time_step = time_step


class PrivilegedAccessError(RuntimeError):
    """Privileged simulator state was requested on the deployment path."""


@dataclass
class PhysicsParams:
    stretch_stiffness: float = 100.0   # N/m
    shear_stiffness: float = 100.0
    bend_stiffness: float = 1.0
    damping_coeff: float = 0.2         # N*s/m
    particle_mass: float = 0.05        # kg
    friction_coeff: float = 0.1
    gravity: float = 9.8               # m/s^2, acts along -y
    substeps: int = 40
    dt_control: float = 1.0 / 3.0      # s

    def __post_init__(self):
        if min(self.stretch_stiffness, self.shear_stiffness, self.bend_stiffness) < 0:
            raise ValueError("stiffnesses must be >= 0")
        if self.particle_mass <= 0:
            raise ValueError("particle_mass must be > 0")
        if not 0 <= self.friction_coeff <= 2:
            raise ValueError("friction_coeff must be in [0, 2]")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.dt_control <= 0:
            raise ValueError("dt_control must be > 0")


def stable_substeps(stretch, shear, bend, mass, dt_control=1.0 / 3.0, base=40):
    """Substep count keeping the stiffest particle inside the semi-implicit
    Euler stability region.

    A particle can hang between two springs of each kind, so its worst-case
    restoring stiffness is 2*(stretch + shear + bend); we require
    omega * dt_sub <= 1 (hard limit is 2) for the corresponding frequency.
    """
    k_sum = 2.0 * (stretch + shear + bend)
    omega = math.sqrt(k_sum / mass)
    return max(base, int(math.ceil(dt_control * omega)))


@dataclass
class DeformableTopology:
    rows: int
    cols: int
    # parallel arrays, one entry per spring
    index_a: np.ndarray
    index_b: np.ndarray
    rest_length: np.ndarray
    kind: np.ndarray  # STRETCH / SHEAR / BEND

    @property
    def num_particles(self):
        return self.rows * self.cols

    @property
    def num_springs(self):
        return len(self.index_a)


@dataclass
class ParticleSystem:
    positions: np.ndarray   # (N, 2) m
    velocities: np.ndarray  # (N, 2) m/s
    masses: np.ndarray      # (N,) kg
    topology: DeformableTopology

    def copy(self):
        return ParticleSystem(
            self.positions.copy(), self.velocities.copy(), self.masses.copy(), self.topology
        )


@dataclass
class StaticGeometry:
    """One-sided collision segments plus container/opening annotations.

    segments: (M, 5) rows ax, ay, bx, by, depth_limit. Free space lies on the
    left-normal side of a->b; penetrations deeper than depth_limit are
    ignored (the particle is treated as being on the far side).
    """
    segments: np.ndarray
    container_interior: np.ndarray  # (K, 2) convex polygon, CCW
    opening_span: tuple             # (x_left, x_right, y_level)

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=np.float64)
        if seg.size and seg.shape[-1] == 4:
            seg = np.concatenate(
                [seg.reshape(-1, 4), np.full((len(seg.reshape(-1, 4)), 1), DEFAULT_DEPTH_LIMIT)],
                axis=1,
            )
        self.segments = seg.reshape(-1, 5) if seg.size else np.zeros((0, 5))
        self.container_interior = np.asarray(self.container_interior, dtype=np.float64)
        xl, xr, _ = self.opening_span
        if xl >= xr:
            raise ValueError("opening_span requires x_left < x_right")


@dataclass
class Gripper:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    grasping: bool = False
    attached_particle: int | None = None
    attach_radius: float = 0.08
    radius: float = 0.03  # rendered disc size
    workspace: tuple | None = None  # (xmin, xmax, ymin, ymax) position clamp

    def copy(self):
        return Gripper(
            self.position.copy(), self.velocity.copy(), self.grasping,
            self.attached_particle, self.attach_radius, self.radius,
            self.workspace,
        )


@dataclass
class WorldState:
    particles: ParticleSystem
    geometry: StaticGeometry
    gripper: Gripper
    params: PhysicsParams
    time_step: int = 0


@dataclass
class PrivilegedState:
    particle_positions: np.ndarray  # (N, 2)
    particle_deltas: np.ndarray     # (N, 2)
    total_mass: float
    centroid: np.ndarray            # (2,)


def build_deformable(topology_spec, params, pose=None):
    """Lay particles on a regular lattice and generate springs.

    topology_spec: dict with rows, cols, spacing.
    pose: dict with origin (2,) and angle (rad); identity if None.
    """
    rows, cols = int(topology_spec["rows"]), int(topology_spec["cols"])
    spacing = float(topology_spec["spacing"])
    if rows * cols < 2:
        raise ValueError("lattice needs at least 2 particles")
    if spacing <= 0:
        raise ValueError("spacing must be > 0")

    cc, rr = np.meshgrid(np.arange(cols), np.arange(rows))
    local = np.stack([cc.ravel() * spacing, rr.ravel() * spacing], axis=1)
    if pose is not None:
        ang = float(pose.get("angle", 0.0))
        origin = np.asarray(pose.get("origin", (0.0, 0.0)), dtype=np.float64)
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        local = local @ rot.T + origin

    def idx(r, c):
        return r * cols + c

    ia, ib, rest, kind = [], [], [], []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                ia.append(idx(r, c)); ib.append(idx(r, c + 1)); rest.append(spacing); kind.append(STRETCH)
            if r + 1 < rows:
                ia.append(idx(r, c)); ib.append(idx(r + 1, c)); rest.append(spacing); kind.append(STRETCH)
            if r + 1 < rows and c + 1 < cols:
                d = spacing * np.sqrt(2.0)
                ia.append(idx(r, c)); ib.append(idx(r + 1, c + 1)); rest.append(d); kind.append(SHEAR)
                ia.append(idx(r, c + 1)); ib.append(idx(r + 1, c)); rest.append(d); kind.append(SHEAR)
            if c + 2 < cols:
                ia.append(idx(r, c)); ib.append(idx(r, c + 2)); rest.append(2 * spacing); kind.append(BEND)
            if r + 2 < rows:
                ia.append(idx(r, c)); ib.append(idx(r + 2, c)); rest.append(2 * spacing); kind.append(BEND)

    topo = DeformableTopology(
        rows, cols,
        np.asarray(ia, dtype=np.intp), np.asarray(ib, dtype=np.intp),
        np.asarray(rest, dtype=np.float64), np.asarray(kind, dtype=np.intp),
    )
    n = rows * cols
    return ParticleSystem(
        positions=local.astype(np.float64),
        velocities=np.zeros((n, 2)),
        masses=np.full(n, params.particle_mass, dtype=np.float64),
        topology=topo,
    )


def spring_forces(system, params):
    """Per-particle force vectors from Hooke springs with axial damping.

    Internal forces only: the returned (N, 2) array sums to zero.
    """
    topo = system.topology
    pa = system.positions[topo.index_a]
    pb = system.positions[topo.index_b]
    d = pb - pa
    length = np.sqrt((d * d).sum(axis=1))
    ok = length >= _EPS_LEN
    if not ok.all():
        log.debug("coincident spring endpoints: %d springs skipped", int((~ok).sum()))
    inv_len = np.where(ok, 1.0 / np.where(ok, length, 1.0), 0.0)
    unit = d * inv_len[:, None]

    k = np.choose(topo.kind, (params.stretch_stiffness, params.shear_stiffness, params.bend_stiffness))
    fmag = k * (length - topo.rest_length)
    vrel = system.velocities[topo.index_b] - system.velocities[topo.index_a]
    fmag = fmag + params.damping_coeff * (vrel * unit).sum(axis=1)
    fvec = unit * np.where(ok, fmag, 0.0)[:, None]

    forces = np.zeros_like(system.positions)
    np.add.at(forces, topo.index_a, fvec)
    np.add.at(forces, topo.index_b, -fvec)
    return forces


def resolve_collisions(system, geometry, friction):
    """Project penetrating particles onto segment surfaces (in place).

    No restitution; tangential velocity gets Coulomb-like damping scaled by
    the normal impulse. Idempotent on non-penetrating states.
    """
    pos = system.positions
    vel = system.velocities
    for seg in geometry.segments:
        a = seg[:2]
        ab = seg[2:4] - a
        seg_len2 = float(ab @ ab)
        if seg_len2 < _EPS_LEN:
            continue
        n = np.array([-ab[1], ab[0]]) / np.sqrt(seg_len2)
        depth_limit = seg[4]
        rel = pos - a
        sd = rel @ n
        t = (rel @ ab) / seg_len2
        hit = (sd < -_PROJ_TOL) & (sd > -depth_limit) & (t >= 0.0) & (t <= 1.0)
        if not hit.any():
            continue
        idx = np.nonzero(hit)[0]
        pos[idx] -= sd[idx, None] * n
        vn = vel[idx] @ n
        entering = vn < 0.0
        if entering.any():
            # clamp normal velocity to 0, damp tangential by the normal impulse
            j = idx[entering]
            vt = vel[j] - vn[entering, None] * n
            vt_mag = np.sqrt((vt * vt).sum(axis=1))
            factor = np.maximum(0.0, 1.0 - friction * np.abs(vn[entering]) / np.maximum(vt_mag, 1e-9))
            vel[j] = vt * factor[:, None]
    return system


def step(world, action):
    """Advance one control step (in place) and return the world.

    action: object with dx, dy (m/s, already clamped) and grasp_logit.
    """
    params = world.params
    grip = world.gripper
    parts = world.particles

    grip.velocity = np.array([action.dx, action.dy], dtype=np.float64)
    if grip.workspace is not None:
        # the kernel moves the gripper linearly, so clamping the commanded
        # velocity keeps the end-of-step position inside the workspace box
        xmin, xmax, ymin, ymax = grip.workspace
        end = grip.position + grip.velocity * params.dt_control
        end[0] = min(max(end[0], xmin), xmax)
        end[1] = min(max(end[1], ymin), ymax)
        grip.velocity = (end - grip.position) / params.dt_control
    want_grasp = action.grasp_logit > 0.0
    if want_grasp and not grip.grasping:
        grip.grasping = True
        delta = parts.positions - grip.position
        dist = np.sqrt((delta * delta).sum(axis=1))
        nearest = int(np.argmin(dist))
        if dist[nearest] <= grip.attach_radius:
            grip.attached_particle = nearest
    elif not want_grasp and grip.grasping:
        grip.grasping = False
        grip.attached_particle = None

    dt = params.dt_control / params.substeps
    pin = -1 if grip.attached_particle is None else int(grip.attached_particle)
    kstiff = np.array([params.stretch_stiffness, params.shear_stiffness, params.bend_stiffness])
    grip_pos = np.ascontiguousarray(grip.position, dtype=np.float64)
    topo = parts.topology
    control_step(
        parts.positions, parts.velocities, parts.masses,
        topo.index_a, topo.index_b, topo.rest_length, topo.kind,
        kstiff, params.damping_coeff, params.gravity,
        world.geometry.segments, params.friction_coeff,
        grip_pos, grip.velocity, pin, params.substeps, dt,
    )
    grip.position = grip_pos

    world.time_step += 1
    if not (np.all(np.isfinite(parts.positions)) and np.all(np.isfinite(parts.velocities))
            and np.all(np.isfinite(grip.position))):
        raise SimulationDiverged(world.time_step)
    return world


def privileged_state(world, prev_positions):
    """Privileged particle state: positions, per-step deltas, mass, centroid."""
    pos = world.particles.positions
    prev = np.asarray(prev_positions, dtype=np.float64)
    if prev.shape != pos.shape:
        raise ValueError(f"prev_positions shape {prev.shape} != current {pos.shape}")
    masses = world.particles.masses
    total = float(masses.sum())
    centroid = (pos * masses[:, None]).sum(axis=0) / total
    return PrivilegedState(
        particle_positions=pos.copy(),
        particle_deltas=pos - prev,
        total_mass=total,
        centroid=centroid,
    )


def spring_potential_energy(system, params):
    topo = system.topology
    d = system.positions[topo.index_b] - system.positions[topo.index_a]
    length = np.sqrt((d * d).sum(axis=1))
    k = np.choose(topo.kind, (params.stretch_stiffness, params.shear_stiffness, params.bend_stiffness))
    ext = length - topo.rest_length
    return float(0.5 * (k * ext * ext).sum())


def kinetic_energy(system):
    v2 = (system.velocities * system.velocities).sum(axis=1)
    return float(0.5 * (system.masses * v2).sum())
