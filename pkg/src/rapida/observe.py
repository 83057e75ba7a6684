"""Non-privileged observations: 64-ray depth scan, gripper proprioception,
the 3-channel action, and the 10-step observation-action history buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernel

NUM_RAYS = 64
PROPRIO_DIM = 5
OBS_DIM = NUM_RAYS + PROPRIO_DIM          # 69
ACTION_DIM = 3
HISTORY_LEN = 10
HISTORY_DIM = HISTORY_LEN * (OBS_DIM + ACTION_DIM)  # 720

V_MAX = 0.5  # m/s gripper speed limit


@dataclass
class Camera:
    origin: np.ndarray
    fan_center_angle: float
    fan_half_angle: float
    max_range: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        if self.max_range <= 0:
            raise ValueError("max_range must be > 0")
        if not 0 < self.fan_half_angle < np.pi:
            raise ValueError("fan_half_angle must be in (0, pi)")

    def ray_angles(self):
        return np.linspace(
            self.fan_center_angle - self.fan_half_angle,
            self.fan_center_angle + self.fan_half_angle,
            NUM_RAYS,
        )


@dataclass
class DepthScan:
    distances: np.ndarray  # (64,) raw distances, in (0, max_range]
    camera: Camera


@dataclass
class Proprio:
    gripper_position: np.ndarray
    gripper_velocity: np.ndarray
    grasping: float


@dataclass
class Observation:
    depth: DepthScan
    proprio: Proprio

    def vector(self):
        """Flat network input: normalized depth (64) + proprio (5)."""
        return np.concatenate([
            self.depth.distances / self.depth.camera.max_range,
            self.proprio.gripper_position,
            self.proprio.gripper_velocity,
            [self.proprio.grasping],
        ])


@dataclass
class Action:
    dx: float
    dy: float
    grasp_logit: float

    def __post_init__(self):
        self.dx = float(np.clip(self.dx, -V_MAX, V_MAX))
        self.dy = float(np.clip(self.dy, -V_MAX, V_MAX))
        self.grasp_logit = float(self.grasp_logit)

    @classmethod
    def from_vector(cls, vec):
        return cls(vec[0], vec[1], vec[2])

    def vector(self):
        return np.array([self.dx, self.dy, self.grasp_logit])


def _ray_segment_distances(origin, dirs, segments, max_range):
    """Min hit distance per ray against (M, 4) segments; max_range if no hit."""
    if len(segments) == 0:
        return np.full(len(dirs), max_range)
    if _kernel.HAVE_NUMBA:
        return _kernel.ray_cast(np.ascontiguousarray(origin, dtype=np.float64),
                                np.ascontiguousarray(dirs),
                                np.ascontiguousarray(segments, dtype=np.float64),
                                float(max_range))
    return _ray_segment_distances_reference(origin, dirs, segments, max_range)


def _ray_segment_distances_reference(origin, dirs, segments, max_range):
    """Vectorized numpy reference for the compiled ray_cast kernel."""
    a = segments[:, :2]
    s = segments[:, 2:] - a                      # (M, 2)
    ao = a - origin                              # (M, 2)
    # solve origin + t*d = a + u*s
    denom = dirs[:, 0, None] * s[None, :, 1] - dirs[:, 1, None] * s[None, :, 0]  # (R, M)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[None, :, 0] * s[None, :, 1] - ao[None, :, 1] * s[None, :, 0]) / denom
        u = (ao[None, :, 0] * dirs[:, 1, None] - ao[None, :, 1] * dirs[:, 0, None]) / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    best = t.min(axis=1)
    return np.minimum(best, max_range)


def _ray_circle_distances(origin, dirs, center, radius):
    """Nearest positive intersection per ray with a circle; inf if none."""
    oc = origin - center
    b = dirs @ oc
    c = float(oc @ oc) - radius * radius
    disc = b * b - c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t1 = -b - sq
    t2 = -b + sq
    t = np.where(t1 > 1e-9, t1, np.where(t2 > 1e-9, t2, np.inf))
    return np.where(hit, t, np.inf)


def render_depth(world, camera):
    """Ray-cast 64 evenly spaced rays against geometry, deformable edges,
    and the gripper disc. Misses read max_range."""
    angles = camera.ray_angles()
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    topo = world.particles.topology
    pos = world.particles.positions
    edges = np.concatenate([pos[topo.index_a], pos[topo.index_b]], axis=1)
    segments = np.concatenate([world.geometry.segments[:, :4], edges], axis=0)

    dist = _ray_segment_distances(camera.origin, dirs, segments, camera.max_range)
    grip_t = _ray_circle_distances(camera.origin, dirs, world.gripper.position, world.gripper.radius)
    dist = np.minimum(dist, np.minimum(grip_t, camera.max_range))
    return DepthScan(distances=dist, camera=camera)


def observe(world, camera):
    depth = render_depth(world, camera)
    proprio = Proprio(
        gripper_position=world.gripper.position.copy(),
        gripper_velocity=world.gripper.velocity.copy(),
        grasping=1.0 if world.gripper.grasping else 0.0,
    )
    return Observation(depth=depth, proprio=proprio)


@dataclass
class HistoryBuffer:
    """Ring buffer of the 10 most recent (observation, action) pairs.

    Reads are chronological; missing slots (before 10 pushes) are all-zeros
    at the front.
    """
    capacity: int = HISTORY_LEN
    entries: list = field(default_factory=list)

    @property
    def fill_count(self):
        return len(self.entries)

    def push(self, obs, act):
        obs_vec = obs.vector() if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64)
        act_vec = act.vector() if isinstance(act, Action) else np.asarray(act, dtype=np.float64)
        self.entries.append((obs_vec, act_vec))
        if len(self.entries) > self.capacity:
            self.entries.pop(0)
        return self

    def read(self):
        """Chronological list of (obs_vec, act_vec), zero-padded at the front."""
        pad = self.capacity - len(self.entries)
        zeros = (np.zeros(OBS_DIM), np.zeros(ACTION_DIM))
        return [zeros] * pad + list(self.entries)

    def flatten(self):
        parts = []
        for obs_vec, act_vec in self.read():
            parts.append(obs_vec)
            parts.append(act_vec)
        return np.concatenate(parts)

    def clear(self):
        self.entries.clear()


def push_history(buffer, obs, act):
    return buffer.push(obs, act)
