"""Desk-scale manipulation tasks: `insert` (get a chain end into the
container) and `cover` (drape a strip over the container opening).

Owns the reward, success predicates, horizon, and domain randomization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import observe as obs_mod
from . import physics
from .observe import Action, HistoryBuffer, observe
from .physics import (
    STRETCH,
    PhysicsParams,
    PrivilegedAccessError,
    WorldState,
    build_deformable,
    privileged_state,
    stable_substeps,
    step,
)
from .scene import load_scene

NUM_TRACKED = 8
PRIV_FEAT_DIM = 1 + 2 + 2 * NUM_TRACKED          # mass, centroid, tracked deltas = 19
PRIV_HIST_DIM = obs_mod.HISTORY_LEN * (2 * NUM_TRACKED + obs_mod.ACTION_DIM)  # 190

SETTLE_STEPS = 20


@dataclass
class TaskSpec:
    kind: str = "insert"                 # insert | cover
    scene: str = ""                      # path or builtin name; defaults to kind
    coverage_threshold: float = 0.9
    success_hold_steps: int = 5
    horizon: int = 200
    shaping_coeff: float = 0.01

    def __post_init__(self):
        if self.kind not in ("insert", "cover"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if not 0 < self.coverage_threshold <= 1:
            raise ValueError("coverage_threshold must be in (0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.scene:
            self.scene = self.kind


@dataclass
class RandomizationRanges:
    stretch_stiffness: tuple = (1.0, 500.0)    # log-uniform, N/m
    bend_stiffness: tuple = (0.01, 50.0)       # log-uniform, N/m
    damping: tuple = (0.05, 0.5)               # uniform
    particle_mass: tuple = (0.02, 0.2)         # uniform, kg
    chain_cols: tuple = (8, 24)                # insert, inclusive
    grid_rows: tuple = (1, 2)                  # cover, inclusive
    grid_cols: tuple = (8, 16)                 # cover, inclusive


@dataclass
class EpisodeOutcome:
    success: bool
    steps_taken: int
    final_coverage: float   # coverage for cover, inside flag (0/1) for insert
    episode_return: float


# ---------------------------------------------------------------------------
# geometry predicates


def point_in_convex_polygon(point, polygon):
    """Strict interior test for a convex CCW polygon."""
    p = np.asarray(point)
    poly = np.asarray(polygon)
    for i in range(len(poly)):
        a = poly[i]
        b = poly[(i + 1) % len(poly)]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cross <= 0:
            return False
    return True


def polygon_centroid(polygon):
    """Area centroid of a simple polygon (shoelace)."""
    poly = np.asarray(polygon, dtype=np.float64)
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


def chain_endpoints(world):
    pos = world.particles.positions
    topo = world.particles.topology
    return pos[0], pos[topo.num_particles - 1]


def endpoint_inside_container(world):
    """Instantaneous predicate: either chain endpoint strictly inside."""
    poly = world.geometry.container_interior
    e0, e1 = chain_endpoints(world)
    return point_in_convex_polygon(e0, poly) or point_in_convex_polygon(e1, poly)


COVER_BAND_HEIGHT = 0.05


def union_length(intervals):
    """Total length of a union of (lo, hi) intervals."""
    ivs = sorted((lo, hi) for lo, hi in intervals if hi > lo)
    total = 0.0
    cur_lo, cur_hi = None, None
    for lo, hi in ivs:
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total


def coverage(world):
    """Fraction of the opening span covered by x-projections of deformable
    edges fully inside the band above the opening. Exact interval union."""
    xl, xr, y_level = world.geometry.opening_span
    lo_y, hi_y = y_level, y_level + COVER_BAND_HEIGHT
    pos = world.particles.positions
    topo = world.particles.topology
    pa = pos[topo.index_a]
    pb = pos[topo.index_b]
    in_band = (
        (pa[:, 1] >= lo_y) & (pa[:, 1] <= hi_y) & (pb[:, 1] >= lo_y) & (pb[:, 1] <= hi_y)
    )
    intervals = []
    for j in np.nonzero(in_band)[0]:
        a, b = sorted((pa[j, 0], pb[j, 0]))
        a, b = max(a, xl), min(b, xr)
        if b > a:
            intervals.append((a, b))
    return union_length(intervals) / (xr - xl)


SHAPING_DIST_CLIP = 4.0


def _container_centroid(geometry):
    """Centroid of the (static) container polygon, cached on the geometry."""
    cached = getattr(geometry, "_centroid", None)
    if cached is None:
        cached = polygon_centroid(geometry.container_interior)
        geometry._centroid = cached
    return cached


def shaping_distance(world, task):
    """Distance from the task-relevant object feature to the target."""
    if task.kind == "insert":
        target = _container_centroid(world.geometry)
        e0, e1 = chain_endpoints(world)
        d = min(float(np.linalg.norm(e0 - target)), float(np.linalg.norm(e1 - target)))
    else:
        xl, xr, y_level = world.geometry.opening_span
        target = np.array([(xl + xr) / 2.0, y_level])
        masses = world.particles.masses
        centroid = (world.particles.positions * masses[:, None]).sum(axis=0) / masses.sum()
        d = float(np.linalg.norm(centroid - target))
    return min(d, SHAPING_DIST_CLIP)


def reward(world, task, success_now):
    return (1.0 if success_now else 0.0) - task.shaping_coeff * shaping_distance(world, task)


# ---------------------------------------------------------------------------
# environment


class EpisodeDone(RuntimeError):
    pass


class DeformableEnv:
    """One task episode at a time. `mode` is 'train' (privileged state
    available) or 'deploy' (privileged access is a contract violation)."""

    def __init__(self, task, ranges=None, mode="train", substeps=None, dt_control=None):
        if mode not in ("train", "deploy"):
            raise ValueError(f"unknown mode {mode!r}")
        self.task = task
        self.ranges = ranges if ranges is not None else RandomizationRanges()
        self.mode = mode
        self.scene = load_scene(task.scene)
        self.camera = self.scene.camera
        self._substeps = substeps
        self._dt_control = dt_control
        # analysis hooks: fixed params/topology/poses instead of sampling
        self.overrides = None
        self.world = None
        self.done = True
        self.time = 0
        self.history = HistoryBuffer()
        self._priv_entries = []
        self._hold = 0
        self._episode_return = 0.0
        self._last_obs = None
        self._prev_positions = None
        self._tracked = None

    # -- randomization ------------------------------------------------------

    def sample_params(self, rng):
        lo, hi = self.ranges.stretch_stiffness
        stretch = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        lo, hi = self.ranges.bend_stiffness
        bend = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        kwargs = dict(
            stretch_stiffness=stretch,
            shear_stiffness=stretch,
            bend_stiffness=bend,
            damping_coeff=rng.uniform(*self.ranges.damping),
            particle_mass=rng.uniform(*self.ranges.particle_mass),
        )
        if self._dt_control is not None:
            kwargs["dt_control"] = self._dt_control
        # stiff-and-light samples need a finer substep to stay stable
        kwargs["substeps"] = stable_substeps(
            stretch, stretch, bend, kwargs["particle_mass"],
            dt_control=kwargs.get("dt_control", 1.0 / 3.0),
            base=self._substeps if self._substeps is not None else 40)
        return PhysicsParams(**kwargs)

    def sample_topology(self, rng):
        if self.task.kind == "insert":
            rows = 1
            cols = int(rng.integers(self.ranges.chain_cols[0], self.ranges.chain_cols[1] + 1))
        else:
            rows = int(rng.integers(self.ranges.grid_rows[0], self.ranges.grid_rows[1] + 1))
            cols = int(rng.integers(self.ranges.grid_cols[0], self.ranges.grid_cols[1] + 1))
        return {"rows": rows, "cols": cols, "spacing": self.scene.object_spacing}

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, seed):
        rng = np.random.Generator(np.random.PCG64(seed))
        ov = self.overrides or {}
        params = ov.get("params") or self.sample_params(rng)
        topo_spec = ov.get("topology") or self.sample_topology(rng)

        xmin, xmax, ymin, ymax = self.scene.object_region
        origin = ov.get("origin")
        if origin is None:
            origin = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        system = build_deformable(topo_spec, params, {"origin": origin, "angle": 0.0})

        gxmin, gxmax, gymin, gymax = self.scene.gripper_region
        grip_pos = ov.get("gripper")
        if grip_pos is None:
            grip_pos = np.array([rng.uniform(gxmin, gxmax), rng.uniform(gymin, gymax)])
        gripper = physics.Gripper(
            position=np.asarray(grip_pos, dtype=np.float64).copy(),
            workspace=self.scene.workspace,
        )
        self.world = WorldState(system, self.scene.geometry, gripper, params)

        rest = Action(0.0, 0.0, -1.0)
        grip_start = gripper.position.copy()
        for _ in range(SETTLE_STEPS):
            step(self.world, rest)
        gripper.position = grip_start
        gripper.velocity = np.zeros(2)
        system.velocities[:] = 0.0  # episode starts exactly at rest
        self.world.time_step = 0

        n = system.topology.num_particles
        self._tracked = np.linspace(0, n - 1, NUM_TRACKED).round().astype(int)
        self._prev_positions = system.positions.copy()
        self.history = HistoryBuffer()
        self._priv_entries = []
        self._hold = 0
        self.time = 0
        self.done = False
        self._episode_return = 0.0
        self._last_obs = observe(self.world, self.camera)
        return self._last_obs

    def _predicate(self):
        if self.task.kind == "insert":
            return endpoint_inside_container(self.world)
        return bool(coverage(self.world) >= self.task.coverage_threshold)

    def step(self, action):
        if self.done:
            raise EpisodeDone("step() called on a finished episode")
        if not isinstance(action, Action):
            action = Action.from_vector(np.asarray(action, dtype=np.float64))

        # histories record the pair (observation the action was based on, action)
        self.history.push(self._last_obs, action)
        if self.mode == "train":
            tracked_pos = self.world.particles.positions[self._tracked].ravel().copy()
            self._priv_entries.append((tracked_pos, action.vector()))
            if len(self._priv_entries) > obs_mod.HISTORY_LEN:
                self._priv_entries.pop(0)

        self._prev_positions = self.world.particles.positions.copy()
        step(self.world, action)
        self.time += 1

        if self._predicate():
            self._hold += 1
        else:
            self._hold = 0
        success_now = self._hold >= self.task.success_hold_steps
        r = reward(self.world, self.task, success_now)
        self._episode_return += r
        self.done = success_now or self.time >= self.task.horizon

        obs = observe(self.world, self.camera)
        self._last_obs = obs
        info = {"success": success_now, "time": self.time}
        if self.task.kind == "cover":
            info["coverage"] = coverage(self.world)
        if self.mode == "train":
            info["privileged"] = self.privileged()
            info["priv_features"] = self.priv_features()
            info["priv_history"] = self.priv_history()
        return obs, r, self.done, info

    def outcome(self):
        if self.task.kind == "cover":
            final = coverage(self.world)
        else:
            final = 1.0 if endpoint_inside_container(self.world) else 0.0
        return EpisodeOutcome(
            success=self._hold >= self.task.success_hold_steps,
            steps_taken=self.time,
            final_coverage=final,
            episode_return=self._episode_return,
        )

    # -- privileged accessors (training only) --------------------------------

    def privileged(self):
        if self.mode == "deploy":
            raise PrivilegedAccessError(
                "privileged state requested in deploy mode (sim-to-real firewall)"
            )
        return privileged_state(self.world, self._prev_positions)

    def priv_features(self):
        """Flat dynamics-encoder input block: mass, centroid, tracked deltas."""
        priv = self.privileged()
        deltas = priv.particle_deltas[self._tracked].ravel()
        return np.concatenate([[priv.total_mass], priv.centroid, deltas])

    def priv_history(self):
        """Flat shape-encoder input: last 10 (tracked positions, action) pairs,
        zero-padded at the front."""
        if self.mode == "deploy":
            raise PrivilegedAccessError(
                "privileged history requested in deploy mode (sim-to-real firewall)"
            )
        pad = obs_mod.HISTORY_LEN - len(self._priv_entries)
        zeros = (np.zeros(2 * NUM_TRACKED), np.zeros(obs_mod.ACTION_DIM))
        parts = []
        for pos_vec, act_vec in [zeros] * pad + self._priv_entries:
            parts.append(pos_vec)
            parts.append(act_vec)
        return np.concatenate(parts)
