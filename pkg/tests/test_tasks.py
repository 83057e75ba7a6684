"""Tests for the task layer: randomization, reset/step lifecycle, reward,
success predicates, coverage, and the privileged-access firewall."""

import math

import numpy as np
import pytest
from scipy import stats

from rapida.observe import ACTION_DIM, HISTORY_LEN
from rapida.physics import (
    Gripper,
    PhysicsParams,
    PrivilegedAccessError,
    WorldState,
    build_deformable,
)
from rapida.scene import load_scene
from rapida.tasks import (
    PRIV_FEAT_DIM,
    PRIV_HIST_DIM,
    DeformableEnv,
    EpisodeDone,
    RandomizationRanges,
    TaskSpec,
    coverage,
    endpoint_inside_container,
    point_in_convex_polygon,
    polygon_centroid,
    reward,
    shaping_distance,
    union_length,
)

INSERT = TaskSpec(kind="insert")
COVER = TaskSpec(kind="cover")


def make_env(kind="insert", **kwargs):
    task = TaskSpec(kind=kind)
    return DeformableEnv(task, RandomizationRanges(), **kwargs)


# ---------------------------------------------------------------------------
# TaskSpec validation


def test_taskspec_rejects_unknown_kind():
    with pytest.raises(ValueError):
        TaskSpec(kind="stack")


def test_taskspec_rejects_bad_threshold():
    with pytest.raises(ValueError):
        TaskSpec(coverage_threshold=0.0)
    with pytest.raises(ValueError):
        TaskSpec(coverage_threshold=1.5)


def test_taskspec_scene_defaults_to_kind():
    assert TaskSpec(kind="cover").scene == "cover"


# ---------------------------------------------------------------------------
# randomization


def test_stiffness_log_uniform_ks():
    env = make_env()
    rng = np.random.default_rng(0)
    samples = np.array([env.sample_params(rng).stretch_stiffness for _ in range(1000)])
    lo, hi = RandomizationRanges().stretch_stiffness
    assert samples.min() >= lo and samples.max() <= hi
    # log of a log-uniform variable is uniform
    u = (np.log(samples) - math.log(lo)) / (math.log(hi) - math.log(lo))
    ks = stats.kstest(u, "uniform")
    assert ks.statistic < 0.05


def test_both_stiffness_regimes_covered():
    env = make_env()
    soft = hard = 0
    for seed in range(100):
        env.reset(seed)
        k = env.world.params.stretch_stiffness
        soft += 1 <= k <= 10
        hard += 100 <= k <= 500
    assert soft >= 20
    assert hard >= 20


def test_topology_ranges():
    insert_env, cover_env = make_env("insert"), make_env("cover")
    rng = np.random.default_rng(1)
    for _ in range(50):
        spec = insert_env.sample_topology(rng)
        assert spec["rows"] == 1
        assert 8 <= spec["cols"] <= 24
        spec = cover_env.sample_topology(rng)
        assert spec["rows"] in (1, 2)
        assert 8 <= spec["cols"] <= 16
    # both topology bounds actually get hit
    cols = {insert_env.sample_topology(rng)["cols"] for _ in range(500)}
    assert 8 in cols and 24 in cols


def test_reset_same_seed_bitwise():
    env1, env2 = make_env(), make_env()
    env1.reset(42)
    env2.reset(42)
    np.testing.assert_array_equal(env1.world.particles.positions,
                                  env2.world.particles.positions)
    np.testing.assert_array_equal(env1.world.gripper.position,
                                  env2.world.gripper.position)
    assert env1.world.params == env2.world.params


def test_reset_settles_object():
    env = make_env()
    for seed in (0, 7, 123):
        env.reset(seed)
        speed = np.linalg.norm(env.world.particles.velocities, axis=1).max()
        assert speed < 1e-3
        assert env.time == 0 and not env.done


# ---------------------------------------------------------------------------
# geometry predicates


def half_plane_oracle(point, polygon):
    """Independent strict interior test: inside all CCW edge half-planes."""
    poly = np.asarray(polygon)
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        edge = b - a
        normal = np.array([-edge[1], edge[0]])  # inward for CCW
        if float(normal @ (np.asarray(point) - a)) <= 0.0:
            return False
    return True


def test_point_in_polygon_matches_half_plane_oracle():
    rng = np.random.default_rng(2)
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tri = np.array([[0.0, 0.0], [2.0, 0.5], [0.5, 2.0]])
    for poly in (square, tri):
        for _ in range(100):
            p = rng.uniform(-0.5, 2.5, size=2)
            assert point_in_convex_polygon(p, poly) == half_plane_oracle(p, poly)


def test_point_on_boundary_is_outside():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    assert not point_in_convex_polygon([0.5, 0.0], square)
    assert not point_in_convex_polygon([0.0, 0.0], square)
    assert point_in_convex_polygon([0.5, 0.5], square)


def test_polygon_centroid_square():
    square = np.array([[1.0, 2.0], [3.0, 2.0], [3.0, 4.0], [1.0, 4.0]])
    np.testing.assert_allclose(polygon_centroid(square), [2.0, 3.0], atol=1e-12)


# ---------------------------------------------------------------------------
# interval union / coverage


def test_union_length_oracle():
    assert union_length([]) == 0.0
    assert union_length([(0, 1), (2, 3)]) == 2.0
    assert union_length([(0, 2), (1, 3)]) == 3.0
    assert union_length([(0, 1), (0.2, 0.8)]) == 1.0
    assert union_length([(1, 1)]) == 0.0  # empty interval dropped


def strip_world(positions, kind="cover"):
    """World with a 1-row chain whose particle positions are overwritten."""
    positions = np.asarray(positions, dtype=np.float64)
    params = PhysicsParams()
    system = build_deformable(
        {"rows": 1, "cols": len(positions), "spacing": 0.04}, params
    )
    system.positions[:] = positions
    scene = load_scene(kind)
    gripper = Gripper(position=np.array([0.0, 0.5]))
    return WorldState(system, scene.geometry, gripper, params)


def test_coverage_full_span_is_one():
    scene = load_scene("cover")
    xl, xr, y = scene.geometry.opening_span
    xs = np.linspace(xl - 0.02, xr + 0.02, 12)
    world = strip_world(np.stack([xs, np.full(12, y + 0.02)], axis=1))
    assert coverage(world) == 1.0


def test_coverage_far_object_is_zero():
    xs = np.linspace(-0.5, -0.1, 10)
    world = strip_world(np.stack([xs, np.zeros(10)], axis=1))
    assert coverage(world) == 0.0


def test_coverage_left_half():
    scene = load_scene("cover")
    xl, xr, y = scene.geometry.opening_span
    mid = (xl + xr) / 2.0
    xs = np.linspace(xl, mid, 8)
    world = strip_world(np.stack([xs, np.full(8, y + 0.01)], axis=1))
    assert abs(coverage(world) - 0.5) < 1e-9


def test_coverage_out_of_band_does_not_count():
    scene = load_scene("cover")
    xl, xr, y = scene.geometry.opening_span
    xs = np.linspace(xl, xr, 10)
    for dy in (-0.01, 0.08):  # below the opening / above the band
        world = strip_world(np.stack([xs, np.full(10, y + dy)], axis=1))
        assert coverage(world) == 0.0


def coverage_monte_carlo(world, n=10_000, rng=None):
    """Independent estimator: fraction of random x in the span lying under
    some fully-in-band edge's x-projection."""
    rng = rng or np.random.default_rng(0)
    xl, xr, y = world.geometry.opening_span
    lo, hi = y, y + 0.05
    pos = world.particles.positions
    topo = world.particles.topology
    pa, pb = pos[topo.index_a], pos[topo.index_b]
    in_band = ((pa[:, 1] >= lo) & (pa[:, 1] <= hi)
               & (pb[:, 1] >= lo) & (pb[:, 1] <= hi))
    x_lo = np.minimum(pa[:, 0], pb[:, 0])[in_band]
    x_hi = np.maximum(pa[:, 0], pb[:, 0])[in_band]
    xs = rng.uniform(xl, xr, size=n)
    covered = ((xs[:, None] >= x_lo[None, :]) & (xs[:, None] <= x_hi[None, :])).any(axis=1)
    return covered.mean()


def test_coverage_matches_monte_carlo_3sigma():
    rng = np.random.default_rng(9)
    scene = load_scene("cover")
    xl, xr, y = scene.geometry.opening_span
    n = 10_000
    for _ in range(50):
        k = int(rng.integers(4, 14))
        xs = rng.uniform(xl - 0.1, xr + 0.1, size=k)
        ys = y + rng.uniform(-0.02, 0.07, size=k)
        world = strip_world(np.stack([xs, ys], axis=1))
        exact = coverage(world)
        mc = coverage_monte_carlo(world, n=n, rng=rng)
        sigma = math.sqrt(max(exact * (1 - exact), 1e-12) / n)
        assert abs(exact - mc) <= 3 * sigma + 1e-9


def test_coverage_monotone_in_added_edges():
    rng = np.random.default_rng(10)
    scene = load_scene("cover")
    xl, xr, y = scene.geometry.opening_span
    for _ in range(20):
        k = int(rng.integers(4, 10))
        xs = rng.uniform(xl - 0.1, xr + 0.1, size=k + 2)
        ys = y + rng.uniform(-0.02, 0.07, size=k + 2)
        ys[-2:] = y + 0.02  # the appended edge lies in the band
        small = strip_world(np.stack([xs[:k], ys[:k]], axis=1))
        big = strip_world(np.stack([xs, ys], axis=1))
        assert coverage(big) >= coverage(small) - 1e-12


# ---------------------------------------------------------------------------
# reward


def test_reward_success_at_zero_distance():
    env = make_env()
    env.reset(0)
    world = env.world
    # move an endpoint onto the container centroid
    target = polygon_centroid(world.geometry.container_interior)
    world.particles.positions[0] = target
    assert shaping_distance(world, INSERT) == 0.0
    assert reward(world, INSERT, True) == 1.0


def test_reward_formula_at_distance_two():
    env = make_env()
    env.reset(0)
    world = env.world
    target = polygon_centroid(world.geometry.container_interior)
    world.particles.positions[:] = target + np.array([-2.0, 0.0])
    assert abs(shaping_distance(world, INSERT) - 2.0) < 1e-12
    assert abs(reward(world, INSERT, False) - (-0.02)) < 1e-12


def test_reward_monotone_in_distance():
    env = make_env()
    env.reset(0)
    world = env.world
    target = polygon_centroid(world.geometry.container_interior)
    rs = []
    for d in (0.3, 0.7, 1.4):
        world.particles.positions[:] = target + np.array([-d, 0.0])
        rs.append(reward(world, INSERT, False))
    assert rs[0] > rs[1] > rs[2]


def test_insert_shaping_uses_nearer_endpoint():
    env = make_env()
    env.reset(0)
    world = env.world
    target = polygon_centroid(world.geometry.container_interior)
    n = world.particles.topology.num_particles
    world.particles.positions[:] = target + np.array([-1.0, 0.0])
    world.particles.positions[n - 1] = target + np.array([0.25, 0.0])
    assert abs(shaping_distance(world, INSERT) - 0.25) < 1e-12


# ---------------------------------------------------------------------------
# success predicates and episode lifecycle


class ScriptedPredicateEnv(DeformableEnv):
    """DeformableEnv whose success predicate follows a fixed script."""

    def __init__(self, script, **kwargs):
        super().__init__(TaskSpec(kind="insert"), RandomizationRanges(), **kwargs)
        self.script = list(script)

    def _predicate(self):
        return self.script[self.time - 1]


def run_script(script):
    env = ScriptedPredicateEnv(script)
    env.reset(0)
    rest = np.zeros(ACTION_DIM)
    rest[2] = -1.0
    for _ in range(len(script)):
        obs, r, done, info = env.step(rest)
        if done:
            return env, info, r
    return env, info, r


def test_hold_five_steps_succeeds():
    env, info, r = run_script([True] * 5)
    assert info["success"] and env.done
    assert env.time == 5
    assert r > 0.9  # terminal reward includes the +1


def test_hold_resets_on_gap():
    env, info, _ = run_script([True] * 4 + [False] + [True] * 4)
    assert not info["success"]
    assert env._hold == 4


def test_horizon_terminates_without_success():
    task = TaskSpec(kind="insert", horizon=7)
    env = DeformableEnv(task, RandomizationRanges())
    env.reset(0)
    rest = np.array([0.0, 0.0, -1.0])
    done = False
    while not done:
        _, _, done, info = env.step(rest)
    assert env.time == 7
    assert not info["success"]
    out = env.outcome()
    assert not out.success and out.steps_taken == 7


def test_step_after_done_raises():
    task = TaskSpec(kind="insert", horizon=2)
    env = DeformableEnv(task, RandomizationRanges())
    env.reset(0)
    rest = np.array([0.0, 0.0, -1.0])
    env.step(rest)
    env.step(rest)
    with pytest.raises(EpisodeDone):
        env.step(rest)


def test_success_implies_done_same_step():
    env, info, _ = run_script([True] * 9)
    assert env.time == 5  # terminated right when the hold was reached


def test_return_bounds():
    env = make_env()
    rng = np.random.default_rng(3)
    for seed in range(5):
        env.reset(seed)
        done = False
        while not done:
            a = np.append(rng.uniform(-0.5, 0.5, 2), rng.uniform(-1, 1))
            _, _, done, _ = env.step(a)
        out = env.outcome()
        assert out.episode_return <= 1.0 + 1e-12
        d_max = 4.0  # shaping distance clip
        assert out.episode_return >= -INSERT.shaping_coeff * d_max * INSERT.horizon


# ---------------------------------------------------------------------------
# privileged firewall


def test_privileged_available_in_train_mode():
    env = make_env(mode="train")
    env.reset(0)
    _, _, _, info = env.step(np.array([0.1, 0.0, -1.0]))
    assert "privileged" in info
    assert info["priv_features"].shape == (PRIV_FEAT_DIM,)
    assert info["priv_history"].shape == (PRIV_HIST_DIM,)


def test_privileged_faults_in_deploy_mode():
    env = make_env(mode="deploy")
    env.reset(0)
    _, _, _, info = env.step(np.array([0.1, 0.0, -1.0]))
    assert "privileged" not in info
    with pytest.raises(PrivilegedAccessError):
        env.privileged()
    with pytest.raises(PrivilegedAccessError):
        env.priv_history()


def test_priv_history_pads_and_orders():
    env = make_env(mode="train")
    env.reset(0)
    env.step(np.array([0.1, 0.0, -1.0]))
    h = env.priv_history()
    per = PRIV_HIST_DIM // HISTORY_LEN
    assert not h[: per * (HISTORY_LEN - 1)].any()  # zero padding in front
    assert h[per * (HISTORY_LEN - 1):].any()


def test_mode_validation():
    with pytest.raises(ValueError):
        make_env(mode="test")


# ---------------------------------------------------------------------------
# misc


def test_insert_endpoint_predicate_uses_either_end():
    env = make_env()
    env.reset(0)
    world = env.world
    target = polygon_centroid(world.geometry.container_interior)
    n = world.particles.topology.num_particles
    world.particles.positions[:] = np.array([-0.5, 0.0])
    assert not endpoint_inside_container(world)
    world.particles.positions[n - 1] = target
    assert endpoint_inside_container(world)
    world.particles.positions[n - 1] = np.array([-0.5, 0.0])
    world.particles.positions[0] = target
    assert endpoint_inside_container(world)


def test_gripper_respects_scene_workspace():
    env = make_env()
    env.reset(0)
    ws = env.scene.workspace
    assert ws is not None
    for _ in range(60):
        env.step(np.array([-0.5, -0.5, -1.0]))  # push toward the corner
    x, y = env.world.gripper.position
    assert x >= ws[0] - 1e-12 and y >= ws[2] - 1e-12
