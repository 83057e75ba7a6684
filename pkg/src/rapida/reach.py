"""Trivial reach task: drive the gripper point to a fixed target under a
dense negative-distance reward. Used as the PPO sanity gate."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .observe import V_MAX
from .ppo import (
    EnvRunner,
    GaussianPolicyHead,
    PPOConfig,
    ValueHead,
    collect_rollouts,
    evaluate_policy,
    ppo_update,
)

REACH_OBS_DIM = 4


class ReachObs:
    def __init__(self, vec):
        self._vec = np.asarray(vec, dtype=np.float64)

    def vector(self):
        return self._vec


class ReachEnv:
    target = np.array([0.0, 0.0])
    horizon = 60
    success_radius = 0.05
    dt = 1.0 / 3.0

    def __init__(self):
        self.pos = np.zeros(2)
        self.time = 0
        self.done = True
        self._episode_return = 0.0

    def _obs(self):
        return ReachObs(np.concatenate([self.pos, self.target - self.pos]))

    def reset(self, seed):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.pos = rng.uniform(-1.0, 1.0, size=2)
        self.time = 0
        self.done = False
        self._episode_return = 0.0
        return self._obs()

    def step(self, action):
        if self.done:
            raise RuntimeError("step() on finished reach episode")
        a = np.asarray(action, dtype=np.float64)
        v = np.clip(a[:2], -V_MAX, V_MAX)
        self.pos = np.clip(self.pos + v * self.dt, -1.5, 1.5)
        self.time += 1
        dist = float(np.linalg.norm(self.pos - self.target))
        success = dist < self.success_radius
        r = -0.1 * dist + (1.0 if success else 0.0)
        self._episode_return += r
        self.done = success or self.time >= self.horizon
        return self._obs(), r, self.done, {"success": success, "time": self.time}


class ReachActor:
    """Plain observation-only actor for the sanity gate."""

    action_dim = 3

    def __init__(self, rng, hidden=(32, 32)):
        self.policy = GaussianPolicyHead([REACH_OBS_DIM, *hidden, self.action_dim], rng)
        self.value = ValueHead([REACH_OBS_DIM, *hidden, 1], rng)

    def record(self, env):
        return {"obs": env._obs().vector()}

    def policy_input(self, mb):
        return ad.Tensor(mb["obs"])

    def aux_loss(self, mb):
        return None

    def aux_metrics(self):
        return {}

    def trainable(self):
        return (self.policy.parameters() + self.value.parameters())


def train_reach(seed, updates=200, config=None, eval_every=0, target_success=None):
    """Train PPO on the reach task; returns (actor, final eval report, rows)."""
    config = config or PPOConfig(rollout_length=64, num_envs=8, minibatch_size=128)
    rng = np.random.Generator(np.random.PCG64(seed))
    actor = ReachActor(rng)
    envs = [ReachEnv() for _ in range(config.num_envs)]
    runner = EnvRunner(envs, lambda i, ep: (seed * 100003 + i * 1009 + ep) % 1_000_000)
    runner.reset_all()
    optimizer = ad.Adam(actor.trainable(), lr=config.learning_rate)
    rows = []
    for update in range(updates):
        buffer = collect_rollouts(runner, actor, config, rng)
        metrics = ppo_update(buffer, actor, optimizer, config, rng)
        metrics["update"] = update
        rows.append(metrics)
        if target_success is not None and update % 10 == 9:
            report = _eval_reach(actor, 20, 900_000 + seed)
            if report["success_rate"] >= target_success:
                return actor, report, rows
    return actor, _eval_reach(actor, 20, 900_000 + seed), rows


def _eval_reach(actor, episodes, seed_base):
    def act(env, obs, t):
        mb = {"obs": obs.vector()[None, :]}
        with ad.no_grad():
            return actor.policy.mean(actor.policy_input(mb)).data[0]
    return evaluate_policy(lambda: ReachEnv(), act, episodes, seed_base)
