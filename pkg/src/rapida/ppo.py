"""Proximal policy optimization with generalized advantage estimation.

The actor object supplied by the pipeline owns the networks and knows how to
rebuild its (differentiable) policy input from recorded per-step arrays, so
the same update code serves privileged training, distillation fine-tuning,
and end-to-end variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, no_grad


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lambda_gae: float = 0.95
    clip_epsilon: float = 0.2
    epochs_per_update: int = 4
    minibatch_size: int = 512
    entropy_coeff: float = 0.01
    value_coeff: float = 0.5
    rollout_length: int = 256
    num_envs: int = 8
    max_grad_norm: float = 0.5
    learning_rate: float = 3e-4

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if not 0 <= self.lambda_gae <= 1:
            raise ValueError("lambda_gae must be in [0, 1]")
        for name in ("clip_epsilon", "entropy_coeff", "value_coeff", "max_grad_norm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


LOG_STD_INIT = math.log(0.5)
LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0


class GaussianPolicyHead:
    """MLP mean network with a state-independent learned log-std vector."""

    def __init__(self, layer_dims, rng, name="policy"):
        self.mean_net = ad.MLP(layer_dims, rng=rng, name=f"{name}.mean")
        # Near-zero initial mean: exploration comes from the learned std, not
        # from whatever direction the random output layer happens to point.
        self.mean_net.weights[-1].data *= 0.01
        self.log_std = ad.Tensor(np.full(layer_dims[-1], LOG_STD_INIT), requires_grad=True)
        self.name = name

    def mean(self, inp):
        return self.mean_net(inp)

    def sample(self, mean_data, rng):
        std = np.exp(self.log_std.data)
        noise = rng.standard_normal(mean_data.shape)
        actions = mean_data + std * noise
        return actions, self.log_prob_np(actions, mean_data)

    def log_prob_np(self, actions, mean_data):
        std = np.exp(self.log_std.data)
        z = (actions - mean_data) / std
        return (
            -0.5 * (z * z).sum(axis=-1)
            - self.log_std.data.sum()
            - 0.5 * actions.shape[-1] * math.log(2 * math.pi)
        )

    def entropy(self):
        """Closed-form diagonal Gaussian entropy, as a Tensor."""
        k = self.log_std.data.shape[0]
        const = 0.5 * k * math.log(2 * math.pi * math.e)
        return ad.add(ad.tsum(self.log_std), ad.Tensor(const))

    def clamp_log_std(self):
        np.clip(self.log_std.data, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std.data)

    def parameters(self):
        return self.mean_net.parameters() + [(f"{self.name}.log_std", self.log_std)]


class ValueHead:
    def __init__(self, layer_dims, rng, name="value"):
        if layer_dims[-1] != 1:
            raise ValueError("value head must output a scalar")
        self.net = ad.MLP(layer_dims, rng=rng, name=name)

    def __call__(self, inp):
        return self.net(inp)

    def parameters(self):
        return self.net.parameters()


def gae(rewards, values, dones, bootstrap_value, gamma, lam):
    """Generalized advantage estimation over (T,) or (T, N) arrays.

    dones mark episode ends; bootstrap_value is V of the post-rollout state
    (ignored where the last step is done).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("gae: rewards, values, dones must have equal shapes")
    squeeze = rewards.ndim == 1
    if squeeze:
        rewards, values, dones = rewards[:, None], values[:, None], dones[:, None]
        bootstrap_value = np.atleast_1d(np.asarray(bootstrap_value, dtype=np.float64))

    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    next_adv = np.zeros(rewards.shape[1])
    for t in range(T - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        next_adv = delta + gamma * lam * not_done * next_adv
        adv[t] = next_adv
        next_value = values[t]
    returns = adv + values
    if squeeze:
        return adv[:, 0], returns[:, 0]
    return adv, returns


@dataclass
class RolloutBuffer:
    """Per-step records over a (rollout_length, num_envs) grid."""
    records: dict            # key -> (T, N, dim) float arrays
    actions: np.ndarray      # (T, N, A)
    log_probs: np.ndarray    # (T, N)
    rewards: np.ndarray      # (T, N)
    values: np.ndarray       # (T, N)
    dones: np.ndarray        # (T, N)
    bootstrap_value: np.ndarray  # (N,)
    episode_stats: list = field(default_factory=list)  # finished-episode dicts
    advantages: np.ndarray = None
    returns: np.ndarray = None

    @property
    def size(self):
        return self.rewards.size

    def finalize(self, gamma, lam):
        self.advantages, self.returns = gae(
            self.rewards, self.values, self.dones, self.bootstrap_value, gamma, lam
        )

    def flat(self):
        """Flatten the (T, N) grid to a batch dimension."""
        out = {k: v.reshape(-1, v.shape[-1]) for k, v in self.records.items()}
        out["actions"] = self.actions.reshape(-1, self.actions.shape[-1])
        out["log_probs"] = self.log_probs.reshape(-1)
        out["advantages"] = self.advantages.reshape(-1)
        out["returns"] = self.returns.reshape(-1)
        return out


class EnvRunner:
    """Owns a set of envs and the deterministic per-episode seed stream."""

    def __init__(self, envs, seed_fn):
        self.envs = envs
        self.seed_fn = seed_fn
        self.episode_counts = [0] * len(envs)
        self.obs = [None] * len(envs)

    def reset_all(self):
        for i, env in enumerate(self.envs):
            self.obs[i] = env.reset(self.seed_fn(i, self.episode_counts[i]))

    def reset_env(self, i):
        self.episode_counts[i] += 1
        self.obs[i] = self.envs[i].reset(self.seed_fn(i, self.episode_counts[i]))


def collect_rollouts(runner, actor, config, rng, deterministic=False):
    """Collect rollout_length steps from each env in the runner."""
    T, N = config.rollout_length, len(runner.envs)
    rec_keys = None
    records = None
    actions = np.zeros((T, N, actor.action_dim))
    log_probs = np.zeros((T, N))
    rewards = np.zeros((T, N))
    values = np.zeros((T, N))
    dones = np.zeros((T, N))
    stats = []

    for t in range(T):
        step_recs = [actor.record(env) for env in runner.envs]
        batch = {k: np.stack([r[k] for r in step_recs]) for k in step_recs[0]}
        if rec_keys is None:
            rec_keys = list(batch)
            records = {k: np.zeros((T, N) + batch[k].shape[1:]) for k in rec_keys}
        for k in rec_keys:
            records[k][t] = batch[k]

        with no_grad():
            inp = actor.policy_input(batch)
            mean = actor.policy.mean(inp).data
            values[t] = actor.value(inp).data[:, 0]
        if deterministic:
            act = mean
            lp = actor.policy.log_prob_np(act, mean)
        else:
            act, lp = actor.policy.sample(mean, rng)
        actions[t] = act
        log_probs[t] = lp

        for i, env in enumerate(runner.envs):
            obs, r, done, info = env.step(act[i])
            runner.obs[i] = obs
            rewards[t, i] = r
            dones[t, i] = float(done)
            if done:
                stats.append({
                    "env": i,
                    "success": bool(info.get("success", False)),
                    "length": info.get("time", 0),
                    "return": getattr(env, "_episode_return", 0.0),
                })
                runner.reset_env(i)

    final_recs = [actor.record(env) for env in runner.envs]
    batch = {k: np.stack([r[k] for r in final_recs]) for k in final_recs[0]}
    with no_grad():
        inp = actor.policy_input(batch)
        bootstrap = actor.value(inp).data[:, 0]

    return RolloutBuffer(records, actions, log_probs, rewards, values, dones,
                         bootstrap, stats)


def ppo_update(buffer, actor, optimizer, config, rng):
    """One PPO update: epochs_per_update passes over shuffled minibatches."""
    buffer.finalize(config.gamma, config.lambda_gae)
    flat = buffer.flat()
    n = len(flat["advantages"])
    adv = flat["advantages"]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    flat["advantages"] = adv

    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
              "clip_fraction": 0.0, "aux_loss": 0.0}
    nb = 0
    eps = config.clip_epsilon
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            mb = {k: v[idx] for k, v in flat.items()}
            with Tape() as tape:
                inp = actor.policy_input(mb)
                mean = actor.policy.mean(inp)
                logp = ad.gaussian_log_prob(mb["actions"], mean, actor.policy.log_std)
                ratio = ad.exp(ad.sub(logp, ad.Tensor(mb["log_probs"])))
                adv_t = ad.Tensor(mb["advantages"])
                surr = ad.minimum(
                    ad.mul(ratio, adv_t),
                    ad.mul(ad.clip(ratio, 1.0 - eps, 1.0 + eps), adv_t),
                )
                policy_loss = ad.neg(ad.mean(surr))
                v = actor.value(inp)
                value_loss = ad.mean(ad.square(ad.sub(v, ad.Tensor(mb["returns"][:, None]))))
                entropy = actor.policy.entropy()
                loss = ad.sub(
                    ad.add(policy_loss, ad.scale(value_loss, config.value_coeff)),
                    ad.scale(entropy, config.entropy_coeff),
                )
                aux_val = 0.0
                aux = actor.aux_loss(mb)
                if aux is not None:
                    loss = ad.add(loss, aux)
                    aux_val = float(aux.data)
                if not np.isfinite(loss.data):
                    raise FloatingPointError(
                        f"NaN/Inf PPO loss (policy={policy_loss.data}, value={value_loss.data}, "
                        f"aux={aux_val}, minibatch size={len(idx)})"
                    )
                optimizer.zero_grad()
                ad.backward(tape, loss)
            ad.clip_grad_norm(optimizer.params, config.max_grad_norm)
            optimizer.step()
            actor.policy.clamp_log_std()

            totals["policy_loss"] += float(policy_loss.data)
            totals["value_loss"] += float(value_loss.data)
            totals["entropy"] += float(entropy.data)
            totals["aux_loss"] += aux_val
            clipped = (ratio.data < 1.0 - eps) | (ratio.data > 1.0 + eps)
            totals["clip_fraction"] += float(clipped.mean())
            nb += 1

    metrics = {k: v / max(nb, 1) for k, v in totals.items()}
    metrics["mean_return"] = float(np.mean([s["return"] for s in buffer.episode_stats])) \
        if buffer.episode_stats else float("nan")
    metrics["success_rate_rollout"] = float(np.mean([s["success"] for s in buffer.episode_stats])) \
        if buffer.episode_stats else float("nan")
    return metrics


def evaluate_policy(env_factory, act_fn, episodes, seed_base, max_steps=None):
    """Run full episodes with act_fn(env, obs, t) -> action vector."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    results = []
    for ep in range(episodes):
        env = env_factory()
        obs = env.reset(seed_base + ep)
        done = False
        t = 0
        total = 0.0
        success = False
        while not done and (max_steps is None or t < max_steps):
            action = act_fn(env, obs, t)
            obs, r, done, info = env.step(action)
            total += r
            t += 1
            success = bool(info.get("success", success))
        results.append({"seed": seed_base + ep, "success": success,
                        "steps": t, "return": total})
    return {
        "success_rate": float(np.mean([r["success"] for r in results])),
        "mean_return": float(np.mean([r["return"] for r in results])),
        "mean_episode_length": float(np.mean([r["steps"] for r in results])),
        "episodes": results,
    }


def format_trials(successes, total):
    """Table-style cell: '17 (85%)'."""
    pct = successes / total * 100.0
    pct_str = f"{pct:.0f}%" if abs(pct - round(pct)) < 1e-9 else f"{pct:.1f}%"
    return f"{successes} ({pct_str})"
