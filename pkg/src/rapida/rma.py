"""Two-phase rapid adaptation for deformable manipulation.

Phase 1 trains the policy end-to-end with privileged shape/dynamics encoders.
Phase 2 distills the encoders into history-driven adaptation modules with L1
losses and gradient stops, while fine-tuning the policy. Deployment runs the
adapters on a 10-step observation-action buffer, refreshed every 5 steps,
with privileged access hard-disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import observe as obs_mod
from . import tasks as tasks_mod
from .autodiff import MLP, Tape, no_grad, stop_gradient
from .observe import ACTION_DIM, HISTORY_DIM, OBS_DIM
from .physics import PhysicsParams, stable_substeps
from .ppo import (
    EnvRunner,
    GaussianPolicyHead,
    PPOConfig,
    ValueHead,
    collect_rollouts,
    evaluate_policy,
    ppo_update,
)
from .tasks import PRIV_FEAT_DIM, PRIV_HIST_DIM, DeformableEnv, RandomizationRanges

EMBED_DIM = 8
POLICY_IN = OBS_DIM + EMBED_DIM          # 77
SHAPE_ENC_IN = PRIV_HIST_DIM             # 190
DYN_ENC_IN = PRIV_FEAT_DIM + EMBED_DIM   # 27
DYN_ENC_IN_NO_SHAPE = PRIV_FEAT_DIM      # 19
ADAPTER_IN = HISTORY_DIM                 # 720
DYN_ADAPTER_IN = HISTORY_DIM + EMBED_DIM  # 728

VARIANTS = ("full", "no_adapt", "no_shape", "e2e")

REFRESH_PERIOD = 5
GRAD_STOP_CHECK_EVERY = 50

TRAIN_SEED_LIMIT = 1_000_000
EVAL_SEED_BASE = 1_000_000


@dataclass
class NetWidths:
    policy_hidden: tuple = (64, 64)
    encoder_hidden: tuple = (64, 64)
    adapter_hidden: tuple = (128, 64)


@dataclass
class VariantPlan:
    name: str
    has_phase1: bool
    has_phase2: bool
    adapter_has_shape: bool
    encoder_has_shape: bool
    e2e: bool


def build_variant(name):
    """Resolve an ablation variant name to its pipeline structure."""
    if name == "full":
        return VariantPlan("full", True, True, True, True, False)
    if name == "no_adapt":
        return VariantPlan("no_adapt", True, False, False, True, False)
    if name == "no_shape":
        return VariantPlan("no_shape", True, True, False, False, False)
    if name == "e2e":
        return VariantPlan("e2e", False, False, True, False, True)
    raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")


class Networks:
    """All networks for one variant/phase, addressable by name for
    checkpointing."""

    def __init__(self, variant, phase, rng, widths=None):
        w = widths or NetWidths()
        plan = build_variant(variant)
        self.variant = variant
        self.phase = phase
        self.widths = w
        self.policy = GaussianPolicyHead([POLICY_IN, *w.policy_hidden, ACTION_DIM], rng)
        self.value = ValueHead([POLICY_IN, *w.policy_hidden, 1], rng)
        self.mu_s = None
        self.mu_d = None
        self.phi_s = None
        self.phi_d = None
        if plan.has_phase1:
            if plan.encoder_has_shape:
                self.mu_s = MLP([SHAPE_ENC_IN, *w.encoder_hidden, EMBED_DIM], rng, name="mu_s")
                self.mu_d = MLP([DYN_ENC_IN, *w.encoder_hidden, EMBED_DIM], rng, name="mu_d")
            else:
                self.mu_d = MLP([DYN_ENC_IN_NO_SHAPE, *w.encoder_hidden, EMBED_DIM], rng, name="mu_d")
        if phase == 2 or plan.e2e:
            self._init_adapters(rng)

    def _init_adapters(self, rng):
        w = self.widths
        plan = build_variant(self.variant)
        if plan.adapter_has_shape:
            self.phi_s = MLP([ADAPTER_IN, *w.adapter_hidden, EMBED_DIM], rng, name="phi_s")
            self.phi_d = MLP([DYN_ADAPTER_IN, *w.adapter_hidden, EMBED_DIM], rng, name="phi_d")
        elif plan.has_phase2:
            self.phi_d = MLP([ADAPTER_IN, *w.adapter_hidden, EMBED_DIM], rng, name="phi_d")

    def modules(self, include_encoders=True):
        out = {"policy.mean": self.policy.mean_net, "value": self.value.net}
        if include_encoders:
            if self.mu_s is not None:
                out["mu_s"] = self.mu_s
            if self.mu_d is not None:
                out["mu_d"] = self.mu_d
        if self.phi_s is not None:
            out["phi_s"] = self.phi_s
        if self.phi_d is not None:
            out["phi_d"] = self.phi_d
        return out

    def params_dict(self, include_encoders=True):
        out = {}
        for mod in self.modules(include_encoders).values():
            for name, p in mod.parameters():
                out[name] = p.data
        out["policy.log_std"] = self.policy.log_std.data
        return out

    def load_params(self, arrays):
        for name, p in self.named_parameters():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: checkpoint shape {arrays[name].shape} "
                    f"!= expected {p.data.shape}"
                )
            p.data[...] = arrays[name]

    def named_parameters(self):
        out = []
        for mod in self.modules().values():
            out.extend(mod.parameters())
        out.append(("policy.log_std", self.policy.log_std))
        return out

    def snapshot(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def restore(self, snap):
        for name, p in self.named_parameters():
            p.data[...] = snap[name]


# ---------------------------------------------------------------------------
# actors (policy-input providers for PPO)


class _BaseActor:
    action_dim = ACTION_DIM

    def __init__(self, nets):
        self.nets = nets
        self.policy = nets.policy
        self.value = nets.value

    def aux_loss(self, mb):
        return None

    def aux_metrics(self):
        return {}


class Phase1Actor(_BaseActor):
    """Privileged path: z_d = mu_d(priv [, z_s]); PPO gradients reach the
    encoders (end-to-end)."""

    def record(self, env):
        return {
            "obs": env._last_obs.vector(),
            "priv": env.priv_features(),
            "priv_hist": env.priv_history(),
        }

    def embeddings(self, mb):
        if self.nets.mu_s is not None:
            z_s = self.nets.mu_s(mb["priv_hist"])
            z_d = self.nets.mu_d(ad.concat([ad.Tensor(mb["priv"]), z_s], axis=-1))
        else:
            z_s = None
            z_d = self.nets.mu_d(mb["priv"])
        return z_s, z_d

    def policy_input(self, mb):
        _, z_d = self.embeddings(mb)
        return ad.concat([ad.Tensor(mb["obs"]), z_d], axis=-1)

    def trainable(self):
        mods = [self.nets.policy.mean_net, self.nets.value.net, self.nets.mu_d]
        if self.nets.mu_s is not None:
            mods.append(self.nets.mu_s)
        params = []
        for m in mods:
            params.extend(m.parameters())
        params.append(("policy.log_std", self.nets.policy.log_std))
        return params


class Phase2Actor(_BaseActor):
    """Distillation path: adapters infer the embeddings from the
    observation-action history; RL gradients are stopped at the adapters and
    the L_d loss is stopped at phi_s. Frozen encoders provide the targets."""

    l1_weight_shape = 1.0
    l1_weight_dyn = 1.0

    def __init__(self, nets):
        super().__init__(nets)
        self._last_l1 = (float("nan"), float("nan"))

    def record(self, env):
        return {
            "obs": env._last_obs.vector(),
            "hist": env.history.flatten(),
            "priv": env.priv_features(),
            "priv_hist": env.priv_history(),
        }

    def adapter_embeddings(self, mb):
        hist = ad.Tensor(mb["hist"])
        if self.nets.phi_s is not None:
            zhat_s = self.nets.phi_s(hist)
            zhat_d = self.nets.phi_d(ad.concat([hist, stop_gradient(zhat_s)], axis=-1))
        else:
            zhat_s = None
            zhat_d = self.nets.phi_d(hist)
        return zhat_s, zhat_d

    def policy_input(self, mb):
        _, zhat_d = self.adapter_embeddings(mb)
        return ad.concat([ad.Tensor(mb["obs"]), stop_gradient(zhat_d)], axis=-1)

    def encoder_targets(self, mb):
        """Frozen phase-1 encoder outputs, as constants."""
        with no_grad():
            if self.nets.mu_s is not None:
                z_s = self.nets.mu_s(mb["priv_hist"])
                z_d = self.nets.mu_d(ad.concat([ad.Tensor(mb["priv"]), z_s], axis=-1))
                return z_s.data, z_d.data
            z_d = self.nets.mu_d(mb["priv"])
            return None, z_d.data

    def aux_loss(self, mb):
        target_s, target_d = self.encoder_targets(mb)
        zhat_s, zhat_d = self.adapter_embeddings(mb)
        loss_d = ad.l1_loss(zhat_d, target_d)
        if zhat_s is not None:
            loss_s = ad.l1_loss(zhat_s, target_s)
            self._last_l1 = (float(loss_s.data), float(loss_d.data))
            return ad.add(ad.scale(loss_s, self.l1_weight_shape),
                          ad.scale(loss_d, self.l1_weight_dyn))
        self._last_l1 = (float("nan"), float(loss_d.data))
        return ad.scale(loss_d, self.l1_weight_dyn)

    def aux_metrics(self):
        return {"l1_shape": self._last_l1[0], "l1_dynamics": self._last_l1[1]}

    def trainable(self):
        mods = [self.nets.policy.mean_net, self.nets.value.net, self.nets.phi_d]
        if self.nets.phi_s is not None:
            mods.append(self.nets.phi_s)
        params = []
        for m in mods:
            params.extend(m.parameters())
        params.append(("policy.log_std", self.nets.policy.log_std))
        return params


class GradientStopViolation(AssertionError):
    pass


class E2EActor(_BaseActor):
    """Single-phase RL through the adapters: no encoders, no L1 losses, no
    gradient stops."""

    def record(self, env):
        return {
            "obs": env._last_obs.vector(),
            "hist": env.history.flatten(),
        }

    def policy_input(self, mb):
        hist = ad.Tensor(mb["hist"])
        zhat_s = self.nets.phi_s(hist)
        zhat_d = self.nets.phi_d(ad.concat([hist, zhat_s], axis=-1))
        return ad.concat([ad.Tensor(mb["obs"]), zhat_d], axis=-1)

    def trainable(self):
        params = []
        for m in (self.nets.policy.mean_net, self.nets.value.net,
                  self.nets.phi_s, self.nets.phi_d):
            params.extend(m.parameters())
        params.append(("policy.log_std", self.nets.policy.log_std))
        return params


# ---------------------------------------------------------------------------
# training


def train_seed_fn(base_seed):
    """Deterministic per-(env, episode) training seed stream, always < 10^6."""
    def fn(env_idx, episode):
        return (base_seed * 1000003 + env_idx * 10007 + episode * 101) % TRAIN_SEED_LIMIT
    return fn


def make_actor(nets):
    plan = build_variant(nets.variant)
    if plan.e2e:
        return E2EActor(nets)
    if nets.phase == 2:
        return Phase2Actor(nets)
    return Phase1Actor(nets)


def actor_act_fn(actor):
    """Deterministic action callback for training-time evaluation."""
    def act(env, obs, t):
        rec = actor.record(env)
        batch = {k: v[None, :] for k, v in rec.items()}
        with no_grad():
            inp = actor.policy_input(batch)
            mean = actor.policy.mean(inp).data[0]
        return mean
    return act


def _grads_all_zero(module):
    for _, p in module.parameters():
        if p.grad is not None and np.any(p.grad != 0.0):
            return False
    return True


def gradient_stop_check(actor, mb, config):
    """Assert the two Phase-II gradient stops on a real minibatch.

    1. RL gradients must not reach either adaptation module.
    2. The dynamics L1 loss must not reach the shape adaptation module.
    """
    nets = actor.nets
    if nets.phi_d is None:
        return

    def zero_all():
        for _, p in nets.named_parameters():
            p.grad = None

    # RL-only loss
    zero_all()
    with Tape() as tape:
        inp = actor.policy_input(mb)
        mean = actor.policy.mean(inp)
        logp = ad.gaussian_log_prob(mb["actions"], mean, actor.policy.log_std)
        ratio = ad.exp(ad.sub(logp, ad.Tensor(mb["log_probs"])))
        adv_t = ad.Tensor(mb["advantages"])
        eps = config.clip_epsilon
        surr = ad.minimum(ad.mul(ratio, adv_t),
                          ad.mul(ad.clip(ratio, 1.0 - eps, 1.0 + eps), adv_t))
        v = actor.value(inp)
        rl_loss = ad.add(ad.neg(ad.mean(surr)),
                         ad.mean(ad.square(ad.sub(v, ad.Tensor(mb["returns"][:, None])))))
        ad.backward(tape, rl_loss)
    for name, module in (("phi_s", nets.phi_s), ("phi_d", nets.phi_d)):
        if module is not None and not _grads_all_zero(module):
            raise GradientStopViolation(f"RL gradient leaked into {name}")

    # dynamics-L1-only loss
    if isinstance(actor, Phase2Actor) and nets.phi_s is not None:
        zero_all()
        target_s, target_d = actor.encoder_targets(mb)
        with Tape() as tape:
            _, zhat_d = actor.adapter_embeddings(mb)
            loss_d = ad.l1_loss(zhat_d, target_d)
            ad.backward(tape, loss_d)
        if not _grads_all_zero(nets.phi_s):
            raise GradientStopViolation("dynamics L1 gradient leaked into phi_s")
    zero_all()


def _training_loop(nets, actor, task, ranges, ppo_cfg, seed, updates,
                   eval_every, eval_episodes, metrics_cb=None, substeps=None,
                   grad_stop_checks=False):
    rng = np.random.Generator(np.random.PCG64(seed))
    envs = [DeformableEnv(task, ranges, mode="train", substeps=substeps)
            for _ in range(ppo_cfg.num_envs)]
    runner = EnvRunner(envs, train_seed_fn(seed))
    runner.reset_all()
    optimizer = ad.Adam(actor.trainable(), lr=ppo_cfg.learning_rate)

    rows = []
    best = {"success": -1.0, "snapshot": None, "update": -1}
    eval_seed = (seed * 7919) % 90_000 + 900_000  # training-range seeds, held apart
    for update in range(updates):
        buffer = collect_rollouts(runner, actor, ppo_cfg, rng)
        metrics = ppo_update(buffer, actor, optimizer, ppo_cfg, rng)
        metrics.update(actor.aux_metrics())
        metrics["update"] = update
        if grad_stop_checks and update % GRAD_STOP_CHECK_EVERY == 0:
            flat = buffer.flat()
            mb = {k: v[:64] for k, v in flat.items()}
            gradient_stop_check(actor, mb, ppo_cfg)

        if eval_every and (update + 1) % eval_every == 0:
            report = evaluate_policy(
                lambda: DeformableEnv(task, ranges, mode="train", substeps=substeps),
                actor_act_fn(actor), eval_episodes, eval_seed)
            metrics["success_rate_eval"] = report["success_rate"]
            if report["success_rate"] >= best["success"]:
                best = {"success": report["success_rate"],
                        "snapshot": nets.snapshot(), "update": update}
        else:
            metrics["success_rate_eval"] = float("nan")
        rows.append(metrics)
        if metrics_cb:
            metrics_cb(metrics)
    if best["snapshot"] is None:
        best = {"success": float("nan"), "snapshot": nets.snapshot(), "update": updates - 1}
    return rows, best, optimizer


def train_phase1(task, ranges, ppo_cfg, seed, updates, variant="full", widths=None,
                 eval_every=25, eval_episodes=20, metrics_cb=None, substeps=None):
    """Phase I: policy + encoders end-to-end on the privileged path."""
    plan = build_variant(variant)
    if not plan.has_phase1:
        raise ValueError(f"variant {variant!r} has no privileged phase")
    rng = np.random.Generator(np.random.PCG64(seed))
    nets = Networks(variant, 1, rng, widths)
    actor = Phase1Actor(nets)
    rows, best, optimizer = _training_loop(
        nets, actor, task, ranges, ppo_cfg, seed, updates,
        eval_every, eval_episodes, metrics_cb, substeps)
    return nets, rows, best, optimizer


def train_phase2(nets1, task, ranges, ppo_cfg, seed, updates, widths=None,
                 eval_every=25, eval_episodes=20, metrics_cb=None, substeps=None,
                 reinit_value_head=False):
    """Phase II: L1-distill the adapters while fine-tuning the policy."""
    if nets1.mu_d is None:
        raise ValueError("phase 2 requires a phase-1 checkpoint with trained encoders")
    plan = build_variant(nets1.variant)
    if not plan.has_phase2:
        raise ValueError(f"variant {nets1.variant!r} has no adaptation phase")
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    nets = Networks(nets1.variant, 2, rng, widths or nets1.widths)
    # carry over phase-1 policy, value head, and frozen encoders
    carried = nets1.snapshot()
    for name, p in nets.named_parameters():
        if name in carried:
            if reinit_value_head and name.startswith("value."):
                continue
            p.data[...] = carried[name]
    actor = Phase2Actor(nets)
    rows, best, optimizer = _training_loop(
        nets, actor, task, ranges, ppo_cfg, seed, updates,
        eval_every, eval_episodes, metrics_cb, substeps, grad_stop_checks=True)
    return nets, rows, best, optimizer


def train_e2e(task, ranges, ppo_cfg, seed, updates, widths=None,
              eval_every=25, eval_episodes=20, metrics_cb=None, substeps=None):
    """Single-phase end-to-end RL through the adapters (no L1, no encoders)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    nets = Networks("e2e", 1, rng, widths)
    actor = E2EActor(nets)
    rows, best, optimizer = _training_loop(
        nets, actor, task, ranges, ppo_cfg, seed, updates,
        eval_every, eval_episodes, metrics_cb, substeps)
    return nets, rows, best, optimizer


# ---------------------------------------------------------------------------
# deployment


@dataclass
class Trajectory:
    observations: list
    actions: list
    shape_embeddings: list
    dynamics_embeddings: list
    success: bool
    steps: int


def adapter_forward_np(nets, hist_vec):
    """Non-privileged embedding inference from a flattened history window."""
    with no_grad():
        hist = ad.Tensor(hist_vec[None, :])
        if nets.phi_s is not None:
            zhat_s = nets.phi_s(hist)
            zhat_d = nets.phi_d(ad.concat([hist, zhat_s], axis=-1))
            return zhat_s.data[0].copy(), zhat_d.data[0].copy()
        zhat_d = nets.phi_d(hist)
        return np.zeros(EMBED_DIM), zhat_d.data[0].copy()


def policy_act(nets, obs_vec, z_d, deterministic=True, rng=None):
    """(action, log_prob, value) for a single observation + embedding."""
    with no_grad():
        inp = ad.Tensor(np.concatenate([obs_vec, z_d])[None, :])
        mean = nets.policy.mean(inp).data[0]
        value = float(nets.value(inp).data[0, 0])
    if deterministic:
        action = mean
    else:
        std = np.exp(nets.policy.log_std.data)
        action = mean + std * rng.standard_normal(mean.shape)
    log_prob = float(nets.policy.log_prob_np(action[None, :], mean[None, :])[0])
    return action, log_prob, value


def deploy(nets, env, max_steps, refresh_every=REFRESH_PERIOD, seed=None,
           deterministic=True, rng=None):
    """Test-time loop: observe, push history, refresh embeddings every
    refresh_every steps, act (deterministically by default). No privileged
    access."""
    if env.mode != "deploy":
        raise ValueError("deploy() requires an env in deploy mode (sim-to-real firewall)")
    if not deterministic and rng is None:
        raise ValueError("sampled deployment needs an rng")
    plan = build_variant(nets.variant)
    use_adapters = nets.phi_d is not None and (plan.has_phase2 or plan.e2e)

    obs = env.reset(seed) if seed is not None else env._last_obs
    zhat_s = np.zeros(EMBED_DIM)
    zhat_d = np.zeros(EMBED_DIM)
    traj = Trajectory([], [], [], [], False, 0)
    for t in range(max_steps):
        if use_adapters and t % refresh_every == 0:
            zhat_s, zhat_d = adapter_forward_np(nets, env.history.flatten())
        obs_vec = obs.vector()
        action, _, _ = policy_act(nets, obs_vec, zhat_d,
                                  deterministic=deterministic, rng=rng)
        obs, r, done, info = env.step(action)
        traj.observations.append(obs_vec)
        traj.actions.append(action.copy())
        traj.shape_embeddings.append(zhat_s.copy())
        traj.dynamics_embeddings.append(zhat_d.copy())
        traj.steps = t + 1
        if info.get("success"):
            traj.success = True
        if done:
            break
    return traj


# ---------------------------------------------------------------------------
# analysis


def distillation_report(nets, task, ranges, episodes=8, seed_base=950_000,
                        substeps=None, action_rng_seed=0):
    """Held-out adapter-vs-encoder error: per-dimension MAE of the inferred
    dynamics embedding against the frozen encoder's, compared to the
    encoder embedding's per-dimension std over the same set."""
    env = DeformableEnv(task, ranges, mode="train", substeps=substeps)
    actor = Phase2Actor(nets)
    rng = np.random.Generator(np.random.PCG64(action_rng_seed))
    zhat_all, z_all = [], []
    for ep in range(episodes):
        env.reset(seed_base + ep)
        done = False
        while not done:
            rec = actor.record(env)
            mb = {k: v[None, :] for k, v in rec.items()}
            with no_grad():
                _, zhat_d = actor.adapter_embeddings(mb)
                _, z_d_target = actor.encoder_targets(mb)
                inp = actor.policy_input(mb)
                mean = actor.policy.mean(inp).data[0]
            zhat_all.append(zhat_d.data[0].copy())
            z_all.append(z_d_target[0].copy())
            std = np.exp(nets.policy.log_std.data)
            action = mean + std * rng.standard_normal(mean.shape)
            _, _, done, _ = env.step(action)
    zhat_all = np.asarray(zhat_all)
    z_all = np.asarray(z_all)
    mae = np.abs(zhat_all - z_all).mean(axis=0)
    std = z_all.std(axis=0)
    return {"mae": mae, "target_std": std,
            "ratio": mae / np.maximum(std, 1e-12),
            "mean_mae": float(mae.mean()), "mean_std": float(std.mean())}


def pearson_r(x, y):
    """Pearson correlation with a degenerate-variance flag."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sx, sy = x.std(), y.std()
    if sx < 1e-12 or sy < 1e-12:
        return 0.0, True
    r = float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))
    return r, False


def probe_param_grid(n_points, stiffness_range=(1.0, 500.0)):
    """Log-spaced stiffness grid mapped to full PhysicsParams."""
    lo, hi = stiffness_range
    stiff = np.exp(np.linspace(math.log(lo), math.log(hi), n_points))
    grid = []
    for s in stiff:
        bend = float(min(max(s / 10.0, 0.01), 50.0))
        grid.append(PhysicsParams(
            stretch_stiffness=float(s), shear_stiffness=float(s),
            bend_stiffness=bend, damping_coeff=0.2, particle_mass=0.05,
            substeps=stable_substeps(float(s), float(s), bend, 0.05)))
    return grid


def embedding_probe(nets, task, param_grid, probe_steps=12, substeps=None):
    """Run a fixed scripted grasp-and-lift on each parameter setting and
    correlate the inferred dynamics embedding (after the second refresh)
    against log stretch stiffness."""
    from dataclasses import replace as _replace

    if task.horizon < probe_steps:
        task = _replace(task, horizon=probe_steps)
    rows = []
    for params in param_grid:
        if substeps is not None and substeps > params.substeps:
            params = _replace(params, substeps=substeps)
        env = DeformableEnv(task, RandomizationRanges(), mode="deploy")
        origin = np.array([-0.35, 0.01])
        env_overrides = {
            "params": params,
            "topology": {"rows": 1, "cols": 12, "spacing": env.scene.object_spacing},
            "origin": origin,
            "gripper": origin + np.array([0.0, 0.05]),
        }
        env.overrides = env_overrides
        env.reset(seed=0)
        zhat_d = np.zeros(EMBED_DIM)
        recorded = None
        for t in range(probe_steps):
            if nets.phi_d is not None and t % REFRESH_PERIOD == 0:
                _, zhat_d = adapter_forward_np(nets, env.history.flatten())
                if t == REFRESH_PERIOD:
                    recorded = zhat_d.copy()
            if t == 0:
                action = np.array([0.0, 0.0, 1.0])        # close and grasp
            elif t <= 6:
                action = np.array([0.05, 0.35, 1.0])      # lift
            else:
                action = np.array([0.25, 0.0, 1.0])       # carry sideways
            _, _, done, _ = env.step(action)
            if done:
                break
        if recorded is None:
            recorded = zhat_d.copy()
        rows.append({"stretch_stiffness": params.stretch_stiffness,
                     "embedding": recorded})

    log_stiff = np.log([r["stretch_stiffness"] for r in rows])
    z = np.asarray([r["embedding"] for r in rows])
    correlations = np.zeros(EMBED_DIM)
    degenerate = [False] * EMBED_DIM
    for d in range(EMBED_DIM):
        correlations[d], degenerate[d] = pearson_r(z[:, d], log_stiff)
    best_dim = int(np.argmax(np.abs(correlations)))
    return {
        "rows": rows,
        "log_stiffness": log_stiff,
        "embeddings": z,
        "correlations": correlations,
        "degenerate": degenerate,
        "best_dim": best_dim,
        "best_abs_r": float(np.abs(correlations[best_dim])),
    }
