"""Run configuration: a flat dotted-key text file with documented defaults.

Every run artifact embeds the sha256 hash of the resolved (defaults applied,
canonically sorted) config, so artifacts from different configs can never be
mixed up silently.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .kvio import emit_kv, parse_kv_file, parse_kv_text
from .ppo import PPOConfig
from .rma import NetWidths
from .tasks import RandomizationRanges, TaskSpec


class ConfigError(ValueError):
    pass


def _fmt_float(x):
    # repr() keeps round-trip precision while staying human-readable
    return repr(float(x))


def _parse_bool(s):
    if s in ("true", "false"):
        return s == "true"
    raise ValueError(f"expected true/false, got {s!r}")


_TYPES = {
    "str": (str, str),
    "int": (int, str),
    "float": (float, _fmt_float),
    "bool": (_parse_bool, lambda b: "true" if b else "false"),
    "int_list": (
        lambda s: tuple(int(t) for t in s.split(",") if t.strip() != ""),
        lambda v: ",".join(str(i) for i in v),
    ),
    "float_pair": (
        lambda s: tuple(float(t) for t in s.split(",")),
        lambda v: ",".join(_fmt_float(x) for x in v),
    ),
    "int_pair": (
        lambda s: tuple(int(t) for t in s.split(",")),
        lambda v: ",".join(str(i) for i in v),
    ),
}

# key -> (type tag, default value). This table *is* the config schema; the
# README documents it verbatim.
SCHEMA = {
    "task.kind": ("str", "insert"),
    "task.scene": ("str", ""),  # empty = builtin scene named after task.kind
    "task.coverage_threshold": ("float", 0.9),
    "task.success_hold_steps": ("int", 5),
    "task.horizon": ("int", 200),
    "task.shaping_coeff": ("float", 0.01),
    "variant": ("str", "full"),
    "seeds": ("int_list", (0, 1, 2)),
    "out_dir": ("str", "runs"),
    "physics.substeps": ("int", 40),
    "ppo.gamma": ("float", 0.99),
    "ppo.lambda_gae": ("float", 0.95),
    "ppo.clip_epsilon": ("float", 0.2),
    "ppo.epochs_per_update": ("int", 4),
    "ppo.minibatch_size": ("int", 512),
    "ppo.entropy_coeff": ("float", 0.01),
    "ppo.value_coeff": ("float", 0.5),
    "ppo.rollout_length": ("int", 256),
    "ppo.num_envs": ("int", 8),
    "ppo.max_grad_norm": ("float", 0.5),
    "ppo.learning_rate": ("float", 3e-4),
    "ranges.stretch_stiffness": ("float_pair", (1.0, 500.0)),
    "ranges.bend_stiffness": ("float_pair", (0.01, 50.0)),
    "ranges.damping": ("float_pair", (0.05, 0.5)),
    "ranges.particle_mass": ("float_pair", (0.02, 0.2)),
    "ranges.chain_cols": ("int_pair", (8, 24)),
    "ranges.grid_rows": ("int_pair", (1, 2)),
    "ranges.grid_cols": ("int_pair", (8, 16)),
    "nets.policy_hidden": ("int_list", (64, 64)),
    "nets.encoder_hidden": ("int_list", (64, 64)),
    "nets.adapter_hidden": ("int_list", (128, 64)),
    "budget.phase1_updates": ("int", 3000),
    "budget.phase2_updates": ("int", 1500),
    "budget.eval_every": ("int", 25),
    "budget.eval_episodes": ("int", 20),
}


@dataclass
class RunConfig:
    """Resolved configuration: every schema key has a typed value."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    # ---- canonical form ----------------------------------------------

    def emit(self):
        """Canonical text form: sorted keys, normalized value formatting."""
        out = {}
        for key, value in self.values.items():
            _, fmt = _TYPES[SCHEMA[key][0]]
            out[key] = fmt(value)
        return emit_kv(out)

    def content_hash(self):
        return hashlib.sha256(self.emit().encode("utf-8")).hexdigest()

    # ---- typed views --------------------------------------------------

    def task_spec(self):
        return TaskSpec(
            kind=self.values["task.kind"],
            scene=self.values["task.scene"],
            coverage_threshold=self.values["task.coverage_threshold"],
            success_hold_steps=self.values["task.success_hold_steps"],
            horizon=self.values["task.horizon"],
            shaping_coeff=self.values["task.shaping_coeff"],
        )

    def ranges(self):
        return RandomizationRanges(
            stretch_stiffness=self.values["ranges.stretch_stiffness"],
            bend_stiffness=self.values["ranges.bend_stiffness"],
            damping=self.values["ranges.damping"],
            particle_mass=self.values["ranges.particle_mass"],
            chain_cols=self.values["ranges.chain_cols"],
            grid_rows=self.values["ranges.grid_rows"],
            grid_cols=self.values["ranges.grid_cols"],
        )

    def ppo_config(self):
        return PPOConfig(
            gamma=self.values["ppo.gamma"],
            lambda_gae=self.values["ppo.lambda_gae"],
            clip_epsilon=self.values["ppo.clip_epsilon"],
            epochs_per_update=self.values["ppo.epochs_per_update"],
            minibatch_size=self.values["ppo.minibatch_size"],
            entropy_coeff=self.values["ppo.entropy_coeff"],
            value_coeff=self.values["ppo.value_coeff"],
            rollout_length=self.values["ppo.rollout_length"],
            num_envs=self.values["ppo.num_envs"],
            max_grad_norm=self.values["ppo.max_grad_norm"],
            learning_rate=self.values["ppo.learning_rate"],
        )

    def net_widths(self):
        return NetWidths(
            policy_hidden=self.values["nets.policy_hidden"],
            encoder_hidden=self.values["nets.encoder_hidden"],
            adapter_hidden=self.values["nets.adapter_hidden"],
        )


def resolve_config(raw, path="<config>"):
    """Apply defaults and type the raw key->string mapping.

    Unknown keys are errors (typo protection); missing keys take schema
    defaults.
    """
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"{path}: unknown config key(s): {', '.join(unknown)}")
    values = {}
    for key, (type_tag, default) in SCHEMA.items():
        parse, _ = _TYPES[type_tag]
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{path}: key {key}: {exc}") from exc
        else:
            values[key] = default
    _validate(values, path)
    return RunConfig(values)


def _validate(values, path):
    if values["task.kind"] not in ("insert", "cover"):
        raise ConfigError(f"{path}: task.kind must be insert or cover")
    if not values["seeds"]:
        raise ConfigError(f"{path}: seeds must be non-empty")
    for key in ("budget.phase1_updates", "budget.phase2_updates"):
        if values[key] < 1:
            raise ConfigError(f"{path}: {key} must be >= 1")
    for key in ("ranges.stretch_stiffness", "ranges.bend_stiffness",
                "ranges.damping", "ranges.particle_mass", "ranges.chain_cols",
                "ranges.grid_rows", "ranges.grid_cols"):
        lo, hi = values[key]
        if not lo <= hi:
            raise ConfigError(f"{path}: {key}: range [{lo}, {hi}] is empty")


def load_config(path):
    return resolve_config(parse_kv_file(path), path=str(path))


def config_from_text(text, path="<string>"):
    return resolve_config(parse_kv_text(text, path=path), path=path)


def default_config():
    return resolve_config({})
