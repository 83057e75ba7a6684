"""Command-line entry points: train, eval, ablate, probe, plot.

Artifacts per run directory: manifest.txt (key = value), config.txt (canonical
resolved config), metrics.csv, results.csv, checkpoints (*.rapd), SVG plots.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import rma
from .checkpoint import (CheckpointError, generator_state, load_checkpoint,
                         save_checkpoint)
from .config import ConfigError, load_config
from .kvio import emit_kv
from .plots import line_chart, scatter_chart
from .ppo import format_trials
from .rma import EVAL_SEED_BASE, TRAIN_SEED_LIMIT, build_variant
from .tasks import DeformableEnv

METRICS_HEADER = ["update_index", "policy_loss", "value_loss", "entropy",
                  "clip_fraction", "mean_return", "success_rate_rollout",
                  "success_rate_eval"]
RESULTS_HEADER = ["seed", "variant", "kind", "success", "steps", "return",
                  "final_coverage"]


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# shared plumbing


def resolve_seed(flag_seed, cfg):
    """Documented precedence: flag > RAPIDA_SEED env > config seeds[0]."""
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get("RAPIDA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"RAPIDA_SEED is not an integer: {env!r}")
    return cfg["seeds"][0]


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as f:
        f.write(emit_kv({k: str(v) for k, v in entries.items()}))


def read_manifest(path):
    from .kvio import parse_kv_file
    return parse_kv_file(path)


class MetricsWriter:
    def __init__(self, path):
        self.f = open(path, "w", newline="", encoding="utf-8")
        self.w = csv.writer(self.f)
        self.w.writerow(METRICS_HEADER)
        self.rows = 0

    def __call__(self, m):
        self.w.writerow([
            m["update"], f"{m['policy_loss']:.10g}", f"{m['value_loss']:.10g}",
            f"{m['entropy']:.10g}", f"{m['clip_fraction']:.10g}",
            f"{m['mean_return']:.10g}", f"{m['success_rate_rollout']:.10g}",
            f"{m['success_rate_eval']:.10g}",
        ])
        self.f.flush()
        self.rows += 1

    def close(self):
        self.f.close()


def save_nets(path, nets, cfg, optimizer=None, rng=None, include_encoders=None):
    """Phase-2 checkpoints drop the frozen encoders (deployment never uses
    them)."""
    if include_encoders is None:
        include_encoders = nets.phase != 2
    params = nets.params_dict(include_encoders=include_encoders)
    save_checkpoint(
        path, params,
        config_hash=cfg.content_hash(),
        variant=nets.variant,
        phase=nets.phase,
        optimizer_state=optimizer.state_arrays() if optimizer else None,
        rng_state=generator_state(rng) if rng is not None else None,
        extra_meta={"config_text": cfg.emit()},
    )


def save_snapshot(path, nets, snapshot, cfg, include_encoders=None):
    if include_encoders is None:
        include_encoders = nets.phase != 2
    allowed = set(nets.params_dict(include_encoders=include_encoders))
    params = {k: v for k, v in snapshot.items() if k in allowed}
    save_checkpoint(
        path, params,
        config_hash=cfg.content_hash(),
        variant=nets.variant,
        phase=nets.phase,
        extra_meta={"config_text": cfg.emit()},
    )


def config_from_checkpoint(ck, override_path=None):
    from .config import config_from_text
    if override_path:
        return load_config(override_path)
    text = ck.get("config_text")
    if not text:
        raise CliError("checkpoint has no embedded config; pass --config")
    return config_from_text(text, path="<checkpoint config>")


def nets_from_checkpoint(ck, cfg):
    nets = rma.Networks(ck["variant"], ck["phase"],
                        rng=np.random.Generator(np.random.PCG64(0)),
                        widths=cfg.net_widths())
    have = set(ck["params"])
    # phase-2 checkpoints drop the encoders; forget them before loading
    if nets.mu_s is not None and not any(k.startswith("mu_s.") for k in have):
        nets.mu_s = None
    if nets.mu_d is not None and not any(k.startswith("mu_d.") for k in have):
        nets.mu_d = None
    nets.load_params(ck["params"])
    return nets


# ---------------------------------------------------------------------------
# train


def cmd_train(args):
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg)
    variant = cfg["variant"]
    plan = build_variant(variant)
    phase = args.phase

    if phase == 2 and not plan.has_phase2:
        raise CliError(f"variant {variant!r} has no adaptation phase")
    if phase == 2 and not args.from_checkpoint:
        raise CliError("--phase 2 requires --from pointing at a phase-1 checkpoint")

    out = Path(args.out or
               Path(cfg["out_dir"]) / f"{variant}_{cfg['task.kind']}_s{seed}_p{phase}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.emit(), encoding="utf-8")

    task, ranges, ppo_cfg, widths = (cfg.task_spec(), cfg.ranges(),
                                     cfg.ppo_config(), cfg.net_widths())
    substeps = cfg["physics.substeps"]
    metrics = MetricsWriter(out / "metrics.csv")
    t0 = time.time()

    if phase == 1:
        updates = args.updates or cfg["budget.phase1_updates"]
        if plan.e2e:
            nets, rows, best, optimizer = rma.train_e2e(
                task, ranges, ppo_cfg, seed, updates, widths=widths,
                eval_every=cfg["budget.eval_every"],
                eval_episodes=cfg["budget.eval_episodes"],
                metrics_cb=metrics, substeps=substeps)
        else:
            nets, rows, best, optimizer = rma.train_phase1(
                task, ranges, ppo_cfg, seed, updates, variant=variant,
                widths=widths, eval_every=cfg["budget.eval_every"],
                eval_episodes=cfg["budget.eval_episodes"],
                metrics_cb=metrics, substeps=substeps)
    else:
        ck = load_checkpoint(args.from_checkpoint)
        if ck["phase"] != 1:
            raise CliError(f"--from checkpoint is phase {ck['phase']}, need phase 1")
        if ck["variant"] != variant:
            raise CliError(f"--from checkpoint variant {ck['variant']!r} != config "
                           f"variant {variant!r}")
        if ck["config_hash"] != cfg.content_hash() and not args.allow_config_mismatch:
            raise CliError(
                "config hash mismatch between --from checkpoint and config "
                f"({ck['config_hash'][:12]} vs {cfg.content_hash()[:12]}); "
                "pass --allow-config-mismatch to override")
        nets1 = nets_from_checkpoint(ck, cfg)
        updates = args.updates or cfg["budget.phase2_updates"]
        nets, rows, best, optimizer = rma.train_phase2(
            nets1, task, ranges, ppo_cfg, seed, updates, widths=widths,
            eval_every=cfg["budget.eval_every"],
            eval_episodes=cfg["budget.eval_episodes"],
            metrics_cb=metrics, substeps=substeps)

    metrics.close()
    save_nets(out / "checkpoint_final.rapd", nets, cfg, optimizer=optimizer)
    save_snapshot(out / "checkpoint_best.rapd", nets, best["snapshot"], cfg)
    write_manifest(out / "manifest.txt", {
        "command": "train",
        "variant": variant,
        "phase": phase,
        "seed": seed,
        "config_hash": cfg.content_hash(),
        "updates": updates,
        "best_update": best["update"],
        "best_success_rate": best["success"],
        "train_seed_max": TRAIN_SEED_LIMIT - 1,
        "wall_clock_seconds": f"{time.time() - t0:.1f}",
        "status": "complete",
    })
    print(f"trained {variant} phase {phase} seed {seed}: {updates} updates, "
          f"best eval success {best['success']:.2f} at update {best['update']}")
    print(f"artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def run_eval(nets, cfg, episodes, seed_base, sample=False, sample_seed=0):
    task, ranges = cfg.task_spec(), cfg.ranges()
    substeps = cfg["physics.substeps"]
    rng = np.random.Generator(np.random.PCG64(sample_seed)) if sample else None
    rows = []
    for ep in range(episodes):
        env = DeformableEnv(task, ranges, mode="deploy", substeps=substeps)
        rma.deploy(nets, env, max_steps=task.horizon, seed=seed_base + ep,
                   deterministic=not sample, rng=rng)
        oc = env.outcome()
        rows.append({
            "seed": seed_base + ep,
            "variant": nets.variant,
            "kind": task.kind,
            "success": int(oc.success),
            "steps": oc.steps_taken,
            "return": oc.episode_return,
            "final_coverage": oc.final_coverage,
        })
    return rows


def write_results(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(RESULTS_HEADER)
        for r in rows:
            w.writerow([r["seed"], r["variant"], r["kind"], r["success"],
                        r["steps"], f"{r['return']:.10g}",
                        f"{r['final_coverage']:.10g}"])


def results_table(groups):
    """groups: list of (label, kind, rows). Aligned text table."""
    lines = [f"{'variant':<12} {'task':<8} {'success':<12} {'rate':<8} {'mean steps':<10}"]
    for label, kind, rows in groups:
        n = len(rows)
        s = sum(r["success"] for r in rows)
        steps = np.mean([r["steps"] for r in rows]) if rows else float("nan")
        lines.append(f"{label:<12} {kind:<8} {format_trials(s, n):<12} "
                     f"{s / n:<8.2f} {steps:<10.1f}")
    return "\n".join(lines)


def cmd_eval(args):
    ck = load_checkpoint(args.checkpoint)
    cfg = config_from_checkpoint(ck, args.config)
    if args.episodes < 1:
        raise CliError("--episodes must be >= 1")
    seed_base = args.seed_base
    if seed_base < EVAL_SEED_BASE:
        raise CliError(f"--seed-base must be >= {EVAL_SEED_BASE} "
                       "(training seeds are below; eval seeds are held out)")
    nets = nets_from_checkpoint(ck, cfg)
    rows = run_eval(nets, cfg, args.episodes, seed_base, sample=args.sample)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_results(out / "results.csv", rows)
    print(results_table([(nets.variant, cfg["task.kind"], rows)]))
    print(f"per-episode rows in {out / 'results.csv'}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def _cell_dir(base, variant, seed):
    return base / f"{variant}_s{seed}"


def run_ablation_cell(cfg, variant, seed, cell_dir, eval_episodes):
    """Train the variant end to end at the config budget, then evaluate the
    best snapshot on held-out seeds. Returns per-episode result rows."""
    cell_dir.mkdir(parents=True, exist_ok=True)
    task, ranges, ppo_cfg, widths = (cfg.task_spec(), cfg.ranges(),
                                     cfg.ppo_config(), cfg.net_widths())
    substeps = cfg["physics.substeps"]
    plan = build_variant(variant)
    p1, p2 = cfg["budget.phase1_updates"], cfg["budget.phase2_updates"]
    metrics = MetricsWriter(cell_dir / "metrics.csv")
    try:
        if plan.e2e:
            # equal total update budget to the two-phase variants
            nets, rows, best, optimizer = rma.train_e2e(
                task, ranges, ppo_cfg, seed, p1 + p2, widths=widths,
                eval_every=cfg["budget.eval_every"],
                eval_episodes=cfg["budget.eval_episodes"],
                metrics_cb=metrics, substeps=substeps)
        else:
            nets, rows, best, optimizer = rma.train_phase1(
                task, ranges, ppo_cfg, seed, p1, variant=variant,
                widths=widths, eval_every=cfg["budget.eval_every"],
                eval_episodes=cfg["budget.eval_episodes"],
                metrics_cb=metrics, substeps=substeps)
            if plan.has_phase2:
                nets.restore(best["snapshot"])
                save_nets(cell_dir / "checkpoint_phase1.rapd", nets, cfg)
                nets, rows, best, optimizer = rma.train_phase2(
                    nets, task, ranges, ppo_cfg, seed, p2, widths=widths,
                    eval_every=cfg["budget.eval_every"],
                    eval_episodes=cfg["budget.eval_episodes"],
                    metrics_cb=metrics, substeps=substeps)
    finally:
        metrics.close()

    if variant == "full":
        rep = rma.distillation_report(nets, task, ranges, substeps=substeps)
        with open(cell_dir / "distillation.txt", "w", encoding="utf-8") as f:
            f.write(emit_kv({
                "mae_per_dim": " ".join(f"{v:.6g}" for v in rep["mae"]),
                "target_std_per_dim": " ".join(f"{v:.6g}" for v in rep["target_std"]),
                "ratio_per_dim": " ".join(f"{v:.6g}" for v in rep["ratio"]),
                "mean_mae": f"{rep['mean_mae']:.6g}",
                "mean_std": f"{rep['mean_std']:.6g}",
            }))

    nets.restore(best["snapshot"])
    save_nets(cell_dir / "checkpoint_final.rapd", nets, cfg, optimizer=optimizer)
    result_rows = run_eval(nets, cfg, eval_episodes, EVAL_SEED_BASE)
    for r in result_rows:
        r["seed_train"] = seed
    write_results(cell_dir / "results.csv", result_rows)
    return result_rows


def cmd_ablate(args):
    cfg = load_config(args.config)
    variants = args.variants.split(",")
    for v in variants:
        if v not in rma.VARIANTS:
            raise CliError(f"unknown variant {v!r} (choose from {', '.join(rma.VARIANTS)})")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else cfg["seeds"]
    base = Path(args.out or Path(cfg["out_dir"]) / f"ablate_{cfg['task.kind']}")
    base.mkdir(parents=True, exist_ok=True)
    (base / "config.txt").write_text(cfg.emit(), encoding="utf-8")

    failures = []
    per_cell = {}
    for variant in variants:
        for seed in seeds:
            cell = _cell_dir(base, variant, seed)
            manifest = cell / "manifest.txt"
            if manifest.exists() and read_manifest(manifest).get("status") == "complete":
                rows = list(csv.DictReader(open(cell / "results.csv", encoding="utf-8")))
                per_cell[(variant, seed)] = [
                    {"success": int(r["success"]), "steps": int(r["steps"]),
                     "seed": int(r["seed"]), "variant": r["variant"],
                     "kind": r["kind"], "return": float(r["return"]),
                     "final_coverage": float(r["final_coverage"])} for r in rows]
                print(f"cell {variant} seed {seed}: already complete, skipping")
                continue
            t0 = time.time()
            try:
                rows = run_ablation_cell(cfg, variant, seed, cell, args.eval_episodes)
            except Exception as exc:  # cell failures recorded, run continues
                failures.append((variant, seed, repr(exc)))
                write_manifest(manifest, {"status": "failed", "error": repr(exc)})
                print(f"cell {variant} seed {seed} FAILED: {exc}", file=sys.stderr)
                continue
            per_cell[(variant, seed)] = rows
            sr = float(np.mean([r["success"] for r in rows]))
            write_manifest(manifest, {
                "status": "complete", "variant": variant, "seed": seed,
                "success_rate": f"{sr:.4f}",
                "eval_episodes": args.eval_episodes,
                "eval_seed_base": EVAL_SEED_BASE,
                "config_hash": cfg.content_hash(),
                "wall_clock_seconds": f"{time.time() - t0:.1f}",
            })
            print(f"cell {variant} seed {seed}: success {sr:.2f} "
                  f"({time.time() - t0:.0f}s)")

    groups = []
    summary_rows = []
    for variant in variants:
        rows = [r for seed in seeds for r in per_cell.get((variant, seed), [])]
        if rows:
            groups.append((variant, cfg["task.kind"], rows))
        per_seed = {seed: float(np.mean([r["success"] for r in per_cell[(variant, seed)]]))
                    for seed in seeds if (variant, seed) in per_cell}
        summary_rows.append((variant, per_seed))

    print()
    print(results_table(groups))
    print()
    for variant, per_seed in summary_rows:
        detail = "  ".join(f"s{seed}={sr:.2f}" for seed, sr in per_seed.items())
        mean = np.mean(list(per_seed.values())) if per_seed else float("nan")
        print(f"{variant:<12} mean {mean:.3f}   {detail}")

    with open(base / "results.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(RESULTS_HEADER)
        for (variant, seed) in sorted(per_cell):
            for r in per_cell[(variant, seed)]:
                w.writerow([r["seed"], r["variant"], r["kind"], r["success"],
                            r["steps"], f"{r['return']:.10g}",
                            f"{r['final_coverage']:.10g}"])

    if failures:
        print(f"\n{len(failures)} cell(s) failed:", file=sys.stderr)
        for v, s, e in failures:
            print(f"  {v} seed {s}: {e}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# probe


def cmd_probe(args):
    ck = load_checkpoint(args.checkpoint)
    cfg = config_from_checkpoint(ck, args.config)
    nets = nets_from_checkpoint(ck, cfg)
    if nets.phi_d is None:
        raise CliError("checkpoint has no adaptation modules (phase-1 "
                       "checkpoint?); probe needs a phase-2 or e2e checkpoint")
    grid = rma.probe_param_grid(args.grid)
    report = rma.embedding_probe(nets, cfg.task_spec(), grid,
                                 substeps=cfg["physics.substeps"])
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "probe.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["stiffness"] + [f"dim_{d}" for d in range(rma.EMBED_DIM)])
        for row in report["rows"]:
            w.writerow([f"{row['stretch_stiffness']:.10g}"] +
                       [f"{v:.10g}" for v in row["embedding"]])

    d = report["best_dim"]
    svg = scatter_chart(report["log_stiffness"], report["embeddings"][:, d],
                        title=f"dynamics embedding dim {d} vs log stiffness "
                              f"(|r| = {report['best_abs_r']:.3f})",
                        xlabel="log stretch stiffness", ylabel=f"dim_{d}")
    (out / "probe.svg").write_text(svg, encoding="utf-8")

    for dim in range(rma.EMBED_DIM):
        flag = " (degenerate variance)" if report["degenerate"][dim] else ""
        print(f"dim_{dim}: r = {report['correlations'][dim]:+.4f}{flag}")
    print(f"best: dim_{d} with |r| = {report['best_abs_r']:.4f}")
    print(f"wrote {out / 'probe.csv'} and {out / 'probe.svg'}")
    return 0


# ---------------------------------------------------------------------------
# plot


def read_metrics_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise CliError(f"{path}: zero rows (empty metrics file)")
        missing = [c for c in METRICS_HEADER if c not in reader.fieldnames]
        if missing:
            raise CliError(f"{path}: missing column(s): {', '.join(missing)}")
        rows = [{k: float(r[k]) for k in METRICS_HEADER} for r in reader]
    if not rows:
        raise CliError(f"{path}: zero rows (header only)")
    return rows


def cmd_plot(args):
    paths = [Path(args.metrics)] + [Path(p) for p in (args.compare or [])]
    data = [(p.stem, read_metrics_csv(p)) for p in paths]
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)

    def series(col):
        return [(stem, [r["update_index"] for r in rows], [r[col] for r in rows])
                for stem, rows in data]

    sr = series("success_rate_eval")
    if any(math.isfinite(y) for _, _, ys in sr for y in ys):
        (out / "success_rate.svg").write_text(
            line_chart(sr, "evaluation success rate", "update", "success rate"),
            encoding="utf-8")
        print(f"wrote {out / 'success_rate.svg'}")
    else:
        print("no finite success_rate_eval values; skipping success_rate.svg")
    losses = []
    for col in ("policy_loss", "value_loss", "entropy"):
        for stem, xs, ys in series(col):
            label = f"{stem}:{col}" if len(data) > 1 else col
            losses.append((label, xs, ys))
    (out / "losses.svg").write_text(
        line_chart(losses, "training losses", "update", "loss"),
        encoding="utf-8")
    print(f"wrote {out / 'losses.svg'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(
        prog="rapida",
        description="two-phase rapid adaptation for deformable manipulation "
                    "(train / eval / ablate / probe / plot)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one phase of one variant")
    t.add_argument("config")
    t.add_argument("--phase", type=int, choices=(1, 2), default=1)
    t.add_argument("--seed", type=int, default=None,
                   help="overrides RAPIDA_SEED and config seeds")
    t.add_argument("--from", dest="from_checkpoint", default=None,
                   help="phase-1 checkpoint (required for --phase 2)")
    t.add_argument("--allow-config-mismatch", action="store_true")
    t.add_argument("--updates", type=int, default=None,
                   help="override the config phase budget")
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on held-out seeds")
    e.add_argument("checkpoint")
    e.add_argument("--config", default=None,
                   help="override the config embedded in the checkpoint")
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed-base", type=int, default=EVAL_SEED_BASE)
    e.add_argument("--sample", action="store_true",
                   help="sample actions instead of the deterministic mean")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train + evaluate the variant matrix")
    a.add_argument("config")
    a.add_argument("--variants", default=",".join(rma.VARIANTS))
    a.add_argument("--seeds", default=None, help="comma-separated; default from config")
    a.add_argument("--eval-episodes", type=int, default=100)
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_ablate)

    pr = sub.add_parser("probe", help="embedding vs stiffness correlation")
    pr.add_argument("checkpoint")
    pr.add_argument("--config", default=None)
    pr.add_argument("--grid", type=int, default=16)
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=cmd_probe)

    pl = sub.add_parser("plot", help="render metrics CSV to SVG curves")
    pl.add_argument("metrics")
    pl.add_argument("--compare", nargs="*", default=None)
    pl.add_argument("--out", default=None)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
