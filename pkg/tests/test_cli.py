"""End-to-end CLI tests: tiny train/eval/ablate/probe/plot runs in temp
directories, artifact formats, seed precedence, and error exits."""

import csv
import os

import numpy as np
import pytest

from rapida.checkpoint import load_checkpoint
from rapida.cli import main, nets_from_checkpoint, resolve_seed
from rapida.config import default_config, load_config
from rapida.rma import EVAL_SEED_BASE

TINY_CFG = """\
task.kind = insert
task.horizon = 8
seeds = 0
budget.phase1_updates = 2
budget.phase2_updates = 2
budget.eval_every = 2
budget.eval_episodes = 2
ppo.rollout_length = 6
ppo.num_envs = 2
ppo.minibatch_size = 64
ppo.epochs_per_update = 1
"""


@pytest.fixture()
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY_CFG)
    return p


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


# ---------------------------------------------------------------------------
# seed precedence


def test_resolve_seed_precedence(monkeypatch):
    cfg = default_config()
    monkeypatch.delenv("RAPIDA_SEED", raising=False)
    assert resolve_seed(None, cfg) == cfg["seeds"][0]
    monkeypatch.setenv("RAPIDA_SEED", "17")
    assert resolve_seed(None, cfg) == 17
    assert resolve_seed(9, cfg) == 9  # flag beats the environment


def test_resolve_seed_rejects_garbage_env(monkeypatch):
    monkeypatch.setenv("RAPIDA_SEED", "banana")
    from rapida.cli import CliError
    with pytest.raises(CliError):
        resolve_seed(None, default_config())


# ---------------------------------------------------------------------------
# train


def test_train_phase1_smoke(tiny_cfg, tmp_path):
    out = tmp_path / "run1"
    rc = main(["train", str(tiny_cfg), "--phase", "1", "--seed", "0",
               "--out", str(out)])
    assert rc == 0
    assert (out / "config.txt").exists()
    assert (out / "checkpoint_final.rapd").exists()
    assert (out / "checkpoint_best.rapd").exists()
    rows = read_csv(out / "metrics.csv")
    assert len(rows) == 2
    assert [r["update_index"] for r in rows] == ["0", "1"]
    manifest = dict(line.split(" = ", 1) for line in
                    (out / "manifest.txt").read_text().splitlines() if " = " in line)
    assert manifest["status"] == "complete"
    assert manifest["seed"] == "0"
    ck = load_checkpoint(out / "checkpoint_final.rapd")
    assert ck["variant"] == "full" and ck["phase"] == 1
    assert ck["config_hash"] == load_config(tiny_cfg).content_hash()


def test_train_checkpoint_reloads_bitwise(tiny_cfg, tmp_path):
    out = tmp_path / "run"
    assert main(["train", str(tiny_cfg), "--seed", "0", "--out", str(out)]) == 0
    ck = load_checkpoint(out / "checkpoint_final.rapd")
    cfg = load_config(tiny_cfg)
    nets = nets_from_checkpoint(ck, cfg)
    for name, p in nets.named_parameters():
        np.testing.assert_array_equal(p.data, ck["params"][name])


def test_train_phase2_from_phase1(tiny_cfg, tmp_path):
    p1 = tmp_path / "p1"
    p2 = tmp_path / "p2"
    assert main(["train", str(tiny_cfg), "--seed", "0", "--out", str(p1)]) == 0
    rc = main(["train", str(tiny_cfg), "--phase", "2", "--seed", "0",
               "--from", str(p1 / "checkpoint_final.rapd"), "--out", str(p2)])
    assert rc == 0
    ck = load_checkpoint(p2 / "checkpoint_final.rapd")
    assert ck["phase"] == 2
    # phase-2 checkpoints carry the adapters but drop the frozen encoders
    names = set(ck["params"])
    assert any(n.startswith("phi_s.") for n in names)
    assert any(n.startswith("phi_d.") for n in names)
    assert not any(n.startswith(("mu_s.", "mu_d.")) for n in names)


def test_phase2_requires_from(tiny_cfg, capsys):
    assert main(["train", str(tiny_cfg), "--phase", "2"]) == 2
    assert "--from" in capsys.readouterr().err


def test_phase2_config_hash_mismatch(tiny_cfg, tmp_path, capsys):
    p1 = tmp_path / "p1"
    assert main(["train", str(tiny_cfg), "--seed", "0", "--out", str(p1)]) == 0
    other = tmp_path / "other.cfg"
    other.write_text(TINY_CFG + "ppo.gamma = 0.95\n")
    rc = main(["train", str(other), "--phase", "2", "--seed", "0",
               "--from", str(p1 / "checkpoint_final.rapd"),
               "--out", str(tmp_path / "p2")])
    assert rc == 2
    assert "mismatch" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("task.horzion = 100\n")
    assert main(["train", str(bad)]) == 2
    assert "task.horzion" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# eval


def trained_checkpoint(tiny_cfg, tmp_path):
    out = tmp_path / "train_out"
    if not (out / "checkpoint_final.rapd").exists():
        assert main(["train", str(tiny_cfg), "--seed", "0", "--out", str(out)]) == 0
    return out / "checkpoint_final.rapd"


def test_eval_smoke(tiny_cfg, tmp_path):
    ck = trained_checkpoint(tiny_cfg, tmp_path)
    out = tmp_path / "eval_out"
    rc = main(["eval", str(ck), "--episodes", "3", "--out", str(out)])
    assert rc == 0
    rows = read_csv(out / "results.csv")
    assert len(rows) == 3
    assert [int(r["seed"]) for r in rows] == [EVAL_SEED_BASE + i for i in range(3)]
    for r in rows:
        assert r["success"] in ("0", "1")
        assert 1 <= int(r["steps"]) <= 8


def test_eval_refuses_training_seed_range(tiny_cfg, tmp_path, capsys):
    ck = trained_checkpoint(tiny_cfg, tmp_path)
    rc = main(["eval", str(ck), "--episodes", "1", "--seed-base", "500",
               "--out", str(tmp_path / "e")])
    assert rc == 2
    assert "held out" in capsys.readouterr().err


def test_eval_corrupt_checkpoint_reports_offset(tmp_path, capsys):
    path = tmp_path / "bad.rapd"
    path.write_bytes(b"RAPD" + b"\x01\x00\x00\x00" + b"\xff\xff\xff\xff")
    assert main(["eval", str(path)]) == 2
    assert "byte offset" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# probe


def test_probe_needs_adapters(tiny_cfg, tmp_path, capsys):
    ck = trained_checkpoint(tiny_cfg, tmp_path)
    assert main(["probe", str(ck), "--grid", "3", "--out", str(tmp_path / "pr")]) == 2
    assert "adaptation" in capsys.readouterr().err


def test_probe_smoke(tiny_cfg, tmp_path):
    p1 = trained_checkpoint(tiny_cfg, tmp_path)
    p2 = tmp_path / "p2"
    assert main(["train", str(tiny_cfg), "--phase", "2", "--seed", "0",
                 "--from", str(p1), "--out", str(p2)]) == 0
    out = tmp_path / "probe_out"
    rc = main(["probe", str(p2 / "checkpoint_final.rapd"), "--grid", "4",
               "--out", str(out)])
    assert rc == 0
    rows = read_csv(out / "probe.csv")
    assert len(rows) == 4
    svg = (out / "probe.svg").read_text()
    assert svg.lstrip().startswith("<svg") or "<svg" in svg


# ---------------------------------------------------------------------------
# plot


def test_plot_smoke(tiny_cfg, tmp_path):
    ck = trained_checkpoint(tiny_cfg, tmp_path)
    out = tmp_path / "plots"
    rc = main(["plot", str(ck.parent / "metrics.csv"), "--out", str(out)])
    assert rc == 0
    assert "<svg" in (out / "losses.svg").read_text()
    assert (out / "success_rate.svg").exists()  # eval ran at update 2


def test_plot_rejects_missing_columns(tmp_path, capsys):
    p = tmp_path / "m.csv"
    p.write_text("update_index,policy_loss\n0,1.0\n")
    assert main(["plot", str(p), "--out", str(tmp_path / "o")]) != 0 or \
        "missing" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# ablate


def test_ablate_smoke_and_resume(tmp_path, capsys):
    cfg = tmp_path / "ab.cfg"
    cfg.write_text(TINY_CFG.replace("budget.phase1_updates = 2",
                                    "budget.phase1_updates = 1")
                   .replace("budget.phase2_updates = 2",
                            "budget.phase2_updates = 1"))
    out = tmp_path / "ablate_out"
    rc = main(["ablate", str(cfg), "--variants", "full,no_adapt",
               "--seeds", "0", "--eval-episodes", "2", "--out", str(out)])
    assert rc == 0
    rows = read_csv(out / "results.csv")
    assert {r["variant"] for r in rows} == {"full", "no_adapt"}
    assert len(rows) == 4  # 2 variants x 2 eval episodes
    assert (out / "full_s0" / "distillation.txt").exists()
    assert (out / "full_s0" / "checkpoint_phase1.rapd").exists()
    capsys.readouterr()
    # a second invocation skips the completed cells
    rc = main(["ablate", str(cfg), "--variants", "full,no_adapt",
               "--seeds", "0", "--eval-episodes", "2", "--out", str(out)])
    assert rc == 0
    assert "already complete" in capsys.readouterr().out
