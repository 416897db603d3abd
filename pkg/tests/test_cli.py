"""Command-line surface: subcommands, exit codes, config plumbing."""

import json

import numpy as np
import pytest

from pegbench import dataset as ds
from pegbench.cli import main
from pegbench.model import VisuotactilePolicy
from pegbench.simcore import SimConfig
from pegbench.trainer import TrainConfig, train
from pegbench.rollout import expert_policy
from pegbench.variations import Split


@pytest.fixture(scope="module")
def demo_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "demos"
    sim = SimConfig()
    data = ds.collect_demos(expert_policy(sim), 3, set(), Split.CANONICAL, sim)
    ds.save(data, path)
    return path


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, demo_dir):
    path = tmp_path_factory.mktemp("cli-ckpt") / "model.ckpt"
    data = ds.load(demo_dir)
    tc = TrainConfig(total_steps=20, rollout_every=20, rollouts_per_eval=1, batch=8)
    result = train(data, tc, seed=0, sim_config=SimConfig())
    result.model.save(path, meta={"seed": 0, "train_config": tc.to_json()})
    return path


# --------------------------------------------------------------- exit codes


def test_unknown_flag_is_usage_error(capsys):
    assert main(["--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error():
    assert main(["frobnicate"]) == 1


def test_missing_dataset_is_data_error(tmp_path, capsys):
    code = main([
        "augment", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
        "--kinds", "grasp",
    ])
    assert code == 2
    assert "data error" in capsys.readouterr().err


def test_bad_demo_file_is_data_error(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 8)
    assert main(["replay", "--demo", str(bad)]) == 2


def test_bad_checkpoint_is_runtime_or_data_error(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"\x07" * 16)
    code = main(["eval", "--checkpoint", str(bad), "--n", "1", "--out", str(tmp_path / "r")])
    assert code == 3


# ------------------------------------------------------------------ collect


def test_collect_writes_manifest_count(tmp_path, capsys):
    out = tmp_path / "demos"
    assert main(["collect", "--policy", "expert", "--n", "2", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 2
    loaded = ds.load(out)
    assert all(d.source == "expert" for d in loaded)


def test_collect_with_variations_needs_noncanonical_split(tmp_path):
    out = tmp_path / "demos"
    code = main([
        "collect", "--n", "1", "--out", str(out),
        "--variations", "grasp", "--split", "canonical",
    ])
    assert code == 1


def test_collect_seed_offset_env_changes_episodes(tmp_path, monkeypatch):
    base, shifted = tmp_path / "a", tmp_path / "b"
    assert main(["collect", "--n", "1", "--seed", "5", "--out", str(base)]) == 0
    monkeypatch.setenv("PEGBENCH_SEED_OFFSET", "7")
    assert main(["collect", "--n", "1", "--seed", "5", "--out", str(shifted)]) == 0
    monkeypatch.setenv("PEGBENCH_SEED_OFFSET", "0")
    assert main(["collect", "--n", "1", "--seed", "12", "--out", str(tmp_path / "c")]) == 0
    a = ds.load(base).demos[0]
    b = ds.load(shifted).demos[0]
    c = ds.load(tmp_path / "c").demos[0]
    assert a.seed == 5 and b.seed == 12 and c.seed == 12
    assert b.initial_offset == c.initial_offset  # offset applied before sampling
    assert a.initial_offset != b.initial_offset


# ------------------------------------------------------------------ augment


def test_augment_replay_grows_manifest(tmp_path, demo_dir):
    out = tmp_path / "aug"
    code = main([
        "augment", "--in", str(demo_dir), "--out", str(out),
        "--kinds", "grasp", "--per-demo", "2", "--mode", "replay",
    ])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 9  # 3 originals + 3*2 replicas, grasp never drops
    loaded = ds.load(out)
    assert sum(d.source == "replay" for d in loaded) == 6


def test_augment_replay_without_kinds_is_usage_error(tmp_path, demo_dir):
    code = main(["augment", "--in", str(demo_dir), "--out", str(tmp_path / "x")])
    assert code == 1


def test_augment_offline_mode(tmp_path, demo_dir):
    out = tmp_path / "off"
    code = main([
        "augment", "--in", str(demo_dir), "--out", str(out),
        "--per-demo", "1", "--mode", "offline",
    ])
    assert code == 0
    loaded = ds.load(out)
    assert len(loaded) == 6
    assert sum("-o" in d.demo_id for d in loaded) == 3


# ------------------------------------------------------------- train / eval


def test_train_then_eval_roundtrip(tmp_path, demo_dir, capsys):
    out = tmp_path / "run"
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "train": {"total_steps": 20, "rollout_every": 20, "rollouts_per_eval": 1, "batch": 8}
    }))
    assert main([
        "train", "--data", str(demo_dir), "--seed", "1",
        "--config", str(config), "--out", str(out), "--desk-scale",
    ]) == 0
    ckpt = out / "model-seed1.ckpt"
    assert ckpt.is_file()
    log_lines = (out / "training_log-seed1.jsonl").read_text().strip().splitlines()
    assert len(log_lines) == 21  # 20 loss entries + 1 selection entry
    model, meta = VisuotactilePolicy.load(ckpt)
    assert meta["seed"] == 1

    rep = tmp_path / "eval"
    assert main([
        "eval", "--checkpoint", str(ckpt), "--conditions", "canonical,grasp",
        "--n", "2", "--out", str(rep),
    ]) == 0
    payload = json.loads((rep / "report" / "results.json").read_text())
    assert {r["condition"] for r in payload["rows"]} == {"canonical", "grasp"}
    assert all(r["attempts"] == 2 for r in payload["rows"])
    assert (rep / "report" / "results.csv").is_file()
    assert (rep / "report" / "summary.md").is_file()


def test_train_rejects_unknown_config_section(tmp_path, demo_dir):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"sim": {}, "nonsense": {}}))
    code = main([
        "train", "--data", str(demo_dir), "--config", str(config),
        "--out", str(tmp_path / "o"), "--desk-scale",
    ])
    assert code == 2


def test_eval_conditions_reject_unknown_name(tmp_path, checkpoint):
    code = main([
        "eval", "--checkpoint", str(checkpoint), "--conditions", "canonical,warp",
        "--n", "1", "--out", str(tmp_path / "r"),
    ])
    assert code == 3  # unknown variation name surfaces as a runtime failure


# ------------------------------------------------------------------- replay


def test_replay_trace_roundtrip(tmp_path, demo_dir, capsys):
    demo = ds.load(demo_dir).demos[0]
    code = main(["replay", "--demo", str(demo_dir / f"{demo.demo_id}.bin"), "--trace"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    summary = json.loads(lines[-1])
    assert summary["stored_steps"] == summary["replayed_steps"] == demo.steps
    assert summary["success"] is True
    trace = [json.loads(line) for line in lines[:-1]]
    assert len(trace) == demo.steps
    assert trace[0]["action"] == [float(a) for a in demo.actions[0]]
    assert len(trace[0]["ft_newest"]) == 12


def test_replay_trace_to_file(tmp_path, demo_dir):
    demo = ds.load(demo_dir).demos[1]
    out = tmp_path / "trace.jsonl"
    code = main([
        "replay", "--demo", str(demo_dir / f"{demo.demo_id}.bin"),
        "--trace", "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == demo.steps
