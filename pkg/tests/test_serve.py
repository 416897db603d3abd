"""WebSocket session endpoint: protocol, teleop recording, replay paging."""

import base64
import math

import numpy as np
import pytest
from starlette.testclient import TestClient

from pegbench import dataset as ds
from pegbench.model import VisuotactilePolicy
from pegbench.rollout import expert_policy
from pegbench.serve import build_app
from pegbench.simcore import SimConfig
from pegbench.variations import Split, VariationSpec

SIM = SimConfig()
IMAGE_B64_LEN = 4 * math.ceil(84 * 84 * 3 / 3)


def _decode(b64: str) -> np.ndarray:
    raw = base64.b64decode(b64)
    assert len(raw) == 84 * 84 * 3
    return np.frombuffer(raw, dtype=np.uint8).reshape(84, 84, 3)


@pytest.fixture()
def teleop_client(tmp_path):
    app = build_app(mode="teleop", sim_config=SIM, data_dir=str(tmp_path / "saved"))
    with TestClient(app) as client:
        yield client, tmp_path / "saved"


@pytest.fixture(scope="module")
def replay_assets(tmp_path_factory):
    path = tmp_path_factory.mktemp("serve") / "demos"
    demos = ds.collect_demos(expert_policy(SIM), 2, set(), Split.CANONICAL, SIM)
    ds.save(demos, path)
    ckpt = path.parent / "model.ckpt"
    VisuotactilePolicy(seed=0).save(ckpt, meta={})
    return path, ckpt, demos


# ----------------------------------------------------------------- protocol


def test_start_obs_shape_and_step_zero(teleop_client):
    client, _ = teleop_client
    with client.websocket_connect("/session") as ws:
        ws.send_json({"type": "control", "cmd": "start", "seed": 3})
        msg = ws.receive_json()
        assert msg["type"] == "obs"
        assert msg["step"] == 0
        assert msg["status"] == "running"
        assert len(msg["image_left"]) == IMAGE_B64_LEN
        assert len(msg["image_right"]) == IMAGE_B64_LEN
        _decode(msg["image_left"])
        assert len(msg["ft_window"]) == 32
        assert all(len(row) == 12 for row in msg["ft_window"])
        assert len(msg["proprio"]) == 14
        assert "demo_steps" not in msg


def test_every_action_yields_exactly_one_obs(teleop_client):
    client, _ = teleop_client
    with client.websocket_connect("/session") as ws:
        ws.send_json({"type": "control", "cmd": "start", "seed": 3})
        ws.receive_json()
        for k in range(1, 4):
            ws.send_json({"type": "action", "ax": 0.5, "ay": 0.5, "az": 0.5})
            msg = ws.receive_json()
            assert msg["type"] == "obs"
            assert msg["step"] == k


def test_unknown_and_malformed_messages_are_rejected(teleop_client):
    client, _ = teleop_client
    with client.websocket_connect("/session") as ws:
        ws.send_json({"type": "telepathy"})
        assert ws.receive_json()["type"] == "error"
        ws.send_json({"no_type": True})
        assert ws.receive_json()["type"] == "error"
        ws.send_json({"type": "control", "cmd": "warp"})
        assert ws.receive_json()["type"] == "error"
        ws.send_json({"type": "action", "ax": "left"})
        assert ws.receive_json()["type"] == "error"
        ws.send_json({"type": "action", "ax": 0.5, "ay": 0.5, "az": 0.5})
        assert ws.receive_json()["type"] == "error"  # no episode started yet


def test_reset_returns_step_zero(teleop_client):
    client, _ = teleop_client
    with client.websocket_connect("/session") as ws:
        ws.send_json({"type": "control", "cmd": "start", "seed": 3})
        first = ws.receive_json()
        ws.send_json({"type": "action", "ax": 0.1, "ay": 0.9, "az": 0.5})
        assert ws.receive_json()["step"] == 1
        ws.send_json({"type": "control", "cmd": "reset"})
        again = ws.receive_json()
        assert again["step"] == 0
        # Same seed and spec: the reset episode starts identically.
        assert again["image_left"] == first["image_left"]
        assert again["proprio"] == first["proprio"]


def test_second_concurrent_session_is_rejected(teleop_client):
    client, _ = teleop_client
    with client.websocket_connect("/session") as first:
        first.send_json({"type": "control", "cmd": "start", "seed": 0})
        first.receive_json()
        with client.websocket_connect("/session") as second:
            msg = second.receive_json()
            assert msg["type"] == "error"
            assert "active" in msg["error"]
    # After both close, a new session is accepted again.
    with client.websocket_connect("/session") as ws:
        ws.send_json({"type": "control", "cmd": "start", "seed": 1})
        assert ws.receive_json()["type"] == "obs"


# ------------------------------------------------------------------- teleop


def test_teleop_session_records_a_replayable_demo(teleop_client):
    client, saved_dir = teleop_client
    seed = 11
    reference = ds.record_demo(expert_policy(SIM), VariationSpec(), seed, SIM)
    with client.websocket_connect("/session") as ws:
        ws.send_json({"type": "control", "cmd": "start", "seed": seed})
        msg = ws.receive_json()
        for t in range(reference.steps):
            ax, ay, az = (float(v) for v in reference.actions[t])
            ws.send_json({"type": "action", "ax": ax, "ay": ay, "az": az})
            msg = ws.receive_json()
        assert msg["status"] == "success"
        # Terminal state latches: a further action re-sends the final frame.
        ws.send_json({"type": "action", "ax": 0.5, "ay": 0.5, "az": 0.5})
        repeat = ws.receive_json()
        assert repeat["step"] == msg["step"]
        assert repeat["status"] == "success"
        ws.send_json({"type": "control", "cmd": "save"})
        ack = ws.receive_json()
        assert ack["type"] == "saved"
        assert ack["demo_id"] == f"teleop-{seed:05d}"

    stored = ds.load(saved_dir)
    assert stored.ids() == [f"teleop-{seed:05d}"]
    demo = stored.demos[0]
    assert demo.source == "teleop"
    assert demo.steps == reference.steps
    assert np.array_equal(demo.images, reference.images)
    assert np.array_equal(demo.ft, reference.ft)
    assert np.array_equal(demo.proprio, reference.proprio)
    assert np.array_equal(demo.actions, reference.actions)


def test_save_requires_steps_and_discard_acks(teleop_client):
    client, _ = teleop_client
    with client.websocket_connect("/session") as ws:
        ws.send_json({"type": "control", "cmd": "save"})
        assert ws.receive_json()["type"] == "error"
        ws.send_json({"type": "control", "cmd": "start", "seed": 2})
        ws.receive_json()
        ws.send_json({"type": "control", "cmd": "save"})
        assert ws.receive_json()["type"] == "error"  # zero steps so far
        ws.send_json({"type": "control", "cmd": "discard"})
        assert ws.receive_json()["type"] == "discarded"


# ------------------------------------------------------------------- replay


def test_replay_pages_through_a_stored_demo(replay_assets):
    path, _, demos = replay_assets
    demo = demos.demos[0]
    app = build_app(mode="replay", sim_config=SIM, data_dir=str(path))
    with TestClient(app) as client:
        with client.websocket_connect("/session") as ws:
            ws.send_json({"type": "control", "cmd": "start", "demo_id": demo.demo_id})
            msg = ws.receive_json()
            assert msg["step"] == 0
            assert msg["demo_steps"] == demo.steps
            assert np.array_equal(_decode(msg["image_left"]), demo.images[0, 0])
            for t in range(1, demo.steps):
                ws.send_json({"type": "action", "ax": 0.5, "ay": 0.5, "az": 0.5})
                msg = ws.receive_json()
                assert msg["step"] == t
            assert msg["status"] == "success"
            # Paging past the end stays on the final frame.
            ws.send_json({"type": "action", "ax": 0.5, "ay": 0.5, "az": 0.5})
            assert ws.receive_json()["step"] == demo.steps - 1
            ws.send_json({"type": "control", "cmd": "reset"})
            assert ws.receive_json()["step"] == 0


def test_replay_serves_attention_with_checkpoint(replay_assets):
    path, ckpt, _ = replay_assets
    app = build_app(mode="replay", sim_config=SIM, data_dir=str(path), checkpoint=str(ckpt))
    with TestClient(app) as client:
        with client.websocket_connect("/session") as ws:
            ws.send_json({"type": "control", "cmd": "start"})
            msg = ws.receive_json()
            report = msg["attention"]
            assert set(report) >= {"proportions", "vision_heatmaps", "tactile_weights"}
            assert sum(report["proportions"].values()) == pytest.approx(1.0, abs=1e-6)
            assert len(report["vision_heatmaps"]) == 2
            assert len(report["tactile_weights"]) == 32


def test_replay_rejects_unknown_demo_and_save(replay_assets):
    path, _, _ = replay_assets
    app = build_app(mode="replay", sim_config=SIM, data_dir=str(path))
    with TestClient(app) as client:
        with client.websocket_connect("/session") as ws:
            ws.send_json({"type": "control", "cmd": "start", "demo_id": "nope"})
            assert ws.receive_json()["type"] == "error"
            ws.send_json({"type": "control", "cmd": "save"})
            assert ws.receive_json()["type"] == "error"


# -------------------------------------------------------------------- misc


def test_build_app_validation(tmp_path):
    with pytest.raises(ValueError, match="mode"):
        build_app(mode="dream")
    with pytest.raises(ValueError, match="dataset"):
        build_app(mode="replay")


def test_static_assets_served(tmp_path):
    (tmp_path / "index.html").write_text("<!doctype html><title>ui</title>")
    app = build_app(mode="teleop", sim_config=SIM, static_dir=str(tmp_path))
    with TestClient(app) as client:
        response = client.get("/")
        assert response.status_code == 200
        assert "ui" in response.text
