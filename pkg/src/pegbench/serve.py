"""WebSocket session endpoint backing the browser teleoperation client.

One interactive session at a time; messages are handled strictly in arrival
order. Teleop mode drives a live episode and stores saved demonstrations in
the standard dataset format; replay mode pages through a stored
demonstration and, when a checkpoint is loaded, attaches the policy's
attention report to every frame.

Protocol (JSON text frames):
  server -> client:
    {type:"obs", step, image_left, image_right, ft_window, proprio, status,
     attention?, demo_steps?}     images are base64 of raw RGB bytes
    {type:"saved", demo_id}       ack for a save control
    {type:"discarded"}            ack for a discard control
    {type:"error", error}         unknown/invalid messages
  client -> server:
    {type:"action", ax, ay, az}   each answered by exactly one obs
    {type:"control", cmd: start|reset|save|discard, spec?, seed?, demo_id?}
"""

from __future__ import annotations

import base64
import logging
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from starlette.staticfiles import StaticFiles

from . import dataset as ds
from . import sensors, simcore
from .model import MASK_PRESETS, VisuotactilePolicy
from .rollout import noise_rng_for
from .simcore import SimConfig, init_episode
from .variations import VariationSpec

log = logging.getLogger(__name__)


def _encode_image(img: np.ndarray) -> str:
    return base64.b64encode(img.tobytes()).decode("ascii")


def _status(state) -> str:
    if state.success:
        return "success"
    if state.failure is not None:
        return "failed"
    return "running"


class LiveEpisode:
    """Interactive episode mirroring the batch rollout driver step for step,
    so a saved teleop demonstration replays bit-exactly."""

    def __init__(self, seed: int, spec: VariationSpec, config: SimConfig):
        self.seed = seed
        self.spec = spec
        self.config = config
        self.state = init_episode(seed, spec, config)
        self.initial_offset = (
            float(self.state.lateral_offset[0]),
            float(self.state.lateral_offset[1]),
        )
        self.noise_rng = noise_rng_for(seed)
        self.history = sensors.ft_prefill(
            self.state.last_wrench_moving, self.state.last_wrench_compliant
        )
        self.observations: list[sensors.Observation] = []
        self.actions: list[np.ndarray] = []
        self.current_obs = self._observe()

    def _observe(self) -> sensors.Observation:
        return sensors.observe(
            self.state, self.history, self.spec, rng=self.noise_rng, config=self.config
        )

    def apply(self, action: np.ndarray) -> None:
        if self.state.done:
            return  # terminal state latches; the caller re-sends the last frame
        action = np.asarray(action, dtype=np.float64)
        action = action.astype(np.float32).astype(np.float64)
        self.observations.append(self.current_obs)
        self.actions.append(action.astype(np.float32))
        self.state, info = simcore.step(self.state, action, self.config)
        self.history = sensors.push_ft(
            self.history, info.wrench_moving, info.wrench_compliant
        )
        self.current_obs = self._observe()

    def obs_message(self) -> dict:
        obs = self.current_obs
        return {
            "type": "obs",
            "step": self.state.step,
            "image_left": _encode_image(obs.image_left),
            "image_right": _encode_image(obs.image_right),
            "ft_window": obs.ft.tolist(),
            "proprio": obs.proprio.tolist(),
            "status": _status(self.state),
        }

    def to_demo(self) -> ds.Demonstration:
        if not self.actions:
            raise ValueError("no steps recorded yet")
        return ds.Demonstration(
            demo_id=f"teleop-{self.seed:05d}",
            seed=self.seed,
            spec=self.spec,
            initial_offset=self.initial_offset,
            source="teleop",
            images=np.stack(
                [np.stack([o.image_left, o.image_right]) for o in self.observations]
            ),
            ft=np.stack([o.ft for o in self.observations]),
            proprio=np.stack([o.proprio for o in self.observations]),
            actions=np.stack(self.actions),
            success=self.state.success,
        )


class ReplayCursor:
    """Pages through a stored demonstration one frame per action message."""

    def __init__(self, demo: ds.Demonstration, model, mask):
        self.demo = demo
        self.model = model
        self.mask = mask
        self.cursor = 0

    def advance(self) -> None:
        if self.cursor < self.demo.steps - 1:
            self.cursor += 1

    def obs_message(self) -> dict:
        obs = self.demo.observation(self.cursor)
        at_end = self.cursor >= self.demo.steps - 1
        status = ("success" if self.demo.success else "failed") if at_end else "running"
        message = {
            "type": "obs",
            "step": self.cursor,
            "image_left": _encode_image(obs.image_left),
            "image_right": _encode_image(obs.image_right),
            "ft_window": obs.ft.tolist(),
            "proprio": obs.proprio.tolist(),
            "status": status,
            "demo_steps": self.demo.steps,
        }
        if self.model is not None:
            _, report = self.model.act_with_attention(obs, self.mask)
            message["attention"] = report
        return message


def _append_demo(data_dir: Path, demo: ds.Demonstration) -> None:
    if (data_dir / "manifest.json").is_file():
        merged = ds.merge(ds.load(data_dir), ds.Dataset([demo]))
    else:
        merged = ds.Dataset([demo])
    ds.save(merged, data_dir)


class Session:
    """Per-connection protocol state machine; handle() is pure request->reply."""

    def __init__(
        self,
        mode: str,
        config: SimConfig,
        model: VisuotactilePolicy | None,
        data_dir: str | None,
        start_seed: int = 0,
    ):
        self.mode = mode
        self.config = config
        self.model = model
        self.mask = MASK_PRESETS["full"]
        self.data_dir = data_dir
        self.next_seed = start_seed
        self.episode: LiveEpisode | None = None
        self.replay: ReplayCursor | None = None

    def handle(self, message) -> dict:
        if not isinstance(message, dict) or "type" not in message:
            return {"type": "error", "error": "message needs a type"}
        kind = message["type"]
        if kind == "action":
            return self._action(message)
        if kind == "control":
            return self._control(message)
        return {"type": "error", "error": f"unknown message type {kind!r}"}

    # ------------------------------------------------------------- actions

    def _action(self, message) -> dict:
        try:
            action = np.array(
                [float(message["ax"]), float(message["ay"]), float(message["az"])]
            )
        except (KeyError, TypeError, ValueError):
            return {"type": "error", "error": "action needs numeric ax, ay, az"}
        if self.mode == "replay":
            if self.replay is None:
                return {"type": "error", "error": "no demo started"}
            self.replay.advance()
            return self.replay.obs_message()
        if self.episode is None:
            return {"type": "error", "error": "no episode started"}
        action = np.clip(action, 0.0, 1.0)[: self.config.action_dims]
        self.episode.apply(action)
        return self.episode.obs_message()

    # ------------------------------------------------------------ controls

    def _control(self, message) -> dict:
        cmd = message.get("cmd")
        if cmd == "start":
            return self._start(message)
        if cmd == "reset":
            return self._reset()
        if cmd == "save":
            return self._save()
        if cmd == "discard":
            self.episode = None
            self.replay = None
            return {"type": "discarded"}
        return {"type": "error", "error": f"unknown control cmd {cmd!r}"}

    def _start(self, message) -> dict:
        if self.mode == "replay":
            try:
                data = ds.load(self.data_dir)
            except ds.FormatError as exc:
                return {"type": "error", "error": str(exc)}
            if len(data) == 0:
                return {"type": "error", "error": "dataset is empty"}
            demo_id = message.get("demo_id", data.demos[0].demo_id)
            by_id = {d.demo_id: d for d in data}
            if demo_id not in by_id:
                return {"type": "error", "error": f"unknown demo {demo_id!r}"}
            self.replay = ReplayCursor(by_id[demo_id], self.model, self.mask)
            return self.replay.obs_message()
        seed = message.get("seed")
        if seed is None:
            seed = self.next_seed
            self.next_seed += 1
        spec_json = message.get("spec")
        try:
            spec = VariationSpec.from_json(spec_json) if spec_json else VariationSpec()
        except (KeyError, ValueError) as exc:
            return {"type": "error", "error": f"bad spec: {exc}"}
        self.episode = LiveEpisode(int(seed), spec, self.config)
        return self.episode.obs_message()

    def _reset(self) -> dict:
        if self.mode == "replay":
            if self.replay is None:
                return {"type": "error", "error": "no demo started"}
            self.replay.cursor = 0
            return self.replay.obs_message()
        if self.episode is None:
            return {"type": "error", "error": "no episode started"}
        self.episode = LiveEpisode(self.episode.seed, self.episode.spec, self.config)
        return self.episode.obs_message()

    def _save(self) -> dict:
        if self.mode != "teleop":
            return {"type": "error", "error": "save is a teleop-mode control"}
        if self.data_dir is None:
            return {"type": "error", "error": "server started without --data"}
        if self.episode is None or not self.episode.actions:
            return {"type": "error", "error": "nothing to save yet"}
        demo = self.episode.to_demo()
        _append_demo(Path(self.data_dir), demo)
        log.info("saved %s (%d steps) -> %s", demo.demo_id, demo.steps, self.data_dir)
        self.episode = None
        return {"type": "saved", "demo_id": demo.demo_id}


def build_app(
    mode: str = "teleop",
    sim_config: SimConfig | None = None,
    checkpoint: str | None = None,
    data_dir: str | None = None,
    static_dir: str | None = None,
) -> FastAPI:
    if mode not in ("teleop", "replay"):
        raise ValueError(f"unknown serve mode {mode!r}")
    if mode == "replay" and data_dir is None:
        raise ValueError("replay mode needs a dataset directory")
    config = sim_config or SimConfig()
    model = VisuotactilePolicy.load(checkpoint)[0] if checkpoint else None

    app = FastAPI()
    app.state.busy = False
    app.state.next_seed = 0

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket):
        await ws.accept()
        if app.state.busy:
            await ws.send_json({"type": "error", "error": "another session is active"})
            await ws.close()
            return
        app.state.busy = True
        session = Session(mode, config, model, data_dir, start_seed=app.state.next_seed)
        try:
            while True:
                try:
                    message = await ws.receive_json()
                except (ValueError, KeyError):
                    await ws.send_json({"type": "error", "error": "frames must be JSON text"})
                    continue
                await ws.send_json(session.handle(message))
        except WebSocketDisconnect:
            pass  # connection loss discards any unsaved episode
        finally:
            app.state.next_seed = session.next_seed  # fresh teleop seeds after reconnect
            app.state.busy = False

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
