"""WebSocket steering service.

One session per connection, speaking JSON text messages:

  server -> client: {"type":"hello","proto":1}
                    {"type":"scene","grid":{dims,origin,cell_size,data_b64}}
                    {"type":"frames","frame_index":first,"data":[[J x 3]...]}
                    {"type":"status","status":...,"frames_emitted":n}
                    {"type":"error","code":...,"msg":...}
  client -> server: {"type":"hello","proto":1}   (optional; mismatch closes)
                    {"type":"start","seed":s,"start_xy":[x,y]}
                    {"type":"set_goal","xy":[x,y]}
                    {"type":"set_goal","hand":"left"|"right","xyz":[x,y,z]}
                    {"type":"set_action","action":id,"duration_frames":n}
                    {"type":"stop"}

Sampling runs in the default thread executor so concurrent sessions do not
stall each other; a fresh control message between chunks aborts whatever was
still pending, matching the session contract.
"""

from __future__ import annotations

import asyncio
import base64
import json

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import action as act
from . import control as ctl
from . import kinematics as kin
from . import scene as sc
from .config import ProjectConfig
from .denoiser import load_checkpoint
from .errors import MotionForgeError
from . import diffusion as dif

PROTOCOL_VERSION = 1


def scene_message(grid: sc.OccupancyGrid) -> dict:
    return {"type": "scene", "grid": {
        "dims": list(grid.dims),
        "origin": [float(x) for x in grid.origin],
        "cell_size": float(grid.cell_size),
        "data_b64": base64.b64encode(
            grid.data.astype(np.uint8).tobytes(order="C")).decode("ascii"),
    }}


def status_message(session: ctl.Session) -> dict:
    return {"type": "status", "status": session.status,
            "frames_emitted": len(session.buffer)}


def error_message(code: str, msg: str) -> dict:
    return {"type": "error", "code": code, "msg": msg}


def frames_message(session: ctl.Session, chunk: np.ndarray) -> dict:
    first = len(session.buffer) - len(chunk)
    return {"type": "frames", "frame_index": first,
            "data": np.asarray(chunk).tolist()}


class SessionResources:
    """Read-only model and scene shared by every connection."""

    def __init__(self, grid, denoiser, schedule, skeleton, scene_encoder,
                 action_encoder, session_config: ctl.SessionConfig):
        self.grid = grid
        self.denoiser = denoiser
        self.schedule = schedule
        self.skeleton = skeleton
        self.scene_encoder = scene_encoder
        self.action_encoder = action_encoder
        self.session_config = session_config

    def new_session(self) -> ctl.Session:
        return ctl.Session(self.grid, self.denoiser, self.schedule,
                           self.skeleton, self.scene_encoder,
                           self.action_encoder, self.session_config)


def _event_for(message: dict):
    kind = message.get("type")
    if kind == "set_goal":
        if "hand" in message:
            return ctl.NewGoal(hand=message["hand"],
                               xyz=tuple(message["xyz"]))
        return ctl.NewGoal(xy=tuple(message["xy"]))
    if kind == "set_action":
        return ctl.NewAction(int(message["action"]),
                             int(message["duration_frames"]))
    raise MotionForgeError(f"no event for message type {kind!r}")


def build_app(resources: SessionResources) -> FastAPI:
    app = FastAPI(title="motionforge steering service")

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        await websocket.send_json({"type": "hello", "proto": PROTOCOL_VERSION})
        session = resources.new_session()
        loop = asyncio.get_running_loop()
        inbox: asyncio.Queue = asyncio.Queue()

        async def reader():
            try:
                while True:
                    await inbox.put(await websocket.receive_text())
            except WebSocketDisconnect:
                await inbox.put(None)

        reader_task = asyncio.create_task(reader())
        try:
            while True:
                raw = await inbox.get()
                if raw is None:
                    break
                try:
                    message = json.loads(raw)
                    if not isinstance(message, dict) or "type" not in message:
                        raise ValueError("messages must be objects with a type")
                except ValueError as exc:
                    await websocket.send_json(
                        error_message("bad_message", str(exc)))
                    continue

                kind = message["type"]
                if kind == "hello":
                    if message.get("proto") != PROTOCOL_VERSION:
                        await websocket.close(code=1002)
                        break
                    continue
                if kind == "start":
                    session = resources.new_session()
                    start_xy = tuple(message.get("start_xy", (0.0, 0.0)))
                    session.start(start_xy, int(message.get("seed", 0)))
                    await websocket.send_json(scene_message(resources.grid))
                    await websocket.send_json(status_message(session))
                    continue
                if kind == "stop":
                    session._pending.clear()
                    session._subgoals.clear()
                    session._hand_goal = None
                    session.status = "idle"
                    await websocket.send_json(status_message(session))
                    continue

                try:
                    event = _event_for(message)
                except (MotionForgeError, KeyError, TypeError) as exc:
                    await websocket.send_json(
                        error_message("bad_message", str(exc)))
                    continue

                try:
                    chunk = await loop.run_in_executor(
                        None, session.step, event)
                except MotionForgeError as exc:
                    await websocket.send_json(
                        error_message(type(exc).__name__, str(exc)))
                    continue
                if len(chunk):
                    await websocket.send_json(frames_message(session, chunk))
                # keep emitting until idle, but yield to fresh control
                # messages between chunks (they abort pending frames)
                while inbox.empty() and session.status != "idle":
                    more = await loop.run_in_executor(
                        None, session.step, ctl.Tick())
                    if len(more) == 0:
                        break
                    await websocket.send_json(frames_message(session, more))
                await websocket.send_json(status_message(session))
        except WebSocketDisconnect:
            pass
        finally:
            reader_task.cancel()

    return app


def build_app_from_config(cfg: ProjectConfig, base_dir: str) -> FastAPI:
    grid_path = cfg.resolve("grid", base_dir)
    ckpt_path = cfg.resolve("checkpoint", base_dir)
    skel_path = cfg.resolve("skeleton", base_dir)
    grid = sc.load_grid(grid_path)
    denoiser, meta = load_checkpoint(ckpt_path)
    schedule = dif.make_schedule(denoiser.config.timesteps,
                                 *denoiser.config.betas())
    skeleton = kin.load_skeleton(skel_path) if skel_path \
        else kin.default_skeleton()
    scene_enc = sc.SceneEncoder(
        token_dim=cfg.scene.patch_side ** 2 * cfg.scene.local_dims[2],
        width=denoiser.config.width,
        seed=int(meta.get("scene_encoder_seed", 2024)))
    action_enc = act.ActionEncoder(
        cfg.action.n_actions, width=denoiser.config.width,
        seed=int(meta.get("action_encoder_seed", 4096)))
    session_cfg = ctl.SessionConfig(
        episode_frames=cfg.diffusion.episode_frames,
        transition_frames=cfg.diffusion.transition_frames,
        n_actions=cfg.action.n_actions,
        local_dims=cfg.scene.local_dims,
        local_cell=cfg.scene.local_cell,
        patch_side=cfg.scene.patch_side)
    resources = SessionResources(grid, denoiser, schedule, skeleton,
                                 scene_enc, action_enc, session_cfg)
    return build_app(resources)
