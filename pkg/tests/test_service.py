import numpy as np
import pytest
from fastapi.testclient import TestClient

from motionforge import action as act
from motionforge import control as ctl
from motionforge import diffusion as dif
from motionforge import kinematics as kin
from motionforge import scene as sc
from motionforge import service as svc


class ZeroDenoiser:
    def forward(self, x_t, t, scene_emb, action_emb):
        return np.zeros_like(x_t)


@pytest.fixture(scope="module")
def client():
    grid = sc.OccupancyGrid((20, 20, 9), (0.0, 0.0, 0.0), 0.5,
                            np.ones((20, 20, 9), dtype=bool))
    session_cfg = ctl.SessionConfig(local_dims=(8, 8, 9), local_cell=0.2,
                                    patch_side=4, n_actions=4)
    resources = svc.SessionResources(
        grid, ZeroDenoiser(), dif.default_schedule(6), kin.default_skeleton(),
        sc.SceneEncoder(token_dim=4 * 4 * 9, width=16, layers=1, heads=2,
                        ffn=32),
        act.ActionEncoder(4, width=16, layers=1, heads=2, ffn=32),
        session_cfg)
    app = svc.build_app(resources)
    with TestClient(app) as c:
        yield c


def collect_until_status(ws, limit=200):
    """Messages up to and including the next status message."""
    out = []
    for _ in range(limit):
        msg = ws.receive_json()
        out.append(msg)
        if msg["type"] == "status":
            return out
    raise AssertionError("no status message arrived")


def test_hello_and_start_sends_scene(client):
    with client.websocket_connect("/ws") as ws:
        hello = ws.receive_json()
        assert hello == {"type": "hello", "proto": 1}
        ws.send_json({"type": "start", "seed": 1, "start_xy": [5.0, 5.0]})
        scene_msg = ws.receive_json()
        assert scene_msg["type"] == "scene"
        assert scene_msg["grid"]["dims"] == [20, 20, 9]
        status = ws.receive_json()
        assert status["type"] == "status"
        assert status["status"] == "idle"


def test_set_goal_streams_ordered_frames(client):
    with client.websocket_connect("/ws") as ws:
        ws.receive_json()
        ws.send_json({"type": "start", "seed": 2, "start_xy": [5.0, 5.0]})
        collect_until_status(ws)
        ws.send_json({"type": "set_goal", "xy": [5.8, 5.0]})
        msgs = collect_until_status(ws)
        frames = [m for m in msgs if m["type"] == "frames"]
        assert frames, "expected streamed frames"
        # strictly increasing, gap-free frame indexing
        expect = 0
        for m in frames:
            assert m["frame_index"] == expect
            expect += len(m["data"])
        # chunked emission of the first episode: cumulative 2, 6, 14, 16
        sizes = [len(m["data"]) for m in frames[:4]]
        assert np.cumsum(sizes).tolist() == [2, 6, 14, 16]
        # every frame is J x 3
        assert all(len(row) == 24 and len(row[0]) == 3
                   for m in frames for row in m["data"])


def test_malformed_message_keeps_session_alive(client):
    with client.websocket_connect("/ws") as ws:
        ws.receive_json()
        ws.send_text("this is not json")
        err = ws.receive_json()
        assert err["type"] == "error" and err["code"] == "bad_message"
        ws.send_json({"type": "mystery"})
        err = ws.receive_json()
        assert err["type"] == "error"
        # still alive: a normal start works
        ws.send_json({"type": "start", "seed": 0, "start_xy": [5.0, 5.0]})
        assert ws.receive_json()["type"] == "scene"


def test_event_before_start_reports_error(client):
    with client.websocket_connect("/ws") as ws:
        ws.receive_json()
        ws.send_json({"type": "set_goal", "xy": [1.0, 1.0]})
        err = ws.receive_json()
        assert err["type"] == "error" and err["code"] == "InvalidState"


def test_protocol_mismatch_closes(client):
    with client.websocket_connect("/ws") as ws:
        ws.receive_json()
        ws.send_json({"type": "hello", "proto": 99})
        with pytest.raises(Exception):
            for _ in range(4):
                ws.receive_json()


def test_set_action_mid_stream_extends_timeline(client):
    with client.websocket_connect("/ws") as ws:
        ws.receive_json()
        ws.send_json({"type": "start", "seed": 3, "start_xy": [5.0, 5.0]})
        collect_until_status(ws)
        ws.send_json({"type": "set_goal", "xy": [5.8, 5.0]})
        msgs = collect_until_status(ws)
        emitted = sum(len(m["data"]) for m in msgs if m["type"] == "frames")
        ws.send_json({"type": "set_action", "action": 2,
                      "duration_frames": 8})
        msgs = collect_until_status(ws)
        frames = [m for m in msgs if m["type"] == "frames"]
        assert frames
        assert frames[0]["frame_index"] == emitted  # no gaps, no re-emission
        # a rebuilt episode emits 14 new frames in chunks 2, 4, 8
        assert [len(m["data"]) for m in frames] == [2, 4, 8]


def test_stop_goes_idle(client):
    with client.websocket_connect("/ws") as ws:
        ws.receive_json()
        ws.send_json({"type": "start", "seed": 4, "start_xy": [5.0, 5.0]})
        collect_until_status(ws)
        ws.send_json({"type": "stop"})
        status = ws.receive_json()
        assert status["type"] == "status" and status["status"] == "idle"


def test_two_sessions_isolated_and_differ(client):
    with client.websocket_connect("/ws") as a, \
            client.websocket_connect("/ws") as b:
        a.receive_json()
        b.receive_json()
        a.send_json({"type": "start", "seed": 10, "start_xy": [5.0, 5.0]})
        b.send_json({"type": "start", "seed": 11, "start_xy": [5.0, 5.0]})
        collect_until_status(a)
        collect_until_status(b)
        a.send_json({"type": "set_goal", "xy": [6.0, 5.0]})
        b.send_json({"type": "set_goal", "xy": [6.0, 5.0]})
        frames_a = [m for m in collect_until_status(a) if m["type"] == "frames"]
        frames_b = [m for m in collect_until_status(b) if m["type"] == "frames"]
        assert frames_a and frames_b
        va = np.concatenate([np.asarray(m["data"]) for m in frames_a])
        vb = np.concatenate([np.asarray(m["data"]) for m in frames_b])
        assert va.shape == vb.shape
        assert not np.array_equal(va, vb)  # different seeds, different noise


def test_hand_goal_message(client):
    with client.websocket_connect("/ws") as ws:
        ws.receive_json()
        ws.send_json({"type": "start", "seed": 5, "start_xy": [5.0, 5.0]})
        collect_until_status(ws)
        ws.send_json({"type": "set_goal", "hand": "left",
                      "xyz": [5.2, 5.1, 1.1]})
        msgs = collect_until_status(ws)
        frames = [m for m in msgs if m["type"] == "frames"]
        last = np.asarray(frames[-1]["data"][-1])
        assert np.allclose(last[ctl.HAND_JOINTS["left"]], [5.2, 5.1, 1.1])


def test_build_app_from_config(tmp_path):
    from motionforge import config as cfgmod
    from motionforge.datagen import train_corridor_model
    from motionforge.denoiser import save_checkpoint

    grid = sc.OccupancyGrid((10, 10, 18), (0.0, 0.0, 0.0), 0.1,
                            np.ones((10, 10, 18), dtype=bool))
    sc.save_grid(grid, str(tmp_path / "scene.grid"))
    toy = train_corridor_model(n_clips=2, steps=2, clip_frames=20, seed=0)
    save_checkpoint(toy.denoiser, str(tmp_path / "model.ckpt.json"),
                    {"n_actions": 12})
    import json
    (tmp_path / "config.json").write_text(json.dumps({
        "grid": "scene.grid",
        "checkpoint": "model.ckpt.json",
        "scene": {"local_dims": [32, 32, 18], "local_cell": 0.1,
                  "patch_side": 8},
    }))
    cfg, base = cfgmod.load_config(str(tmp_path / "config.json"))
    app = svc.build_app_from_config(cfg, base)
    with TestClient(app) as c:
        with c.websocket_connect("/ws") as ws:
            assert ws.receive_json()["type"] == "hello"
            ws.send_json({"type": "start", "seed": 0, "start_xy": [0.5, 0.5]})
            assert ws.receive_json()["type"] == "scene"
