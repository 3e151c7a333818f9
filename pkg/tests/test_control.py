import heapq

import numpy as np
import pytest

from motionforge import action as act
from motionforge import control as ctl
from motionforge import diffusion as dif
from motionforge import kinematics as kin
from motionforge import scene as sc
from motionforge.errors import InvalidInput, InvalidState, Unreachable


def dijkstra_cost(traversable, start, goal):
    """Exhaustive uniform-cost search over the same 8-connected graph."""
    nx, ny = traversable.shape
    if not traversable[start] or not traversable[goal]:
        return None
    dist = {start: 0.0}
    heap = [(0.0, start)]
    done = set()
    while heap:
        d, cur = heapq.heappop(heap)
        if cur in done:
            continue
        if cur == goal:
            return d
        done.add(cur)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if not dx and not dy:
                    continue
                nxt = (cur[0] + dx, cur[1] + dy)
                if not (0 <= nxt[0] < nx and 0 <= nxt[1] < ny):
                    continue
                if not traversable[nxt]:
                    continue
                w = ctl.SQRT2 if dx and dy else 1.0
                if d + w < dist.get(nxt, np.inf):
                    dist[nxt] = d + w
                    heapq.heappush(heap, (d + w, nxt))
    return None


def empty_grid(size_m=10.0, cell=0.5):
    n = int(size_m / cell)
    return sc.OccupancyGrid((n, n, 4), (0.0, 0.0, 0.0), cell,
                            np.ones((n, n, 4), dtype=bool))


# ---------------------------------------------------------------------------
# planning


def test_astar_cost_matches_dijkstra_on_random_grids():
    rng = np.random.default_rng(0)
    for trial in range(30):
        n = int(rng.integers(8, 24))
        walk = rng.random((n, n)) > 0.3
        start = (int(rng.integers(n)), int(rng.integers(n)))
        goal = (int(rng.integers(n)), int(rng.integers(n)))
        oracle = dijkstra_cost(walk, start, goal)
        found = ctl.astar_grid(walk, start, goal)
        if oracle is None:
            assert found is None
        else:
            assert found is not None
            assert found[1] == pytest.approx(oracle, abs=1e-9)


def test_plan_degenerate_goal_equals_start():
    grid = empty_grid()
    subgoals = ctl.plan_subgoals(grid, (2.2, 2.2), (2.3, 2.2))
    assert len(subgoals) == 1
    assert np.allclose(subgoals[-1], (2.3, 2.2))


def test_plan_straight_corridor_colinear():
    grid = empty_grid()
    subgoals = ctl.plan_subgoals(grid, (1.0, 5.0), (6.0, 5.0), spacing=1.0)
    # euclidean length 5 m; the cell-center path may add up to ~a cell
    assert len(subgoals) in (5, 6)
    assert np.allclose(subgoals[-1], (6.0, 5.0))
    for g in subgoals:
        assert abs(g[1] - 5.0) < 0.5  # stays near the straight line
    xs = [g[0] for g in subgoals]
    assert all(b > a for a, b in zip(xs, xs[1:]))
    # consecutive spacing never exceeds the cap (within a cell of slack)
    pts = np.array([[1.0, 5.0]] + [list(g) for g in subgoals])
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    assert gaps.max() <= 1.0 + grid.cell_size


def test_plan_through_door():
    grid = empty_grid(10.0, 0.5)
    data = grid.data.copy()
    data[10, :, :] = False        # wall across y at x-cell 10
    data[10, 10, :] = True        # one-door gap
    grid = sc.OccupancyGrid(grid.dims, grid.origin, grid.cell_size, data)
    subgoals = ctl.plan_subgoals(grid, (2.2, 2.2), (8.2, 2.2))
    # the path must pass near the door cell center (5.25, 5.25)
    door = np.array([5.25, 5.25])
    assert min(np.linalg.norm(np.asarray(g) - door) for g in subgoals) < 1.0
    walk = ctl.standing_traversable(grid)
    start_cell = (4, 4)
    goal_cell = (16, 4)
    oracle = dijkstra_cost(walk, start_cell, goal_cell)
    found = ctl.astar_grid(walk, start_cell, goal_cell)
    assert found[1] == pytest.approx(oracle)


def test_plan_unreachable_raises():
    grid = empty_grid(10.0, 0.5)
    data = grid.data.copy()
    data[10, :, :] = False  # solid wall
    grid = sc.OccupancyGrid(grid.dims, grid.origin, grid.cell_size, data)
    with pytest.raises(Unreachable):
        ctl.plan_subgoals(grid, (2.2, 2.2), (8.2, 2.2))
    with pytest.raises(Unreachable):
        ctl.plan_subgoals(grid, (5.2, 2.2), (8.2, 2.2))  # start inside wall


def test_standing_traversable_uses_full_band():
    # obstacle at head height blocks the column even with free floor cells
    grid = sc.OccupancyGrid((4, 4, 6), (0, 0, 0), 0.4,
                            np.ones((4, 4, 6), dtype=bool))
    grid.data[2, 2, 3] = False  # z center 1.4 m
    walk = ctl.standing_traversable(grid)
    assert not walk[2, 2]
    assert walk[0, 0]


# ---------------------------------------------------------------------------
# chunk schedule


def test_chunk_schedule_16():
    assert ctl.make_chunk_schedule(16).sizes == (2, 4, 8, 2)


def test_chunk_schedule_2():
    assert ctl.make_chunk_schedule(2).sizes == (2,)


def test_chunk_schedule_6():
    assert ctl.make_chunk_schedule(6).sizes == (2, 4)


def test_chunk_schedule_odd():
    assert ctl.make_chunk_schedule(1).sizes == (1,)
    assert ctl.make_chunk_schedule(3).sizes == (2, 1)
    assert ctl.make_chunk_schedule(14).sizes == (2, 4, 8)


def test_chunk_schedule_cumulative():
    assert ctl.make_chunk_schedule(16).cumulative == (2, 6, 14, 16)


def test_chunk_schedule_rejects_zero():
    with pytest.raises(InvalidInput):
        ctl.make_chunk_schedule(0)


# ---------------------------------------------------------------------------
# session


class ZeroDenoiser:
    def forward(self, x_t, t, scene_emb, action_emb):
        return np.zeros_like(x_t)


def make_session(seed=0, start=(5.0, 5.0)):
    grid = empty_grid()
    cfg = ctl.SessionConfig(local_dims=(8, 8, 9), local_cell=0.2,
                            patch_side=4, n_actions=4)
    scene_enc = sc.SceneEncoder(token_dim=4 * 4 * 9, width=16, layers=1,
                                heads=2, ffn=32)
    action_enc = act.ActionEncoder(4, width=16, layers=1, heads=2, ffn=32)
    cfg16 = dif.default_schedule(6)
    session = ctl.Session(grid, ZeroDenoiser(), cfg16, kin.default_skeleton(),
                          scene_enc, action_enc, cfg)
    session.start(start, seed=seed)
    return session


def drain(session, max_ticks=100):
    frames = []
    for _ in range(max_ticks):
        out = session.step(ctl.Tick())
        if len(out) == 0:
            break
        frames.append(out)
    return frames


def test_session_requires_start():
    grid = empty_grid()
    cfg = ctl.SessionConfig()
    scene_enc = sc.SceneEncoder(token_dim=8 * 8 * 18, width=16, layers=1,
                                heads=2, ffn=32)
    action_enc = act.ActionEncoder(12, width=16, layers=1, heads=2, ffn=32)
    session = ctl.Session(grid, ZeroDenoiser(), dif.default_schedule(6),
                          kin.default_skeleton(), scene_enc, action_enc, cfg)
    with pytest.raises(InvalidState):
        session.step(ctl.Tick())


def test_session_first_goal_chunked_counts():
    session = make_session()
    first = session.step(ctl.NewGoal(xy=(5.6, 5.0)))
    # first episode covers all 16 frames; chunks 2, 4, 8, 2
    assert len(first) == 2
    emitted = [len(first)]
    for expected in (4, 8, 2):
        out = session.step(ctl.Tick())
        assert len(out) == expected
        emitted.append(len(out))
    assert np.cumsum(emitted).tolist() == [2, 6, 14, 16]
    assert len(session.buffer) == 16


def test_session_frames_emitted_exactly_once_in_order():
    session = make_session()
    session.step(ctl.NewGoal(xy=(7.2, 5.0)))
    drain(session)
    n = len(session.buffer)
    assert n >= 16
    # mid-stream goal change aborts pending frames but never re-emits
    session.step(ctl.NewGoal(xy=(5.0, 7.0)))
    drain(session)
    assert len(session.buffer) > n
    assert session.status == "idle"


def test_session_new_goal_transition_is_last_emitted_frames():
    session = make_session()
    session.step(ctl.NewGoal(xy=(6.4, 5.0)))
    drain(session)
    tail = np.stack(session.buffer[-2:])
    before = len(session.buffer)
    first_chunk = session.step(ctl.NewGoal(xy=(5.0, 6.4)))
    # new episode's transition equals the last two emitted frames bit-exactly,
    # and only frames after the transition are emitted
    assert np.array_equal(np.stack(session._transition), tail) or \
        np.array_equal(np.stack(session.buffer[before - 2:before]), tail)
    assert len(first_chunk) == 2  # chunk schedule over 14 new frames


def test_session_mid_stream_chunks_cover_14_new_frames():
    session = make_session()
    session.step(ctl.NewGoal(xy=(7.2, 5.0)))
    drain(session)
    n0 = len(session.buffer)
    sizes = [len(session.step(ctl.NewGoal(xy=(5.0, 7.2))))]
    for _ in range(2):
        sizes.append(len(session.step(ctl.Tick())))
    assert sizes == [2, 4, 8]
    assert len(session.buffer) - n0 == 14


def test_session_tick_without_signal_emits_whole_episodes():
    session = make_session()
    session.step(ctl.NewGoal(xy=(8.0, 5.0)))  # several subgoals away
    for _ in range(10):
        session.step(ctl.Tick())
        if session._pending == [] and session._subgoals:
            break
    n0 = len(session.buffer)
    out = session.step(ctl.Tick())  # continuation episode: whole at once
    assert len(out) == 14


def test_session_action_event_plays_in_place():
    session = make_session()
    out = session.step(ctl.NewAction(action_id=1, duration_frames=10))
    assert len(out) == 2  # chunked emission starts immediately
    assert session._segments[0].action_id == 1
    drain(session)
    assert session.status == "idle"
    assert len(session.buffer) == 16


def test_session_hand_goal_pins_hand_joint():
    session = make_session()
    target = (5.2, 5.1, 1.1)
    session.step(ctl.NewGoal(hand="left", xyz=target))
    drain(session)
    last = session.buffer[-1]
    assert np.allclose(last[ctl.HAND_JOINTS["left"]], target)


def test_session_deterministic_for_seed():
    a = make_session(seed=7)
    b = make_session(seed=7)
    a.step(ctl.NewGoal(xy=(6.0, 5.4)))
    b.step(ctl.NewGoal(xy=(6.0, 5.4)))
    drain(a)
    drain(b)
    assert len(a.buffer) == len(b.buffer)
    assert all(np.array_equal(x, y) for x, y in zip(a.buffer, b.buffer))


def test_session_step_wrapper():
    session = make_session()
    s2, frames = ctl.session_step(session, ctl.NewGoal(xy=(5.6, 5.0)))
    assert s2 is session
    assert len(frames) == 2
