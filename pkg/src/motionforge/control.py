"""Goal segmentation, incremental chunk scheduling, and the live session.

A goal click becomes a sequence of per-episode subgoals along an A* path
over the standing-height projection of the occupancy grid. A session turns
control events into sampled episodes: a fresh control signal aborts pending
frames, rebuilds the episode from the last k emitted frames, and emits the
new episode in exponentially growing chunks (2, 4, 8, ...) so the first
frames are available immediately; undisturbed episodes are emitted whole.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from . import action as act
from . import diffusion as dif
from . import scene as sc
from .errors import InvalidInput, InvalidState, Unreachable

SQRT2 = float(np.sqrt(2.0))

# 8-connected neighborhood with octile step costs
_STEPS = [(dx, dy, SQRT2 if dx and dy else 1.0)
          for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy]


def standing_traversable(grid: sc.OccupancyGrid) -> np.ndarray:
    """(Nx, Ny) map: column is walkable iff every cell whose center lies in
    the standing band [0, 1.8] m is reachable."""
    nz = grid.dims[2]
    z = grid.origin[2] + (np.arange(nz) + 0.5) * grid.cell_size
    band = (z >= 0.0) & (z <= sc.VERTICAL_EXTENT)
    if not band.any():
        return np.ones(grid.dims[:2], dtype=bool)
    return grid.data[:, :, band].all(axis=2)


def octile(a, b) -> float:
    dx = abs(a[0] - b[0])
    dy = abs(a[1] - b[1])
    return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)


def astar_grid(traversable: np.ndarray, start: tuple[int, int],
               goal: tuple[int, int]):
    """(cell path, cost in steps) of a shortest 8-connected path, or None."""
    nx, ny = traversable.shape
    if not traversable[start] or not traversable[goal]:
        return None
    if start == goal:
        return [start], 0.0
    open_heap = [(octile(start, goal), 0.0, start)]
    g = {start: 0.0}
    came: dict = {}
    closed = set()
    while open_heap:
        _, gc, cur = heapq.heappop(open_heap)
        if cur in closed:
            continue
        if cur == goal:
            path = [cur]
            while cur in came:
                cur = came[cur]
                path.append(cur)
            return path[::-1], gc
        closed.add(cur)
        for dx, dy, w in _STEPS:
            nxt = (cur[0] + dx, cur[1] + dy)
            if not (0 <= nxt[0] < nx and 0 <= nxt[1] < ny):
                continue
            if not traversable[nxt]:
                continue
            cand = gc + w
            if cand < g.get(nxt, np.inf):
                g[nxt] = cand
                came[nxt] = cur
                heapq.heappush(open_heap, (cand + octile(nxt, goal), cand, nxt))
    return None


def plan_subgoals(grid: sc.OccupancyGrid, start_xy, goal_xy,
                  spacing: float = 1.0) -> list[np.ndarray]:
    """One subgoal per episode along the shortest standing-height path.

    Subgoals are spaced at most ``spacing`` meters apart along the path; the
    final subgoal is the goal exactly. Raises Unreachable when no path
    exists through walkable cells.
    """
    start_xy = np.asarray(start_xy, dtype=np.float64)
    goal_xy = np.asarray(goal_xy, dtype=np.float64)
    walk = standing_traversable(grid)
    origin = grid.origin.astype(np.float64)[:2]
    cell = grid.cell_size

    def to_cell(p):
        idx = np.floor((p - origin) / cell).astype(int)
        if not (0 <= idx[0] < walk.shape[0] and 0 <= idx[1] < walk.shape[1]):
            raise Unreachable(f"{p} is outside the scene grid")
        return (int(idx[0]), int(idx[1]))

    start_cell = to_cell(start_xy)
    goal_cell = to_cell(goal_xy)
    if not walk[start_cell]:
        raise Unreachable(f"start {start_xy} is not standing-reachable")
    if not walk[goal_cell]:
        raise Unreachable(f"goal {goal_xy} is not standing-reachable")
    if start_cell == goal_cell:
        return [goal_xy.copy()]

    found = astar_grid(walk, start_cell, goal_cell)
    if found is None:
        raise Unreachable(f"no path from {start_xy} to {goal_xy}")
    cells, _ = found
    pts = [start_xy] + [origin + (np.array(c) + 0.5) * cell
                        for c in cells[1:-1]] + [goal_xy]
    pts = np.asarray(pts)

    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    n = max(1, int(np.ceil(total / spacing - 1e-9)))
    targets = np.linspace(0.0, total, n + 1)[1:]
    subgoals = [np.array([np.interp(s, arc, pts[:, 0]),
                          np.interp(s, arc, pts[:, 1])]) for s in targets]
    subgoals[-1] = goal_xy.copy()
    return subgoals


# ---------------------------------------------------------------------------
# chunk schedule


@dataclass(frozen=True)
class ChunkSchedule:
    sizes: tuple[int, ...]

    def __post_init__(self):
        if not self.sizes or any(s <= 0 for s in self.sizes):
            raise InvalidInput("chunk sizes must be positive")

    @property
    def cumulative(self) -> tuple[int, ...]:
        out, total = [], 0
        for s in self.sizes:
            total += s
            out.append(total)
        return tuple(out)


def make_chunk_schedule(total: int) -> ChunkSchedule:
    """Doubling chunks starting at 2 (2, 4, 8, ...), last one truncated."""
    if total < 1:
        raise InvalidInput("need at least one frame")
    sizes = []
    size = 2
    remaining = total
    while remaining > 0:
        take = min(size, remaining)
        sizes.append(take)
        remaining -= take
        size *= 2
    return ChunkSchedule(tuple(sizes))


# ---------------------------------------------------------------------------
# session events


@dataclass(frozen=True)
class NewGoal:
    xy: tuple[float, float] | None = None
    hand: str | None = None          # "left" | "right"
    xyz: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class NewAction:
    action_id: int
    duration_frames: int


@dataclass(frozen=True)
class Tick:
    pass


@dataclass
class SessionConfig:
    episode_frames: int = 16
    transition_frames: int = 2
    n_actions: int = 12
    subgoal_spacing: float = 1.0
    local_dims: tuple[int, int, int] = (32, 32, 18)
    local_cell: float = 0.1
    patch_side: int = 8
    pelvis_height: float = 0.9


HAND_JOINTS = {"left": 22, "right": 23}


class Session:
    """Event-driven sampling session over one scene and one model.

    Frames are identified by their global index; each is emitted exactly
    once, in order. The last k emitted frames always seed the next episode.
    """

    def __init__(self, grid: sc.OccupancyGrid, denoiser, schedule,
                 skeleton, scene_encoder: sc.SceneEncoder,
                 action_encoder: act.ActionEncoder,
                 config: SessionConfig | None = None):
        self.grid = grid
        self.denoiser = denoiser
        self.schedule = schedule
        self.skeleton = skeleton
        self.scene_encoder = scene_encoder
        self.action_encoder = action_encoder
        self.config = config or SessionConfig()
        self.status = "idle"
        self._started = False
        self.buffer: list[np.ndarray] = []   # emitted frames, (J, 3) each
        self._pending: list[np.ndarray] = [] # sampled, not yet emitted
        self._subgoals: list[np.ndarray] = []
        self._hand_goal: dif.JointGoal | None = None
        self._segments: list[act.ActionSegment] = []
        self._transition: np.ndarray | None = None
        self._yaw = 0.0
        self.rng = np.random.default_rng(0)

    # -- lifecycle ----------------------------------------------------------

    def start(self, start_xy, seed: int = 0) -> None:
        from . import kinematics as kin

        cfg = self.config
        self.rng = np.random.default_rng(seed)
        pose = kin.Pose.rest(self.skeleton,
                             (start_xy[0], start_xy[1], cfg.pelvis_height))
        frame = kin.forward_kinematics(self.skeleton, pose)
        self._transition = np.tile(frame, (cfg.transition_frames, 1, 1))
        self._started = True
        self.status = "idle"

    # -- events -------------------------------------------------------------

    def step(self, event):
        """Apply one event; returns the frames emitted by it, (n, J, 3)."""
        if not self._started:
            raise InvalidState("session not started")
        if isinstance(event, NewGoal):
            return self._on_new_goal(event)
        if isinstance(event, NewAction):
            return self._on_new_action(event)
        if isinstance(event, Tick):
            return self._on_tick()
        raise InvalidInput(f"unknown event {event!r}")

    def _on_new_goal(self, event: NewGoal):
        self._pending.clear()
        if event.hand is not None:
            if event.hand not in HAND_JOINTS or event.xyz is None:
                raise InvalidInput("hand goal needs hand side and xyz")
            self._hand_goal = dif.JointGoal(HAND_JOINTS[event.hand],
                                            np.asarray(event.xyz, dtype=float))
            self._subgoals = []
        else:
            if event.xy is None:
                raise InvalidInput("navigation goal needs xy")
            self._hand_goal = None
            self._subgoals = plan_subgoals(self.grid, self._pelvis_xy(),
                                           np.asarray(event.xy, dtype=float),
                                           self.config.subgoal_spacing)
        return self._sample_next_episode(chunked=True)

    def _on_new_action(self, event: NewAction):
        if event.duration_frames < 1:
            raise InvalidInput("action duration must be positive")
        self._pending.clear()
        start = self._next_frame_index()
        self._segments.append(act.ActionSegment(
            event.action_id, start, start + event.duration_frames - 1))
        if not self._subgoals and self._hand_goal is None:
            # no spatial goal: hold position while the action plays out
            self._subgoals = [self._pelvis_xy()]
        return self._sample_next_episode(chunked=True)

    def _on_tick(self):
        if self._pending:
            chunk = self._pending.pop(0)
            self._emit(chunk)
            if not self._pending and not self._subgoals \
                    and self._hand_goal is None:
                self.status = "idle"
            return chunk
        if self._subgoals or self._hand_goal is not None:
            return self._sample_next_episode(chunked=False)
        self.status = "idle"
        return np.zeros((0, self.skeleton.joint_count, 3))

    # -- internals ----------------------------------------------------------

    def _pelvis_xy(self) -> np.ndarray:
        assert self._transition is not None
        return self._transition[-1, dif.PELVIS, :2].copy()

    def _next_frame_index(self) -> int:
        return len(self.buffer)

    def _emit(self, frames: np.ndarray) -> None:
        for f in frames:
            self.buffer.append(f)
        if len(self.buffer) >= self.config.transition_frames:
            k = self.config.transition_frames
            self._transition = np.stack(self.buffer[-k:])

    def _estimate_yaw(self) -> float:
        assert self._transition is not None
        v = self._transition[-1, dif.PELVIS, :2] - self._transition[0, dif.PELVIS, :2]
        if np.linalg.norm(v) > 1e-6:
            self._yaw = float(np.arctan2(v[1], v[0]))
        return self._yaw

    def _sample_next_episode(self, chunked: bool):
        cfg = self.config
        self.status = "sampling"
        if self._hand_goal is not None:
            subgoal: dif.NavigationGoal | dif.JointGoal = self._hand_goal
            self._hand_goal = None
            center = subgoal.xyz[:2]
        else:
            center = self._subgoals.pop(0)
            subgoal = dif.NavigationGoal(center)

        local = sc.query_local_grid(self.grid, center, self._estimate_yaw(),
                                    cfg.local_dims, cfg.local_cell)
        scene_emb = self.scene_encoder.encode(sc.patchify(local, cfg.patch_side))

        first_episode = len(self.buffer) == 0
        episode_start = 0 if first_episode \
            else len(self.buffer) - cfg.transition_frames
        track = act.add_progress_indicator(self._segments, cfg.episode_frames,
                                           cfg.n_actions,
                                           start_frame=episode_start)
        action_emb = self.action_encoder.encode(track)

        spec = dif.EpisodeSpec(cfg.episode_frames, self._transition, subgoal,
                               scene_emb, action_emb)
        episode = dif.sample_episode_recentered(self.denoiser, spec,
                                                self.schedule, self.rng)
        new = episode if first_episode else episode[cfg.transition_frames:]

        self.status = "streaming"
        if chunked:
            sizes = make_chunk_schedule(len(new)).sizes
            parts, at = [], 0
            for s in sizes:
                parts.append(new[at:at + s])
                at += s
            first = parts.pop(0)
            self._emit(first)
            self._pending = parts
            if not parts and not self._subgoals and self._hand_goal is None:
                self.status = "idle"
            return first
        self._emit(new)
        if not self._subgoals and self._hand_goal is None:
            self.status = "idle"
        return new


def session_step(session: Session, event):
    """(session, emitted frames) for one event."""
    return session, session.step(event)
