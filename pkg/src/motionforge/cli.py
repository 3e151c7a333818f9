"""Command-line interface.

Subcommands: voxelize, train, sample, generate, augment, annotate, stats,
camera-track, serve. Outputs are written atomically (temp file + rename).
Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import action as act
from . import augment as aug
from . import camera as cam
from . import datagen
from . import diffusion as dif
from . import interact as ia
from . import kinematics as kin
from . import mesh as mm
from . import scene as sc
from .config import atomic_path, load_config
from .denoiser import load_checkpoint, save_checkpoint
from .errors import MotionForgeError

USAGE_ERROR = 1
DATA_ERROR = 2


def _parse_vec(text: str, n: int) -> np.ndarray:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
    return np.asarray(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionforge",
        description="Scene-aware human motion synthesis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="rasterize an OBJ scene into a grid")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bounds", required=True,
                   help="x0,y0,z0,x1,y1,z1 in meters")
    p.add_argument("--cell", type=float, default=0.1)

    p = sub.add_parser("train", help="train the desk-scale model on the "
                                     "synthetic corridor corpus")
    p.add_argument("--out", required=True, help="checkpoint manifest path")
    p.add_argument("--clips", type=int, default=200)
    p.add_argument("--steps", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--minutes", type=float, default=18.0,
                   help="wall-clock training budget")

    p = sub.add_parser("sample", help="sample one episode toward a goal")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--goal", required=True, help="x,y pelvis target")
    p.add_argument("--start", default="0,0", help="x,y starting position")
    p.add_argument("--grid", default=None, help="scene grid (default: empty)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("generate", help="long-form generation over subgoals")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subgoals", required=True,
                   help='JSON file {"subgoals": [[x, y], ...]}')
    p.add_argument("--out", required=True)
    p.add_argument("--start", default="0,0")
    p.add_argument("--grid", default=None)
    p.add_argument("--k", type=int, default=None,
                   help="transition frame count (default: checkpoint meta)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("augment", help="retarget a motion to moved contacts")
    p.add_argument("--motion", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--window", type=int, default=aug.DEFAULT_WINDOW)
    p.add_argument("--out", required=True)
    p.add_argument("--skeleton", default=None)

    p = sub.add_parser("annotate", help="per-vertex contact flags")
    p.add_argument("--motion", required=True)
    p.add_argument("--object", required=True, help="object OBJ mesh")
    p.add_argument("--track", default=None, help="object pose track JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--skeleton", default=None)
    p.add_argument("--threshold", type=float, default=0.02)

    p = sub.add_parser("stats", help="penetration statistics against a scene")
    p.add_argument("--motion", required=True)
    p.add_argument("--scene", required=True, help="scene OBJ mesh")
    p.add_argument("--out", required=True)
    p.add_argument("--skeleton", default=None)

    p = sub.add_parser("camera-track", help="adaptive camera path")
    p.add_argument("--motion", required=True)
    p.add_argument("--scene", default=None, help="scene OBJ mesh")
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="run the streaming steering service")
    p.add_argument("--config", default=None,
                   help="project config (or MOTIONFORGE_CONFIG)")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    return parser


def _load_skeleton(path: str | None) -> kin.Skeleton:
    return kin.load_skeleton(path) if path else kin.default_skeleton()


def _restore_model(checkpoint_path: str):
    """(denoiser, schedule, scene encoder, action encoder, meta)."""
    denoiser, meta = load_checkpoint(checkpoint_path)
    schedule = dif.make_schedule(denoiser.config.timesteps,
                                 *denoiser.config.betas())
    scene_enc = sc.SceneEncoder(
        token_dim=int(meta.get("scene_token_dim", 8 * 8 * 18)),
        width=denoiser.config.width,
        seed=int(meta.get("scene_encoder_seed", 2024)))
    action_enc = act.ActionEncoder(
        int(meta.get("n_actions", 12)), width=denoiser.config.width,
        seed=int(meta.get("action_encoder_seed", 4096)))
    return denoiser, schedule, scene_enc, action_enc, meta


def _empty_grid() -> sc.OccupancyGrid:
    return sc.OccupancyGrid((100, 100, 18), (-5.0, -5.0, 0.0), 0.1,
                            np.ones((100, 100, 18), dtype=bool))


def _episode_spec_for(goal_xy, transition, grid, scene_enc, action_enc, meta):
    lf = int(meta.get("episode_frames", 16))
    local = sc.query_local_grid(grid, goal_xy, 0.0)
    scene_emb = scene_enc.encode(sc.patchify(local, 8))
    track = act.add_progress_indicator([], lf, int(meta.get("n_actions", 12)))
    return dif.EpisodeSpec(lf, transition, dif.NavigationGoal(goal_xy),
                           scene_emb, action_enc.encode(track))


def _rest_transition(skeleton, start_xy, k):
    pose = kin.Pose.rest(skeleton, (start_xy[0], start_xy[1], 0.9))
    frame = kin.forward_kinematics(skeleton, pose)
    return np.tile(frame, (k, 1, 1))


# ---------------------------------------------------------------------------
# subcommand bodies


def cmd_voxelize(args) -> int:
    b = _parse_vec(args.bounds, 6)
    mesh = mm.load_obj(args.mesh)
    grid = sc.voxelize(mesh, (b[:3], b[3:]), args.cell)
    with atomic_path(args.out) as tmp:
        sc.save_grid(grid, tmp)
    print(f"wrote {args.out}: dims {grid.dims}, "
          f"{int((~grid.data).sum())} blocked cells")
    return 0


def cmd_train(args) -> int:
    toy = datagen.train_corridor_model(
        n_clips=args.clips, steps=args.steps, seed=args.seed,
        time_budget_s=args.minutes * 60.0)
    meta = {
        "corpus_displacement": toy.corpus_displacement,
        "episode_frames": toy.config.max_frames,
        "transition_frames": 2,
        "n_actions": 12,
        "scene_encoder_seed": 2024,
        "action_encoder_seed": 4096,
        "scene_token_dim": 8 * 8 * 18,
        "train_seed": args.seed,
    }
    save_checkpoint(toy.denoiser, args.out, meta)
    print(f"wrote {args.out} (corpus displacement "
          f"{toy.corpus_displacement:.4f} m/frame)")
    return 0


def cmd_sample(args) -> int:
    denoiser, schedule, scene_enc, action_enc, meta = \
        _restore_model(args.checkpoint)
    grid = sc.load_grid(args.grid) if args.grid else _empty_grid()
    start = _parse_vec(args.start, 2)
    goal = _parse_vec(args.goal, 2)
    k = int(meta.get("transition_frames", 2))
    skeleton = kin.default_skeleton()
    transition = _rest_transition(skeleton, start, k)
    spec = _episode_spec_for(goal, transition, grid, scene_enc, action_enc,
                             meta)
    rng = np.random.default_rng(args.seed)
    episode = dif.sample_episode_recentered(denoiser, spec, schedule, rng)
    with atomic_path(args.out) as tmp:
        dif.save_motion(episode, tmp,
                        joint_names=[b.name for b in skeleton.bones])
    print(f"wrote {args.out}: {len(episode)} frames")
    return 0


def cmd_generate(args) -> int:
    denoiser, schedule, scene_enc, action_enc, meta = \
        _restore_model(args.checkpoint)
    grid = sc.load_grid(args.grid) if args.grid else _empty_grid()
    with open(args.subgoals) as fh:
        subgoals = [np.asarray(g, dtype=np.float64)
                    for g in json.load(fh)["subgoals"]]
    if not subgoals:
        print("error: subgoals file lists no subgoals", file=sys.stderr)
        return DATA_ERROR
    start = _parse_vec(args.start, 2)
    k = args.k if args.k is not None else int(meta.get("transition_frames", 2))
    skeleton = kin.default_skeleton()
    transition = _rest_transition(skeleton, start, k)
    specs = [_episode_spec_for(g, transition, grid, scene_enc, action_enc,
                               meta) for g in subgoals]
    rng = np.random.default_rng(args.seed)
    motion = dif.generate_long(denoiser, specs, k, schedule, rng)
    with atomic_path(args.out) as tmp:
        dif.save_motion(motion, tmp,
                        joint_names=[b.name for b in skeleton.bones])
    print(f"wrote {args.out}: {len(motion)} frames "
          f"({len(specs)} episodes, k={k})")
    return 0


def cmd_augment(args) -> int:
    frames, fps, names = dif.load_motion(args.motion)
    events = aug.load_events(args.events)
    skeleton = _load_skeleton(args.skeleton)
    result = aug.retarget_motion(frames, skeleton, events, args.window)
    with atomic_path(args.out) as tmp:
        dif.save_motion(result.frames, tmp, fps=fps, joint_names=names)
    worst = max((max(r.values()) for r in result.residuals if r),
                default=0.0)
    print(f"wrote {args.out}: {len(result.frames)} frames, "
          f"worst contact residual {worst:.2e} m")
    return 0


def cmd_annotate(args) -> int:
    frames, _, _ = dif.load_motion(args.motion)
    skeleton = _load_skeleton(args.skeleton)
    mesh = mm.load_obj(args.object)
    if args.track:
        track = ia.load_track(args.track, mesh.vertices)
        if len(track) != len(frames):
            print("error: track length does not match motion",
                  file=sys.stderr)
            return DATA_ERROR
    else:
        track = None
    flags = []
    for i, joints in enumerate(frames):
        surface = ia.capsule_surface(skeleton, joints)
        obj = mesh if track is None else mm.TriangleMesh(
            mesh.vertices @ track.rotations[i].T + track.translations[i],
            mesh.faces)
        flags.append(ia.annotate_contacts(surface, obj, args.threshold))
    with atomic_path(args.out) as tmp:
        ia.save_contacts(ia.ContactSet(np.stack(flags)), tmp)
    print(f"wrote {args.out}: {len(flags)} frames, "
          f"{int(np.stack(flags).sum())} contact flags")
    return 0


def cmd_stats(args) -> int:
    frames, _, _ = dif.load_motion(args.motion)
    skeleton = _load_skeleton(args.skeleton)
    mesh = mm.load_obj(args.scene)
    surfaces = [ia.capsule_surface(skeleton, joints).vertices
                for joints in frames]
    stats = ia.penetration_stats(surfaces, mesh)
    thresholds = np.linspace(0.0, 0.1, 51)
    doc = {
        "max": stats.max.tolist(),
        "mean": stats.mean.tolist(),
        "median": stats.median.tolist(),
        "thresholds": thresholds.tolist(),
        "fraction_below": {
            "max": ia.cumulative_fraction(stats.max, thresholds).tolist(),
            "mean": ia.cumulative_fraction(stats.mean, thresholds).tolist(),
            "median": ia.cumulative_fraction(stats.median, thresholds).tolist(),
        },
    }
    with atomic_path(args.out) as tmp:
        with open(tmp, "w") as fh:
            json.dump(doc, fh)
    print(f"wrote {args.out}: mean penetration "
          f"{stats.mean.mean() * 100:.2f} cm")
    return 0


def cmd_camera_track(args) -> int:
    frames, _, _ = dif.load_motion(args.motion)
    mesh = mm.load_obj(args.scene) if args.scene else None
    track = cam.track_camera(frames, mesh)
    with atomic_path(args.out) as tmp:
        cam.save_camera_track(track, tmp)
    print(f"wrote {args.out}: {len(track.yaw)} camera frames")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app_from_config

    cfg, base_dir = load_config(args.config)
    app = build_app_from_config(cfg, base_dir)
    host = args.host or cfg.service.host
    port = args.port if args.port is not None else cfg.service.port
    uvicorn.run(app, host=host, port=port)
    return 0


_COMMANDS = {
    "voxelize": cmd_voxelize,
    "train": cmd_train,
    "sample": cmd_sample,
    "generate": cmd_generate,
    "augment": cmd_augment,
    "annotate": cmd_annotate,
    "stats": cmd_stats,
    "camera-track": cmd_camera_track,
    "serve": cmd_serve,
}


def cli_dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except (MotionForgeError, OSError, KeyError, ValueError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
