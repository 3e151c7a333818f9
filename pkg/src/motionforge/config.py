"""Project configuration: one JSON file naming the scene grid, skeleton,
checkpoint, and the numeric parameters every tool shares. The path comes
from the CLI flag or the MOTIONFORGE_CONFIG environment variable."""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field

from .errors import InvalidInput

ENV_VAR = "MOTIONFORGE_CONFIG"


@contextmanager
def atomic_path(path: str):
    """Yield a temp path that replaces ``path`` only on success."""
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class DiffusionParams:
    timesteps: int = 50
    beta_start: float | None = None
    beta_end: float | None = None
    episode_frames: int = 16
    transition_frames: int = 2

    def validate(self):
        if self.timesteps < 1:
            raise InvalidInput("timesteps must be >= 1")
        if not 0 < self.transition_frames < self.episode_frames:
            raise InvalidInput("need 0 < transition_frames < episode_frames")


@dataclass
class SceneParams:
    local_dims: tuple[int, int, int] = (32, 32, 18)
    local_cell: float = 0.1
    patch_side: int = 8

    def validate(self):
        if self.local_cell <= 0:
            raise InvalidInput("local_cell must be positive")
        if self.local_dims[0] % self.patch_side or \
                self.local_dims[1] % self.patch_side:
            raise InvalidInput("patch_side must divide the local xy dims")


@dataclass
class ActionParams:
    n_actions: int = 12

    def validate(self):
        if self.n_actions < 1:
            raise InvalidInput("n_actions must be >= 1")


@dataclass
class ServiceParams:
    host: str = "127.0.0.1"
    port: int = 8765


@dataclass
class ProjectConfig:
    grid: str | None = None
    skeleton: str | None = None
    checkpoint: str | None = None
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    scene: SceneParams = field(default_factory=SceneParams)
    action: ActionParams = field(default_factory=ActionParams)
    service: ServiceParams = field(default_factory=ServiceParams)

    def validate(self, base_dir: str = ".") -> None:
        self.diffusion.validate()
        self.scene.validate()
        self.action.validate()
        for name in ("grid", "skeleton", "checkpoint"):
            path = getattr(self, name)
            if path is not None:
                full = os.path.join(base_dir, path)
                if not os.path.exists(full):
                    raise InvalidInput(f"{name} file does not exist: {full}")

    def resolve(self, name: str, base_dir: str) -> str | None:
        path = getattr(self, name)
        return None if path is None else os.path.join(base_dir, path)


def load_config(path: str | None = None) -> tuple[ProjectConfig, str]:
    """(config, base_dir); relative paths resolve against the file's dir."""
    path = path or os.environ.get(ENV_VAR)
    if path is None:
        raise InvalidInput(
            f"no config path given and {ENV_VAR} is not set")
    with open(path) as fh:
        doc = json.load(fh)
    cfg = ProjectConfig(
        grid=doc.get("grid"),
        skeleton=doc.get("skeleton"),
        checkpoint=doc.get("checkpoint"),
        diffusion=DiffusionParams(**doc.get("diffusion", {})),
        scene=SceneParams(**{
            **doc.get("scene", {}),
            **({"local_dims": tuple(doc["scene"]["local_dims"])}
               if "local_dims" in doc.get("scene", {}) else {}),
        }),
        action=ActionParams(**doc.get("action", {})),
        service=ServiceParams(**doc.get("service", {})),
    )
    base_dir = os.path.dirname(os.path.abspath(path))
    cfg.validate(base_dir)
    return cfg, base_dir
