"""Annotated-video datasets: generation, the degenerate-frame augmentation,
and the on-disk binary layout.

Layout of a dataset directory:
    meta.json                  dataset-level facts (canonical JSON)
    index.json                 one entry per episode
    ep_<6 digits>.frames.u8    h*32*32*3 bytes, frame-major, row-major
    ep_<6 digits>.actions.f32le  (h-1)*3 little-endian float32
Frames map to reals as value/255 at encode time, not at load time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import world
from .errors import DataFormatError
from .manifest import canonical_json
from .rng import episode_seed, make_rng

DATA_FORMAT_VERSION = 1
ACTION_DIM = 3


@dataclass
class AnnotatedVideo:
    frames: np.ndarray           # (h, 32, 32, 3) u8
    actions: np.ndarray | None   # (h-1, 3) f32, None for action-free data
    token_ids: tuple[int, ...]   # empty for unlabeled episodes
    task_id: int | None          # None for random-policy episodes

    @property
    def horizon(self) -> int:
        return int(self.frames.shape[0])

    @property
    def goal_frame(self) -> np.ndarray:
        return self.frames[-1]

    @property
    def annotated(self) -> bool:
        return len(self.token_ids) > 0


@dataclass
class Dataset:
    videos: list[AnnotatedVideo]
    vocabulary: tuple[str, ...]
    tasks: tuple[world.TaskSpec, ...]
    image_dims: tuple[int, int, int]
    horizon: int
    seed: int
    policy: str

    def annotated_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.videos) if v.annotated]

    def vocab_hash(self) -> str:
        return vocabulary_hash(self.vocabulary)

    def meta_dict(self) -> dict:
        return {
            "version": DATA_FORMAT_VERSION,
            "image_dims": list(self.image_dims),
            "vocabulary": list(self.vocabulary),
            "tasks": [
                {"task_id": t.task_id, "annotation": t.annotation, "token_ids": list(t.token_ids)}
                for t in self.tasks
            ],
            "episodes": len(self.videos),
            "annotated_episodes": len(self.annotated_indices()),
            "horizon": self.horizon,
            "action_dim": ACTION_DIM,
            "seed": self.seed,
            "policy": self.policy,
        }

    def content_fingerprint(self) -> str:
        """Hash of the dataset's logical content; identical for an in-memory
        dataset and its save/load round trip."""
        h = hashlib.sha256()
        h.update(canonical_json(self.meta_dict()).encode())
        for v in self.videos:
            h.update(v.frames.tobytes())
            h.update(b"|" if v.actions is None else np.ascontiguousarray(v.actions, dtype="<f4").tobytes())
            h.update(canonical_json([list(v.token_ids), v.task_id]).encode())
        return h.hexdigest()


def vocabulary_hash(vocabulary) -> str:
    return hashlib.sha256(canonical_json(list(vocabulary)).encode()).hexdigest()


@dataclass(frozen=True)
class GenConfig:
    episodes: int
    policy: str = "expert"       # "expert" | "random"
    horizon: int = 40
    seed: int = 0
    task_ids: tuple[int, ...] = (0, 1, 2, 3)

    def validate(self) -> None:
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.policy not in ("expert", "random"):
            raise ValueError(f"unknown policy mode {self.policy!r}")
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if not self.task_ids or any(t not in range(len(world.TASKS)) for t in self.task_ids):
            raise ValueError(f"task_ids must be a nonempty subset of 0..{len(world.TASKS) - 1}")

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "policy": self.policy,
            "horizon": self.horizon,
            "seed": self.seed,
            "task_ids": list(self.task_ids),
        }


def _rollout_episode(rng, horizon: int, act_fn) -> tuple[np.ndarray, np.ndarray, world.WorldState]:
    state = world.init_from_rng(rng)
    frames = np.empty((horizon,) + world.IMAGE_DIMS, dtype=np.uint8)
    actions = np.empty((horizon - 1, ACTION_DIM), dtype=np.float32)
    frames[0] = world.render(state)
    for t in range(horizon - 1):
        a = act_fn(state, rng)
        actions[t] = (a.dx, a.dy, a.grip)
        state = world.step(state, a)
        frames[t + 1] = world.render(state)
    return frames, actions, state


def _random_action(state, rng) -> world.Action:
    d = rng.uniform(-world.MAX_DELTA, world.MAX_DELTA, size=2)
    grip = rng.uniform(0.0, 1.0)
    return world.Action(float(d[0]), float(d[1]), float(grip))


def generate_dataset(config: GenConfig) -> Dataset:
    """Deterministic in `config.seed`; episode e draws from its own stream
    keyed by seed XOR e, so generation may parallelize per episode."""
    config.validate()
    tasks = tuple(world.TASKS[t] for t in sorted(set(config.task_ids)))
    videos: list[AnnotatedVideo] = []
    for e in range(config.episodes):
        rng = make_rng(episode_seed(config.seed, e))
        if config.policy == "expert":
            task = tasks[e % len(tasks)]
            frames, actions, _ = _rollout_episode(
                rng, config.horizon, lambda s, r: world.expert_action(s, task, r)
            )
            videos.append(AnnotatedVideo(frames, actions, task.token_ids, task.task_id))
        else:
            frames, actions, final = _rollout_episode(rng, config.horizon, _random_action)
            solved = [t for t in tasks if world.is_success(final, t)]
            annotation = " ".join(t.annotation for t in solved)
            videos.append(AnnotatedVideo(frames, actions, world.tokenize(annotation), None))
    return Dataset(
        videos=videos,
        vocabulary=world.VOCABULARY,
        tasks=tasks,
        image_dims=world.IMAGE_DIMS,
        horizon=config.horizon,
        seed=config.seed,
        policy=config.policy,
    )


def degenerate_video(video: AnnotatedVideo) -> AnnotatedVideo:
    """Same horizon, every frame replaced by the goal frame; actions dropped."""
    if video.horizon < 1:
        raise ValueError("video must have at least one frame")
    frames = np.repeat(video.frames[-1:], video.horizon, axis=0)
    return AnnotatedVideo(frames, None, video.token_ids, video.task_id)


def save_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for i, v in enumerate(dataset.videos):
        frames_file = f"ep_{i:06d}.frames.u8"
        (out / frames_file).write_bytes(np.ascontiguousarray(v.frames).tobytes())
        actions_file = None
        if v.actions is not None:
            actions_file = f"ep_{i:06d}.actions.f32le"
            (out / actions_file).write_bytes(np.ascontiguousarray(v.actions, dtype="<f4").tobytes())
        index.append(
            {
                "frames_file": frames_file,
                "actions_file": actions_file,
                "horizon": v.horizon,
                "task_id": v.task_id,
                "token_ids": list(v.token_ids),
            }
        )
    (out / "meta.json").write_text(canonical_json(dataset.meta_dict()) + "\n")
    (out / "index.json").write_text(canonical_json(index) + "\n")


def load_dataset(path) -> Dataset:
    root = Path(path)
    try:
        meta = json.loads((root / "meta.json").read_text())
        index = json.loads((root / "index.json").read_text())
    except FileNotFoundError as e:
        raise DataFormatError(f"not a dataset directory: {root} ({e})") from e
    except json.JSONDecodeError as e:
        raise DataFormatError(f"malformed dataset metadata in {root}: {e}") from e

    if meta.get("version") != DATA_FORMAT_VERSION:
        raise DataFormatError(f"unsupported dataset version {meta.get('version')!r}")
    dims = tuple(meta["image_dims"])
    if dims != world.IMAGE_DIMS:
        raise DataFormatError(f"unsupported image dims {dims}")
    if tuple(meta["vocabulary"]) != world.VOCABULARY:
        raise DataFormatError("dataset vocabulary does not match this build's vocabulary")

    tasks = tuple(world.TASKS[t["task_id"]] for t in meta["tasks"])
    frame_bytes = int(np.prod(dims))
    videos = []
    for entry in index:
        h = int(entry["horizon"])
        raw = (root / entry["frames_file"]).read_bytes()
        if len(raw) != h * frame_bytes:
            raise DataFormatError(
                f"{entry['frames_file']}: expected {h * frame_bytes} bytes, got {len(raw)}"
            )
        frames = np.frombuffer(raw, dtype=np.uint8).reshape((h,) + dims).copy()
        actions = None
        if entry["actions_file"] is not None:
            rawa = (root / entry["actions_file"]).read_bytes()
            if len(rawa) != (h - 1) * ACTION_DIM * 4:
                raise DataFormatError(f"{entry['actions_file']}: bad length {len(rawa)}")
            actions = np.frombuffer(rawa, dtype="<f4").reshape(h - 1, ACTION_DIM).copy()
        task_id = entry["task_id"]
        videos.append(AnnotatedVideo(frames, actions, tuple(entry["token_ids"]), task_id))
    return Dataset(
        videos=videos,
        vocabulary=tuple(meta["vocabulary"]),
        tasks=tasks,
        image_dims=dims,
        horizon=int(meta["horizon"]),
        seed=int(meta["seed"]),
        policy=meta["policy"],
    )
