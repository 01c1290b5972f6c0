"""Language-conditioned behavior cloning on frozen encoder features.

The policy is an MLP over concat(frame embedding, task encoding); the task
encoding is either the frozen text embedding of the annotation or a one-hot
vector over the dataset's task table (the ablation wiring: switching modes
changes only the task slice of the input, never the frame features).
Encoders are never updated here.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffnet, world
from .data import Dataset, vocabulary_hash
from .diffnet import AdamState, ParamStore, Var, adam_step, loss_gradient, vmean
from .encoders import Model
from .errors import CheckpointError, DataFormatError, LivkitError
from .rng import MASK64, make_rng, make_rng_from

ENCODINGS = ("language", "one_hot")


@dataclass(frozen=True)
class BCConfig:
    steps: int = 5000
    batch: int = 64
    lr: float = 1e-3
    seed: int = 0
    encoding: str = "language"
    hidden: tuple[int, ...] = (256, 256)
    log_every: int = 100

    def validate(self) -> None:
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown task encoding {self.encoding!r}")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "batch": self.batch,
            "lr": self.lr,
            "seed": self.seed,
            "encoding": self.encoding,
            "hidden": list(self.hidden),
            "log_every": self.log_every,
        }


@dataclass
class Policy:
    params: ParamStore
    encoding: str
    k: int
    task_table: tuple[int, ...]  # dataset task ids, fixes one-hot order

    def task_encoding(self, model: Model, task: world.TaskSpec) -> np.ndarray:
        if self.encoding == "language":
            return model.encode_text(task.token_ids)
        if task.task_id not in self.task_table:
            raise LivkitError(f"task {task.task_id} not in the policy's task table")
        onehot = np.zeros(len(self.task_table))
        onehot[self.task_table.index(task.task_id)] = 1.0
        return onehot

    def raw_output(self, frame_embedding: np.ndarray, task_encoding: np.ndarray) -> np.ndarray:
        x = np.concatenate([frame_embedding, task_encoding])
        return diffnet.mlp_forward(self.params, "policy", x)

    def save(self, path, extra_metadata: dict | None = None) -> None:
        meta = {
            "policy": {
                "encoding": self.encoding,
                "k": self.k,
                "task_table": list(self.task_table),
                "hidden": _hidden_from_params(self.params),
            },
            "vocab_hash": vocabulary_hash(world.VOCABULARY),
        }
        if extra_metadata:
            meta.update(extra_metadata)
        diffnet.save_checkpoint(self.params, meta, Path(path))

    @classmethod
    def load(cls, path) -> "Policy":
        params, meta = diffnet.load_checkpoint(path)
        if "policy" not in meta:
            raise CheckpointError(f"checkpoint {path} carries no policy section")
        p = meta["policy"]
        return cls(params=params, encoding=p["encoding"], k=int(p["k"]),
                   task_table=tuple(p["task_table"]))


def _hidden_from_params(params: ParamStore) -> list[int]:
    n = diffnet.mlp_layer_count(params, "policy")
    return [int(params[f"policy.layer{i}.W"].shape[1]) for i in range(n - 1)]


def _init_policy_params(in_width: int, hidden: tuple[int, ...], seed: int) -> ParamStore:
    rng = make_rng_from((seed, 11))
    params = ParamStore()
    widths = [in_width, *hidden, 3]
    for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
        scale = np.sqrt(2.0 / w_in)
        w = rng.normal(0.0, scale, size=(w_in, w_out)).astype(np.float32).astype(np.float64)
        b = np.zeros(w_out)
        params.add(f"policy.layer{i}.W", w)
        params.add(f"policy.layer{i}.b", b)
    return params


def _bc_training_set(model: Model, dataset: Dataset, encoding: str):
    """Frozen-feature inputs and action targets over every timestep of every
    annotated video with actions."""
    usable = [v for v in dataset.videos if v.annotated and v.actions is not None]
    if not any(v.actions is not None for v in dataset.videos):
        raise DataFormatError("dataset lacks actions; behavior cloning needs them")
    if not usable:
        raise DataFormatError("dataset has no annotated videos with actions")
    task_table = tuple(t.task_id for t in dataset.tasks)

    feats = []
    targets = []
    for v in usable:
        emb = model.encode_image_batch(v.frames[:-1])  # frames with recorded actions
        if encoding == "language":
            enc = model.encode_text(v.token_ids)
        else:
            if v.task_id is None:
                raise DataFormatError("one-hot encoding needs per-video task ids")
            onehot = np.zeros(len(task_table))
            onehot[task_table.index(v.task_id)] = 1.0
            enc = onehot
        block = np.concatenate([emb, np.tile(enc, (emb.shape[0], 1))], axis=1)
        feats.append(block)
        targets.append(np.asarray(v.actions, dtype=np.float64))
    return np.concatenate(feats, axis=0), np.concatenate(targets, axis=0), task_table


def bc_train(model: Model, dataset: Dataset, config: BCConfig) -> tuple[Policy, list[dict]]:
    """Train the action MLP with MSE on frozen features. Returns the policy
    and a (step, mse) log."""
    config.validate()
    x_all, y_all, task_table = _bc_training_set(model, dataset, config.encoding)
    params = _init_policy_params(x_all.shape[1], config.hidden, config.seed)
    opt = AdamState(lr=config.lr)
    rng = make_rng_from((config.seed, 12))
    log: list[dict] = []

    for step in range(1, config.steps + 1):
        idx = rng.integers(0, x_all.shape[0], size=config.batch)
        xb, yb = x_all[idx], y_all[idx]

        def loss_fn(var_map):
            pred = diffnet.mlp_forward_graph(var_map, "policy", Var(xb))
            err = pred - Var(yb)
            return vmean(err * err)

        value, grads = loss_gradient(loss_fn, params)
        adam_step(params, grads, opt)
        if step == 1 or step % config.log_every == 0 or step == config.steps:
            log.append({"step": step, "mse": value})

    policy = Policy(params=params, encoding=config.encoding, k=model.config.k,
                    task_table=task_table)
    return policy, log


def policy_action(policy: Policy, model: Model, frame: np.ndarray, task: world.TaskSpec) -> world.Action:
    """Raw MLP output with execution-time clamping: dx, dy into the
    displacement range, grip thresholded at 0.5."""
    raw = policy.raw_output(model.encode_image(frame), policy.task_encoding(model, task))
    return _raw_to_action(raw)


def _raw_to_action(raw: np.ndarray) -> world.Action:
    dx = float(np.clip(raw[0], -world.MAX_DELTA, world.MAX_DELTA))
    dy = float(np.clip(raw[1], -world.MAX_DELTA, world.MAX_DELTA))
    grip = 1.0 if raw[2] >= 0.5 else 0.0
    return world.Action(dx, dy, grip)


def rollout_episode_seed(seed: int, task_id: int, episode: int) -> int:
    return (int(seed) ^ (int(task_id) << 32) ^ int(episode)) & MASK64


def run_policy_episode(
    act_fn, task: world.TaskSpec, episode_seed_value: int, horizon: int = 40
) -> bool:
    """Closed-loop rollout; success is latched the first time the criterion
    holds after a step."""
    state = world.init_episode(episode_seed_value)
    for _ in range(horizon - 1):
        action = act_fn(state)
        state = world.step(state, action)
        if world.is_success(state, task):
            return True
    return False


def evaluate_policy(
    policy: Policy,
    model: Model,
    tasks=None,
    episodes_per_task: int = 25,
    seed: int = 0,
    horizon: int = 40,
) -> dict:
    """Seeded closed-loop evaluation; returns per-task success rates and the
    mean. Episode seeds depend only on (seed, task_id, episode) so arms that
    share a seed see identical initial states."""
    tasks = list(tasks) if tasks is not None else [world.TASKS[t] for t in policy.task_table]
    report: dict = {"per_task": {}, "episodes_per_task": episodes_per_task, "seed": seed}
    rates = []
    for task in tasks:
        enc = policy.task_encoding(model, task)  # hoisted: constant per task
        successes = 0
        for ep in range(episodes_per_task):
            es = rollout_episode_seed(seed, task.task_id, ep)

            def act(state):
                raw = policy.raw_output(model.encode_image(world.render(state)), enc)
                return _raw_to_action(raw)

            successes += bool(run_policy_episode(act, task, es, horizon))
        rate = successes / episodes_per_task
        report["per_task"][str(task.task_id)] = rate
        rates.append(rate)
    report["mean"] = float(np.mean(rates))
    return report
