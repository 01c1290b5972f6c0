"""Minibatch training loop shared by pre-training and fine-tuning.

Fine-tuning is the same loop initialized from a checkpoint; the metrics
schema and checkpoint layout are identical. Runs are pure functions of
(dataset bytes, config, seed) under the serial schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffnet
from .data import Dataset, vocabulary_hash
from .diffnet import AdamState, adam_step, grad_norm, loss_gradient
from .encoders import EncoderConfig, Model, init_encoder_params
from .errors import (
    NoAnnotatedVideosError,
    NumericError,
    TrainingAborted,
    VocabularyMismatchError,
)
from .manifest import canonical_json
from .objectives import OBJECTIVE_INFO, LossConfig, loss_graph, sample_batch
from .rng import make_rng_from

METRICS_HEADER = "step,loss,vip_i,infonce,vip_l,grad_norm"
METRIC_COMPONENTS = ("vip_i", "infonce", "vip_l")


@dataclass
class TrainConfig:
    objective: str = "liv"
    steps: int = 2000
    batch: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-3
    seed: int = 0
    eval_every: int = 100
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    init_checkpoint: str | None = None

    def validate(self) -> None:
        if self.objective not in OBJECTIVE_INFO:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.steps < 1 or self.batch < 1 or self.eval_every < 1:
            raise ValueError("steps, batch, and eval_every must be >= 1")
        self.loss.validate()
        self.encoder.validate()

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "steps": self.steps,
            "batch": self.batch,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "loss": self.loss.to_dict(),
            "encoder": self.encoder.to_metadata(),
            "init_checkpoint": self.init_checkpoint,
        }


@dataclass
class TrainResult:
    model: Model
    metrics: list[dict]
    checkpoint_dir: Path | None


def metrics_csv(rows: list[dict]) -> str:
    lines = [METRICS_HEADER]
    for row in rows:
        cells = [str(row["step"]), format(row["loss"], ".17g")]
        for name in METRIC_COMPONENTS:
            cells.append("" if name not in row else format(row[name], ".17g"))
        cells.append(format(row["grad_norm"], ".17g"))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _init_params(config: TrainConfig, dataset: Dataset) -> tuple:
    if config.init_checkpoint is not None:
        params, meta = diffnet.load_checkpoint(config.init_checkpoint)
        ckpt_hash = meta.get("vocab_hash")
        data_hash = dataset.vocab_hash()
        if ckpt_hash != data_hash:
            raise VocabularyMismatchError(
                f"checkpoint vocabulary hash {ckpt_hash} != dataset vocabulary hash {data_hash}"
            )
        enc_cfg = EncoderConfig.from_metadata(meta["encoder_config"])
        return params, enc_cfg
    return init_encoder_params(config.encoder, config.seed), config.encoder


def train(dataset: Dataset, config: TrainConfig, out_dir=None) -> TrainResult:
    """Run `steps` iterations of sample -> loss -> gradients -> Adam.

    Emits a metrics row at step 1, every `eval_every` steps, and the final
    step. On a numeric error the last good parameters are written to
    `out_dir` (when given) and TrainingAborted is raised.
    """
    config.validate()
    requires_text = OBJECTIVE_INFO[config.objective][0]
    if requires_text and not dataset.annotated_indices():
        raise NoAnnotatedVideosError(
            f"objective {config.objective!r} needs annotated videos, dataset has none"
        )

    params, enc_cfg = _init_params(config, dataset)
    opt = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    rng = make_rng_from((config.seed, 1))
    rows: list[dict] = []
    out_path = Path(out_dir) if out_dir is not None else None

    def build_metadata(steps_completed: int, aborted: bool = False) -> dict:
        meta = {
            "encoder_config": enc_cfg.to_metadata(),
            "gamma": config.loss.gamma,
            "vocab_hash": dataset.vocab_hash(),
            "vocabulary": list(dataset.vocabulary),
            "train": {
                "config": config.to_dict(),
                "dataset_fingerprint": dataset.content_fingerprint(),
                "steps_completed": steps_completed,
            },
        }
        if aborted:
            meta["train"]["aborted"] = True
        return meta

    def save(steps_completed: int, aborted: bool = False) -> Path | None:
        if out_path is None:
            return None
        diffnet.save_checkpoint(params, build_metadata(steps_completed, aborted), out_path)
        (out_path / "metrics.csv").write_text(metrics_csv(rows))
        return out_path

    for step in range(1, config.steps + 1):
        batch = sample_batch(dataset, config.batch, rng, config.loss, require_text=requires_text)
        components: dict[str, float] = {}

        def loss_fn(var_map):
            total, comps = loss_graph(config.objective, var_map, enc_cfg, batch, config.loss)
            components.update(comps)
            return total

        try:
            value, grads = loss_gradient(loss_fn, params)
        except NumericError as e:
            ckpt = save(step - 1, aborted=True)
            raise TrainingAborted(
                f"numeric failure at step {step}: {e}", checkpoint_path=ckpt
            ) from e
        gnorm = grad_norm(grads)
        adam_step(params, grads, opt)
        if step == 1 or step % config.eval_every == 0 or step == config.steps:
            rows.append({"step": step, "loss": value, "grad_norm": gnorm, **components})

    ckpt_dir = save(config.steps)
    model = Model(params=params, config=enc_cfg, gamma=config.loss.gamma,
                  metadata=build_metadata(config.steps))
    return TrainResult(model=model, metrics=rows, checkpoint_dir=ckpt_dir)


def eval_loss(
    model: Model,
    dataset: Dataset,
    objective: str,
    batches: int,
    seed: int,
    batch_size: int = 64,
    loss_config: LossConfig | None = None,
) -> float:
    """Mean objective value over freshly sampled batches; no mutation."""
    if objective not in OBJECTIVE_INFO:
        raise ValueError(f"unknown objective {objective!r}")
    cfg = loss_config or LossConfig(gamma=model.gamma)
    requires_text = OBJECTIVE_INFO[objective][0]
    rng = make_rng_from((seed, 2))
    var_map = model.params.as_vars()
    total = 0.0
    for _ in range(batches):
        batch = sample_batch(dataset, batch_size, rng, cfg, require_text=requires_text)
        out, _ = loss_graph(objective, var_map, model.config, batch, cfg)
        total += float(out.value)
    return total / batches


def config_echo(config: TrainConfig) -> str:
    return canonical_json(config.to_dict())
