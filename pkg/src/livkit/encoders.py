"""Vision and language encoders mapping images and token sequences into one
shared K-dimensional space.

The vision side flattens the scaled image (value/255, row-major) through an
MLP; the language side mean-pools token embedding rows and applies an MLP.
Mean pooling makes text encoding invariant to token order — a deliberate
toy-scale simplification (the four task strings differ as bags of words).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffnet, world
from .data import vocabulary_hash
from .diffnet import ParamStore, Var
from .errors import CheckpointError, EmptyAnnotationError, ShapeError
from .rng import make_rng


@dataclass(frozen=True)
class EncoderConfig:
    k: int = 32
    vision_hidden: tuple[int, ...] = (256, 128)
    text_embed_width: int = 32
    text_hidden: tuple[int, ...] = (64,)
    vocab_size: int = len(world.VOCABULARY)
    image_dims: tuple[int, int, int] = world.IMAGE_DIMS

    def validate(self) -> None:
        if self.k < 2:
            raise ValueError("embedding width k must be >= 2")
        widths = (self.text_embed_width, *self.vision_hidden, *self.text_hidden)
        if any(w < 1 for w in widths):
            raise ValueError("all widths must be positive")
        if self.vocab_size < 1 or any(d < 1 for d in self.image_dims):
            raise ValueError("vocab_size and image dims must be positive")

    @property
    def input_width(self) -> int:
        h, w, c = self.image_dims
        return h * w * c

    def to_metadata(self) -> dict:
        return {
            "k": self.k,
            "vision_hidden": list(self.vision_hidden),
            "text_embed_width": self.text_embed_width,
            "text_hidden": list(self.text_hidden),
            "vocab_size": self.vocab_size,
            "image_dims": list(self.image_dims),
        }

    @classmethod
    def from_metadata(cls, meta: dict) -> "EncoderConfig":
        return cls(
            k=int(meta["k"]),
            vision_hidden=tuple(meta["vision_hidden"]),
            text_embed_width=int(meta["text_embed_width"]),
            text_hidden=tuple(meta["text_hidden"]),
            vocab_size=int(meta["vocab_size"]),
            image_dims=tuple(meta["image_dims"]),
        )


def _f32_grid(arr: np.ndarray) -> np.ndarray:
    # Keep fresh parameters exactly representable in f32 so the first
    # checkpoint round trip is the identity.
    return arr.astype(np.float32).astype(np.float64)


def init_encoder_params(config: EncoderConfig, seed: int) -> ParamStore:
    """He-normal weights, small-noise biases (never exactly zero output),
    unit-normal token embeddings. Draw order is fixed: vision layers, token
    embedding, text layers."""
    config.validate()
    rng = make_rng(seed)
    params = ParamStore()

    def add_mlp(prefix: str, widths: list[int]) -> None:
        for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            scale = np.sqrt(2.0 / w_in)
            params.add(f"{prefix}.layer{i}.W", _f32_grid(rng.normal(0.0, scale, size=(w_in, w_out))))
            params.add(f"{prefix}.layer{i}.b", _f32_grid(rng.normal(0.0, 0.01, size=w_out)))

    add_mlp("vision", [config.input_width, *config.vision_hidden, config.k])
    params.add("text.embed", _f32_grid(rng.normal(0.0, 1.0, size=(config.vocab_size, config.text_embed_width))))
    add_mlp("text", [config.text_embed_width, *config.text_hidden, config.k])
    return params


def _check_frames(config: EncoderConfig, frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.shape[-3:] != config.image_dims:
        raise ShapeError(f"expected image dims {config.image_dims}, got {frames.shape}")
    return frames


def scale_frames(config: EncoderConfig, frames: np.ndarray) -> np.ndarray:
    """(N, H, W, C) u8 -> (N, H*W*C) float64 in [0, 1]."""
    frames = _check_frames(config, frames)
    n = frames.shape[0]
    return frames.reshape(n, -1).astype(np.float64) / 255.0


def encode_images_graph(var_map, config: EncoderConfig, frames: np.ndarray) -> Var:
    """Batched differentiable image encoding: (N, H, W, C) u8 -> (N, K)."""
    x = Var(scale_frames(config, frames))
    return diffnet.mlp_forward_graph(var_map, "vision", x)


def encode_texts_graph(var_map, config: EncoderConfig, token_seqs) -> Var:
    """Batched differentiable text encoding via a constant pooling matrix:
    pooled = P @ embed with P[i, t] += 1/len(seq_i)."""
    pool = np.zeros((len(token_seqs), config.vocab_size))
    for i, seq in enumerate(token_seqs):
        if len(seq) == 0:
            raise EmptyAnnotationError("cannot encode an empty token sequence")
        inv = 1.0 / len(seq)
        for t in seq:
            t = int(t)
            if not 0 <= t < config.vocab_size:
                raise ShapeError(f"token id {t} out of range for vocab size {config.vocab_size}")
            pool[i, t] += inv
    pooled = Var(pool) @ var_map["text.embed"]
    return diffnet.mlp_forward_graph(var_map, "text", pooled)


def encode_image(params: ParamStore, config: EncoderConfig, frame: np.ndarray) -> np.ndarray:
    """Single-frame embedding (unnormalized; normalization lives in the
    similarity metric)."""
    frame = np.asarray(frame)
    if frame.shape != config.image_dims:
        raise ShapeError(f"expected image dims {config.image_dims}, got {frame.shape}")
    return encode_images_graph(params.as_vars(), config, frame[None]).value[0]


def encode_image_batch(params: ParamStore, config: EncoderConfig, frames: np.ndarray) -> np.ndarray:
    return encode_images_graph(params.as_vars(), config, frames).value


def encode_text(params: ParamStore, config: EncoderConfig, token_ids) -> np.ndarray:
    return encode_texts_graph(params.as_vars(), config, [tuple(token_ids)]).value[0]


@dataclass
class Model:
    """A trained (or fresh) encoder pair with its config and metadata; the
    unit the reward, policy, and planner layers consume."""

    params: ParamStore
    config: EncoderConfig
    gamma: float
    metadata: dict

    @classmethod
    def load(cls, path) -> "Model":
        params, meta = diffnet.load_checkpoint(path)
        if "encoder_config" not in meta:
            raise CheckpointError(f"checkpoint {path} carries no encoder config")
        config = EncoderConfig.from_metadata(meta["encoder_config"])
        gamma = float(meta.get("gamma", 0.98))
        return cls(params=params, config=config, gamma=gamma, metadata=meta)

    @classmethod
    def fresh(cls, config: EncoderConfig, seed: int, gamma: float = 0.98) -> "Model":
        return cls(
            params=init_encoder_params(config, seed),
            config=config,
            gamma=gamma,
            metadata={"encoder_config": config.to_metadata(), "gamma": gamma,
                      "vocab_hash": vocabulary_hash(world.VOCABULARY)},
        )

    def encode_image(self, frame: np.ndarray) -> np.ndarray:
        return encode_image(self.params, self.config, frame)

    def encode_image_batch(self, frames: np.ndarray) -> np.ndarray:
        return encode_image_batch(self.params, self.config, frames)

    def encode_text(self, token_ids) -> np.ndarray:
        return encode_text(self.params, self.config, token_ids)

    def save(self, path) -> None:
        diffnet.save_checkpoint(self.params, self.metadata, Path(path))
