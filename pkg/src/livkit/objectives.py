"""The objective family over the shared embedding space.

Everything is expressed through the discount-scaled cosine similarity
S(a, b) = cos(a, b) / (1 - gamma), which bounds values to
[-1/(1-gamma), +1/(1-gamma)]:

  vip_i   temporal-difference style objective with image goals
  vip_l   the same structure with text goals: per-text log over
          cross-batch frame negatives (the estimator under which the
          degenerate-video reduction holds sample for sample)
  infonce contrastive goal-frame/text alignment; note (1-gamma)*S is
          exactly the raw cosine, so the effective temperature is 1
  liv     vip_i + infonce
  multimodal_vip  vip_i + vip_l

On a fully degenerate batch (every frame equals the goal frame),
vip_l == infonce(scale=one) + 1 to float64 accuracy; the verification
suite sweeps this identity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .diffnet import Var, logsumexp, sqrt, vdiag, vmean, vsum
from .encoders import EncoderConfig, encode_images_graph, encode_texts_graph
from .errors import (
    DegenerateEmbeddingError,
    MissingTextError,
    NoAnnotatedVideosError,
)

NORM_FLOOR = 1e-12

OBJECTIVES = ("liv", "vip_i", "vip_l", "infonce", "multimodal_vip")

# objective -> (requires text, component names in metrics order)
OBJECTIVE_INFO = {
    "liv": (True, ("vip_i", "infonce")),
    "vip_i": (False, ("vip_i",)),
    "vip_l": (True, ("vip_l",)),
    "infonce": (True, ("infonce",)),
    "multimodal_vip": (True, ("vip_i", "vip_l")),
}


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.98
    infonce_outer_scale: str = "one"  # "one" | "one_minus_gamma"
    infonce_symmetric: bool = False
    p_degenerate: float = 0.0

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.infonce_outer_scale not in ("one", "one_minus_gamma"):
            raise ValueError(f"unknown infonce_outer_scale {self.infonce_outer_scale!r}")
        if not 0.0 <= self.p_degenerate <= 1.0:
            raise ValueError(f"p_degenerate must lie in [0, 1], got {self.p_degenerate}")

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "infonce_outer_scale": self.infonce_outer_scale,
            "infonce_symmetric": self.infonce_symmetric,
            "p_degenerate": self.p_degenerate,
        }


def similarity(a, b, gamma: float) -> float:
    """Discount-scaled cosine: cos(a, b)/(1-gamma), clipped into the exact
    representable band. Rejects near-zero-norm inputs instead of epsilon
    padding so positive-scale invariance stays exact."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise DegenerateEmbeddingError(f"embedding norm below {NORM_FLOOR}")
    cos = float(np.dot(a, b)) / (na * nb)
    cos = -1.0 if cos < -1.0 else 1.0 if cos > 1.0 else cos
    return cos / (1.0 - gamma)


@dataclass
class SampledBatch:
    """Per-slot tuples (o_t, o_k, o_k1, g, text) drawn from one video each.

    With 1-based frame indices in a video of horizon h: t in [1, h-1],
    k in [t, h-1], o_k1 is frame k+1, g is frame h.
    """

    o_t: np.ndarray   # (B, H, W, C) u8
    o_k: np.ndarray
    o_k1: np.ndarray
    g: np.ndarray
    texts: list[tuple[int, ...] | None]
    video_ids: list[int]

    @property
    def b(self) -> int:
        return int(self.g.shape[0])

    def require_texts(self) -> list[tuple[int, ...]]:
        texts = []
        for i, t in enumerate(self.texts):
            if t is None or len(t) == 0:
                raise MissingTextError(f"batch slot {i} has no annotation")
            texts.append(t)
        return texts


def sample_batch(
    dataset: Dataset,
    b: int,
    rng: np.random.Generator,
    config: LossConfig | None = None,
    require_text: bool = False,
) -> SampledBatch:
    """Draw B sub-trajectory tuples uniformly with replacement.

    Per slot the stream yields (video, t, k, degenerate-coin) in that fixed
    order; the coin is always drawn so the stream position is independent of
    p_degenerate. Degenerate slots replace every frame with the goal frame.
    """
    config = config or LossConfig()
    config.validate()
    if b < 1:
        raise ValueError("batch size must be >= 1")
    if not dataset.videos:
        raise ValueError("dataset is empty")
    pool = dataset.annotated_indices() if require_text else list(range(len(dataset.videos)))
    if require_text and not pool:
        raise NoAnnotatedVideosError("no annotated videos available for a text objective")

    dims = dataset.image_dims
    o_t = np.empty((b,) + dims, dtype=np.uint8)
    o_k = np.empty_like(o_t)
    o_k1 = np.empty_like(o_t)
    g = np.empty_like(o_t)
    texts: list[tuple[int, ...] | None] = []
    video_ids: list[int] = []

    for i in range(b):
        vid = pool[int(rng.integers(0, len(pool)))]
        video = dataset.videos[vid]
        h = video.horizon
        t0 = int(rng.integers(0, h - 1))
        k0 = int(rng.integers(t0, h - 1))
        coin = float(rng.uniform(0.0, 1.0))
        goal = video.frames[h - 1]
        if coin < config.p_degenerate:
            o_t[i] = o_k[i] = o_k1[i] = goal
        else:
            o_t[i] = video.frames[t0]
            o_k[i] = video.frames[k0]
            o_k1[i] = video.frames[k0 + 1]
        g[i] = goal
        texts.append(video.token_ids if video.annotated else None)
        video_ids.append(vid)
    return SampledBatch(o_t, o_k, o_k1, g, texts, video_ids)


# -- graph builders -------------------------------------------------------------


def _normalized(e: Var, what: str) -> Var:
    sq = vsum(e * e, axis=1, keepdims=True)
    if np.any(sq.value < NORM_FLOOR * NORM_FLOOR):
        raise DegenerateEmbeddingError(f"{what} embedding norm below {NORM_FLOOR}")
    return e / sqrt(sq)


class _Encoded:
    """Per-batch cache of normalized embeddings shared across loss terms."""

    def __init__(self, var_map, enc_cfg: EncoderConfig, batch: SampledBatch):
        self.var_map = var_map
        self.enc_cfg = enc_cfg
        self.batch = batch
        self._cache: dict[str, Var] = {}

    def images(self, role: str) -> Var:
        if role not in self._cache:
            frames = getattr(self.batch, role)
            self._cache[role] = _normalized(
                encode_images_graph(self.var_map, self.enc_cfg, frames), f"image[{role}]"
            )
        return self._cache[role]

    def texts(self) -> Var:
        if "text" not in self._cache:
            seqs = self.batch.require_texts()
            self._cache["text"] = _normalized(
                encode_texts_graph(self.var_map, self.enc_cfg, seqs), "text"
            )
        return self._cache["text"]


def _vip_i_term(enc: _Encoded, gamma: float) -> Var:
    inv = 1.0 / (1.0 - gamma)
    eg = enc.images("g")
    s_t = vsum(enc.images("o_t") * eg, axis=1) * inv
    s_k = vsum(enc.images("o_k") * eg, axis=1) * inv
    s_k1 = vsum(enc.images("o_k1") * eg, axis=1) * inv
    first = (1.0 - gamma) * vmean(-s_t)
    expo = s_k + 1.0 - gamma * s_k1
    # log of the batch mean of exponentials, max-shifted
    second = logsumexp(expo, axis=0) - float(np.log(enc.batch.b))
    return first + second


def _infonce_term(enc: _Encoded, gamma: float, cfg: LossConfig) -> Var:
    b = enc.batch.b
    cos = enc.texts() @ enc.images("g").T  # cos[i, j] = (1-gamma) * S(g_j; l_i)
    d = vdiag(cos)
    per_text = -d + (logsumexp(cos, axis=1) - float(np.log(b)))
    loss = vmean(per_text)
    if cfg.infonce_symmetric:
        per_image = -d + (logsumexp(cos, axis=0) - float(np.log(b)))
        loss = 0.5 * (loss + vmean(per_image))
    if cfg.infonce_outer_scale == "one_minus_gamma":
        loss = (1.0 - gamma) * loss
    return loss


def _vip_l_term(enc: _Encoded, gamma: float) -> Var:
    inv = 1.0 / (1.0 - gamma)
    el = enc.texts()
    s_tt = vsum(enc.images("o_t") * el, axis=1) * inv
    a_k = (el @ enc.images("o_k").T) * inv    # S(o_k^j; l_i), texts index rows
    a_k1 = (el @ enc.images("o_k1").T) * inv
    expo = a_k + 1.0 - gamma * a_k1
    per_text = (1.0 - gamma) * (-s_tt) + (logsumexp(expo, axis=1) - float(np.log(enc.batch.b)))
    return vmean(per_text)


def loss_graph(
    objective: str,
    var_map,
    enc_cfg: EncoderConfig,
    batch: SampledBatch,
    cfg: LossConfig,
) -> tuple[Var, dict[str, float]]:
    """Build the loss graph for one objective; returns the scalar node and
    the per-component values (for metrics logging)."""
    if objective not in OBJECTIVE_INFO:
        raise ValueError(f"unknown objective {objective!r}")
    cfg.validate()
    enc = _Encoded(var_map, enc_cfg, batch)
    gamma = cfg.gamma
    terms: dict[str, Var] = {}
    for name in OBJECTIVE_INFO[objective][1]:
        if name == "vip_i":
            terms[name] = _vip_i_term(enc, gamma)
        elif name == "infonce":
            terms[name] = _infonce_term(enc, gamma, cfg)
        elif name == "vip_l":
            terms[name] = _vip_l_term(enc, gamma)
    values = list(terms.values())
    total = values[0]
    for v in values[1:]:
        total = total + v
    return total, {name: float(t.value) for name, t in terms.items()}


def _loss_value(objective, params, enc_cfg, batch, cfg) -> float:
    out, _ = loss_graph(objective, params.as_vars(), enc_cfg, batch, cfg)
    return float(out.value)


def vip_i_loss(params, enc_cfg: EncoderConfig, batch: SampledBatch, gamma: float) -> float:
    return _loss_value("vip_i", params, enc_cfg, batch, LossConfig(gamma=gamma))


def infonce_loss(
    params, enc_cfg: EncoderConfig, batch: SampledBatch, gamma: float,
    config: LossConfig | None = None,
) -> float:
    cfg = dataclasses.replace(config or LossConfig(), gamma=gamma)
    return _loss_value("infonce", params, enc_cfg, batch, cfg)


def vip_l_loss(params, enc_cfg: EncoderConfig, batch: SampledBatch, gamma: float) -> float:
    return _loss_value("vip_l", params, enc_cfg, batch, LossConfig(gamma=gamma))


def liv_loss(
    params, enc_cfg: EncoderConfig, batch: SampledBatch, gamma: float,
    config: LossConfig | None = None,
) -> float:
    cfg = dataclasses.replace(config or LossConfig(), gamma=gamma)
    return _loss_value("liv", params, enc_cfg, batch, cfg)


def multimodal_vip_loss(params, enc_cfg: EncoderConfig, batch: SampledBatch, gamma: float) -> float:
    return _loss_value("multimodal_vip", params, enc_cfg, batch, LossConfig(gamma=gamma))
