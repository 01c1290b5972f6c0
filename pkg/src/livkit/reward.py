"""Goal-conditioned value and reward evaluation.

The value of a frame against a goal is the discount-scaled cosine similarity
between the frame embedding and the goal embedding (image goals use the
vision encoder, text goals the language encoder). The per-step reward is the
potential difference between consecutive frames, so rewards along any
trajectory telescope to terminal-minus-initial value.

Cost curves are reported as plain negative cosine similarity, i.e.
-(1-gamma) times the value; the two scalings differ by the constant
(1-gamma) only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .encoders import Model
from .errors import DegenerateEmbeddingError
from .objectives import NORM_FLOOR, similarity


@dataclass(frozen=True)
class ImageGoal:
    frame: np.ndarray


@dataclass(frozen=True)
class TextGoal:
    token_ids: tuple[int, ...]


GoalSpec = ImageGoal | TextGoal


def goal_embedding(model: Model, goal: GoalSpec) -> np.ndarray:
    if isinstance(goal, ImageGoal):
        return model.encode_image(goal.frame)
    if isinstance(goal, TextGoal):
        return model.encode_text(goal.token_ids)
    raise TypeError(f"not a goal spec: {type(goal).__name__}")


def value(model: Model, frame: np.ndarray, goal: GoalSpec, gamma: float | None = None) -> float:
    g = model.gamma if gamma is None else gamma
    return similarity(model.encode_image(frame), goal_embedding(model, goal), g)


def potential_reward(
    model: Model,
    o_t: np.ndarray,
    o_t1: np.ndarray,
    goal: GoalSpec,
    gamma: float | None = None,
) -> float:
    ge = goal_embedding(model, goal)
    g = model.gamma if gamma is None else gamma
    return similarity(model.encode_image(o_t1), ge, g) - similarity(model.encode_image(o_t), ge, g)


def negative_cosine_series(model: Model, frames: np.ndarray, goal: GoalSpec) -> np.ndarray:
    """Per-frame -cos(frame embedding, goal embedding), batched."""
    if len(frames) == 0:
        raise ValueError("need at least one frame")
    embs = model.encode_image_batch(np.asarray(frames))
    ge = goal_embedding(model, goal)
    ng = float(np.sqrt(np.dot(ge, ge)))
    norms = np.sqrt(np.sum(embs * embs, axis=1))
    if ng < NORM_FLOOR or np.any(norms < NORM_FLOOR):
        raise DegenerateEmbeddingError(f"embedding norm below {NORM_FLOOR}")
    cos = np.clip((embs @ ge) / (norms * ng), -1.0, 1.0)
    return -cos


def cost_curve(model: Model, frames: np.ndarray, goal: GoalSpec, gamma: float | None = None) -> np.ndarray:
    """Frame-ordered series -(1-gamma)*value(o_t, goal) == -cos per frame."""
    del gamma  # the (1-gamma) scaling cancels; kept for signature symmetry
    return negative_cosine_series(model, frames, goal)


def curve_metrics(curve: np.ndarray) -> dict:
    """Spearman rank correlation of frame index vs negated cost (+1 means
    the cost falls steadily) with average ranks for ties and the all-constant
    curve mapped to 0, plus the fraction of strictly decreasing steps."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 1 or len(curve) < 2:
        raise ValueError("curve must be a 1D series with at least 2 entries")
    rho = stats.spearmanr(np.arange(len(curve)), -curve).statistic
    if not np.isfinite(rho):
        rho = 0.0
    monotone = float(np.mean(curve[1:] < curve[:-1]))
    return {"spearman": float(rho), "monotone_fraction": monotone}
