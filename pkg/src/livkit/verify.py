"""Property suites behind the `verify` command.

Three suites, each returning a report dict with per-check margins:

  prop1       degenerate-batch identity sweep: vip_l == infonce + 1
  gradcheck   central finite differences against analytic gradients for
              every loss on small dense-input models
  invariants  reward algebra (telescoping, zero reward at the goal, value
              bounds, scale invariance), batch-loss permutation invariance,
              and sampler determinism

The gradcheck and prop1 batches use dense random frames rather than rendered
frames: rendered images are mostly black, which makes most first-layer
gradient coordinates legitimately zero and the comparison uninformative.
"""

from __future__ import annotations

import numpy as np

from . import diffnet, world
from .encoders import EncoderConfig, Model, init_encoder_params
from .objectives import (
    OBJECTIVES,
    LossConfig,
    SampledBatch,
    infonce_loss,
    loss_graph,
    sample_batch,
    similarity,
    vip_l_loss,
)
from .reward import ImageGoal, TextGoal, potential_reward, value
from .rng import make_rng, make_rng_from

PROP1_TOLERANCE = 1e-10
GRADCHECK_TOLERANCE = 1e-4
PERMUTATION_TOLERANCE = 1e-6
SCALE_TOLERANCE = 1e-9


def _small_config() -> EncoderConfig:
    return EncoderConfig(k=16, vision_hidden=(32,), text_embed_width=16, text_hidden=(16,))


def _tiny_config() -> EncoderConfig:
    # under 5k parameters so dense finite-difference checks stay cheap
    return EncoderConfig(k=8, vision_hidden=(8,), text_embed_width=8, text_hidden=(8,),
                         image_dims=(4, 4, 3))


def _random_frames(rng, b: int, dims) -> np.ndarray:
    return rng.integers(0, 256, size=(b,) + tuple(dims)).astype(np.uint8)


def _random_texts(rng, b: int, vocab: int) -> list[tuple[int, ...]]:
    return [tuple(int(t) for t in rng.integers(0, vocab, size=int(rng.integers(1, 7))))
            for _ in range(b)]


def _random_batch(rng, b: int, dims, vocab: int, degenerate: bool) -> SampledBatch:
    g = _random_frames(rng, b, dims)
    if degenerate:
        o_t = o_k = o_k1 = g.copy()
    else:
        o_t, o_k, o_k1 = (_random_frames(rng, b, dims) for _ in range(3))
    return SampledBatch(o_t, o_k, o_k1, g, _random_texts(rng, b, vocab), list(range(b)))


def run_prop1_suite(seed: int = 0, draws_per_b: int = 26, corrupt: bool = False) -> dict:
    """|vip_l - (infonce + 1)| over fully degenerate batches, B in {1,2,8,64}."""
    cfg = _small_config()
    rng = make_rng_from((seed, 31))
    worst = 0.0
    draws = 0
    for b in (1, 2, 8, 64):
        for _ in range(draws_per_b):
            params = init_encoder_params(cfg, int(rng.integers(0, 2**31)))
            batch = _random_batch(rng, b, cfg.image_dims, cfg.vocab_size, degenerate=True)
            v = vip_l_loss(params, cfg, batch, 0.98)
            i = infonce_loss(params, cfg, batch, 0.98)
            if corrupt:
                v += 1e-6  # negative-control hook: breaks the identity on purpose
            worst = max(worst, abs(v - (i + 1.0)))
            draws += 1
    passed = worst <= PROP1_TOLERANCE
    return {
        "suite": "prop1",
        "passed": bool(passed),
        "checks": [{
            "name": "degenerate_identity",
            "draws": draws,
            "max_abs_error": worst,
            "tolerance": PROP1_TOLERANCE,
            "passed": bool(passed),
        }],
    }


def run_gradcheck_suite(seed: int = 0, draws_per_loss: int = 20, samples: int = 12) -> dict:
    """Finite-difference checks for every loss, one-sided and symmetric
    contrastive variants included."""
    cfg = _tiny_config()
    rng = make_rng_from((seed, 32))
    variants: list[tuple[str, str, LossConfig]] = [
        (name, name, LossConfig(gamma=0.98)) for name in OBJECTIVES
    ]
    variants.append(("infonce_symmetric", "infonce", LossConfig(gamma=0.98, infonce_symmetric=True)))
    checks = []
    for label, objective, loss_cfg in variants:
        worst = 0.0
        for draw in range(draws_per_loss):
            params = init_encoder_params(cfg, int(rng.integers(0, 2**31)))
            batch = _random_batch(rng, 4, cfg.image_dims, cfg.vocab_size, degenerate=False)

            def loss_fn(vm):
                return loss_graph(objective, vm, cfg, batch, loss_cfg)[0]

            err = diffnet.finite_diff_check(
                loss_fn, params, step=1e-5, samples=samples,
                rng=make_rng_from((seed, 33, draw)),
            )
            worst = max(worst, err)
        checks.append({
            "name": label,
            "draws": draws_per_loss,
            "max_rel_error": worst,
            "tolerance": GRADCHECK_TOLERANCE,
            "passed": bool(worst <= GRADCHECK_TOLERANCE),
        })
    return {"suite": "gradcheck", "passed": all(c["passed"] for c in checks), "checks": checks}


def run_invariants_suite(seed: int = 0, cases: int = 1000) -> dict:
    cfg = _small_config()
    rng = make_rng_from((seed, 34))
    model = Model.fresh(cfg, seed=int(rng.integers(0, 2**31)))
    gamma = model.gamma
    checks = []

    # telescoping + reward at goal + self-value + bounds over random frames
    worst_tel = worst_goal = worst_self = worst_bound = 0.0
    k = 12  # frames per telescoping trajectory
    for _ in range(cases // k + 1):
        frames = _random_frames(rng, k, cfg.image_dims)
        goal = ImageGoal(frames[-1])
        total = 0.0
        for t in range(k - 1):
            total += potential_reward(model, frames[t], frames[t + 1], goal)
        delta = value(model, frames[-1], goal) - value(model, frames[0], goal)
        worst_tel = max(worst_tel, abs(total - delta))
        worst_goal = max(worst_goal, abs(potential_reward(model, frames[-1], frames[-1], goal)))
        self_v = value(model, frames[-1], goal)
        worst_self = max(worst_self, abs(self_v - 1.0 / (1.0 - gamma)))
        for t in range(k):
            v = value(model, frames[t], goal)
            worst_bound = max(worst_bound, abs(v) - 1.0 / (1.0 - gamma))
            if v > self_v + SCALE_TOLERANCE:
                worst_self = max(worst_self, v - self_v)
    checks.append({"name": "telescoping", "max_abs_error": worst_tel,
                   "tolerance": 1e-6 * k, "passed": bool(worst_tel <= 1e-6 * k)})
    checks.append({"name": "reward_at_goal", "max_abs_error": worst_goal,
                   "tolerance": 1e-12, "passed": bool(worst_goal <= 1e-12)})
    checks.append({"name": "goal_self_value", "max_abs_error": worst_self,
                   "tolerance": SCALE_TOLERANCE, "passed": bool(worst_self <= SCALE_TOLERANCE)})
    checks.append({"name": "similarity_bound", "max_excess": worst_bound,
                   "tolerance": 0.0, "passed": bool(worst_bound <= 0.0)})

    # positive-scale invariance of similarity (exact for power-of-two scales)
    worst_scale = 0.0
    for _ in range(100):
        a = rng.standard_normal(cfg.k)
        b = rng.standard_normal(cfg.k)
        s = similarity(a, b, gamma)
        c = float(rng.uniform(0.1, 10.0))
        worst_scale = max(worst_scale, abs(similarity(c * a, b, gamma) - s) / max(abs(s), 1.0))
        exact = abs(similarity(4.0 * a, 0.25 * b, gamma) - s)
        worst_scale = max(worst_scale, exact)
    checks.append({"name": "similarity_scale_invariance", "max_rel_error": worst_scale,
                   "tolerance": SCALE_TOLERANCE, "passed": bool(worst_scale <= SCALE_TOLERANCE)})

    # permutation invariance of every batch loss
    params = model.params
    worst_perm = 0.0
    for trial in range(10):
        batch = _random_batch(rng, 8, cfg.image_dims, cfg.vocab_size, degenerate=False)
        perm = rng.permutation(8)
        permuted = SampledBatch(
            batch.o_t[perm], batch.o_k[perm], batch.o_k1[perm], batch.g[perm],
            [batch.texts[i] for i in perm], [batch.video_ids[i] for i in perm],
        )
        for name in OBJECTIVES:
            lc = LossConfig(gamma=gamma)
            a = loss_graph(name, params.as_vars(), cfg, batch, lc)[0]
            b = loss_graph(name, params.as_vars(), cfg, permuted, lc)[0]
            rel = abs(float(a.value) - float(b.value)) / max(abs(float(a.value)), 1e-9)
            worst_perm = max(worst_perm, rel)
    checks.append({"name": "loss_permutation_invariance", "max_rel_error": worst_perm,
                   "tolerance": PERMUTATION_TOLERANCE,
                   "passed": bool(worst_perm <= PERMUTATION_TOLERANCE)})

    # embedding-scale invariance of every loss: scale all final-layer weights
    worst_loss_scale = 0.0
    scaled = params.copy()
    for name in ("vision.layer1.W", "vision.layer1.b", "text.layer1.W", "text.layer1.b"):
        scaled.set_(name, scaled[name] * 2.0)  # power of two: embeddings scale exactly
    batch = _random_batch(rng, 8, cfg.image_dims, cfg.vocab_size, degenerate=False)
    for name in OBJECTIVES:
        lc = LossConfig(gamma=gamma)
        a = float(loss_graph(name, params.as_vars(), cfg, batch, lc)[0].value)
        b = float(loss_graph(name, scaled.as_vars(), cfg, batch, lc)[0].value)
        worst_loss_scale = max(worst_loss_scale, abs(a - b) / max(abs(a), 1e-9))
    checks.append({"name": "loss_cosine_scale_invariance", "max_rel_error": worst_loss_scale,
                   "tolerance": SCALE_TOLERANCE, "passed": bool(worst_loss_scale <= SCALE_TOLERANCE)})

    # sampler and dataset determinism round trips
    from .data import GenConfig, generate_dataset

    ds1 = generate_dataset(GenConfig(episodes=6, policy="expert", horizon=12, seed=5))
    ds2 = generate_dataset(GenConfig(episodes=6, policy="expert", horizon=12, seed=5))
    same_ds = ds1.content_fingerprint() == ds2.content_fingerprint()
    b1 = sample_batch(ds1, 16, make_rng(3), LossConfig(), require_text=True)
    b2 = sample_batch(ds1, 16, make_rng(3), LossConfig(), require_text=True)
    same_batch = (
        np.array_equal(b1.o_t, b2.o_t) and np.array_equal(b1.o_k, b2.o_k)
        and np.array_equal(b1.o_k1, b2.o_k1) and np.array_equal(b1.g, b2.g)
        and b1.texts == b2.texts and b1.video_ids == b2.video_ids
    )
    checks.append({"name": "generation_determinism", "passed": bool(same_ds)})
    checks.append({"name": "sampler_determinism", "passed": bool(same_batch)})

    return {"suite": "invariants", "passed": all(c["passed"] for c in checks), "checks": checks}


def run_suites(which: str = "all", seed: int = 0, corrupt: bool = False) -> dict:
    suites = []
    if which in ("prop1", "all"):
        suites.append(run_prop1_suite(seed=seed, corrupt=corrupt))
    if which in ("gradcheck", "all"):
        suites.append(run_gradcheck_suite(seed=seed))
    if which in ("invariants", "all"):
        suites.append(run_invariants_suite(seed=seed))
    if not suites:
        raise ValueError(f"unknown suite {which!r}")
    return {"passed": all(s["passed"] for s in suites), "suites": suites, "seed": seed}
