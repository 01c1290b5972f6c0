"""Seeded random streams.

All randomness in the package flows through Philox (a counter-based bit
generator with a frozen, platform-stable stream) keyed by explicit integer
seeds, so artifacts regenerate bit-identically from (config, seed).
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & MASK64)))


def make_rng_from(entropy: tuple[int, ...]) -> np.random.Generator:
    """Stream keyed by a tuple of integers (for per-task / per-episode splits)."""
    parts = tuple(int(e) & MASK64 for e in entropy)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(parts)))


def episode_seed(seed: int, index: int) -> int:
    """Per-episode stream key: seed XOR episode index."""
    return (int(seed) ^ int(index)) & MASK64


def eval_episode_seed(seed: int, task_id: int, episode: int) -> int:
    """Rollout seeds for evaluation suites; depends only on the arguments so
    runs sharing a seed see identical initial states across arms."""
    return (int(seed) ^ (int(task_id) << 32) ^ int(episode)) & MASK64
