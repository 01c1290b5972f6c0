"""BlockWorld: a deterministic 2D manipulation world rendered to 32x32 RGB.

A point gripper moves in the unit square, can attach to one of two colored
blocks, and carries it to one of two colored zones. The four tasks
("push <block> block to <zone> zone") share the same dynamics and initial
layouts and are distinguishable only through their text annotation.

All geometry tests compare squared distances so the scalar `step` path and
the vectorized `rollout_batch` path agree bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, UnknownTokenError
from .rng import make_rng

MAX_DELTA = 0.08          # per-axis displacement clamp
ATTACH_RADIUS = 0.06      # grab range, gripper to block
SUCCESS_RADIUS = 0.08     # block to zone center
RELEASE_RADIUS = 0.05     # expert lets go this close to the zone
EXPERT_NOISE = 0.01       # uniform perturbation on expert (dx, dy)
MIN_BLOCK_SEPARATION = 0.15
GRIPPER_START = (0.5, 0.95)
PLACEMENT_X = (0.1, 0.9)
PLACEMENT_Y = (0.55, 0.9)
MAX_PLACEMENT_REJECTIONS = 1000

IMAGE_HW = 32
IMAGE_DIMS = (32, 32, 3)

BLOCK_COLORS = ("red", "blue")
ZONE_COLORS = ("green", "yellow")
ZONE_CENTERS = {"green": (0.2, 0.2), "yellow": (0.8, 0.2)}
_BLOCK_RGB = {"red": (255, 0, 0), "blue": (0, 0, 255)}
_ZONE_RGB = {"green": (0, 128, 0), "yellow": (128, 128, 0)}

VOCABULARY = ("push", "red", "blue", "block", "to", "green", "yellow", "zone")
_WORD_TO_ID = {w: i for i, w in enumerate(VOCABULARY)}

_ATTACH_R2 = ATTACH_RADIUS * ATTACH_RADIUS
_SUCCESS_R2 = SUCCESS_RADIUS * SUCCESS_RADIUS
_RELEASE_R2 = RELEASE_RADIUS * RELEASE_RADIUS
_SEP_R2 = MIN_BLOCK_SEPARATION * MIN_BLOCK_SEPARATION


def tokenize(text: str) -> tuple[int, ...]:
    """Map whitespace-separated words to vocabulary ids, order preserved."""
    ids = []
    for word in text.split():
        if word not in _WORD_TO_ID:
            raise UnknownTokenError(f"unknown token {word!r}")
        ids.append(_WORD_TO_ID[word])
    return tuple(ids)


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    block_color: str
    zone_color: str
    annotation: str
    token_ids: tuple[int, ...]

    @property
    def block_index(self) -> int:
        return BLOCK_COLORS.index(self.block_color)

    @property
    def zone_center(self) -> tuple[float, float]:
        return ZONE_CENTERS[self.zone_color]


def _make_tasks() -> tuple[TaskSpec, ...]:
    tasks = []
    for block in BLOCK_COLORS:
        for zone in ZONE_COLORS:
            text = f"push {block} block to {zone} zone"
            tasks.append(TaskSpec(len(tasks), block, zone, text, tokenize(text)))
    return tuple(tasks)


TASKS = _make_tasks()


@dataclass(frozen=True)
class Action:
    """Raw displacement command. Out-of-range values are clamped when the
    action is applied, never rejected."""

    dx: float
    dy: float
    grip: float  # active iff >= 0.5 after clamping to [0, 1]


@dataclass(frozen=True)
class WorldState:
    gripper_pos: tuple[float, float]
    block_pos: tuple[tuple[float, float], ...]
    attached: int | None
    step_count: int


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def init_from_rng(rng: np.random.Generator) -> WorldState:
    """Sample block placements from an existing stream (used by dataset
    generation so init and policy noise share one per-episode stream)."""
    placed: list[tuple[float, float]] = []
    rejections = 0
    while len(placed) < len(BLOCK_COLORS):
        x = float(rng.uniform(PLACEMENT_X[0], PLACEMENT_X[1]))
        y = float(rng.uniform(PLACEMENT_Y[0], PLACEMENT_Y[1]))
        if all((x - px) * (x - px) + (y - py) * (y - py) >= _SEP_R2 for px, py in placed):
            placed.append((x, y))
        else:
            rejections += 1
            if rejections > MAX_PLACEMENT_REJECTIONS:
                raise GenerationError(
                    f"block placement rejected {rejections} times; separation "
                    f"{MIN_BLOCK_SEPARATION} may be infeasible"
                )
    return WorldState(GRIPPER_START, tuple(placed), None, 0)


def init_episode(seed: int, task: TaskSpec | None = None) -> WorldState:
    """Deterministic initial state. Placement depends only on `seed`, never
    on the task, so the same seed yields the same layout for every task."""
    return init_from_rng(make_rng(seed))


def step(state: WorldState, action: Action) -> WorldState:
    """One kinematic transition: move, (re)attach or detach, track."""
    dx = _clamp(action.dx, -MAX_DELTA, MAX_DELTA)
    dy = _clamp(action.dy, -MAX_DELTA, MAX_DELTA)
    gx = _clamp(state.gripper_pos[0] + dx, 0.0, 1.0)
    gy = _clamp(state.gripper_pos[1] + dy, 0.0, 1.0)
    grip_active = _clamp(action.grip, 0.0, 1.0) >= 0.5

    attached = state.attached
    if grip_active:
        if attached is None:
            best = None
            best_d2 = _ATTACH_R2
            for i, (bx, by) in enumerate(state.block_pos):
                d2 = (bx - gx) * (bx - gx) + (by - gy) * (by - gy)
                if d2 <= best_d2 and (best is None or d2 < best_d2):
                    best = i
                    best_d2 = d2
            attached = best
    else:
        attached = None

    blocks = list(state.block_pos)
    if attached is not None:
        blocks[attached] = (gx, gy)
    return WorldState((gx, gy), tuple(blocks), attached, state.step_count + 1)


def world_to_pixel(x: float, y: float) -> tuple[int, int]:
    """(col, row) = (round(x*31), round((1-y)*31)), half-up rounding."""
    col = int(math.floor(x * 31.0 + 0.5))
    row = int(math.floor((1.0 - y) * 31.0 + 0.5))
    return col, row


def _paint(img: np.ndarray, row: int, col: int, size: int, rgb: tuple[int, int, int]) -> None:
    # Odd sizes center on the pixel; the 2x2 gripper anchors at (row, col)
    # and extends one pixel toward +row/+col. Patches clip at the borders.
    if size % 2:
        r0 = row - size // 2
        c0 = col - size // 2
    else:
        r0, c0 = row, col
    rr0, cc0 = max(r0, 0), max(c0, 0)
    rr1, cc1 = min(r0 + size, IMAGE_HW), min(c0 + size, IMAGE_HW)
    if rr0 < rr1 and cc0 < cc1:
        img[rr0:rr1, cc0:cc1] = rgb


def render(state: WorldState) -> np.ndarray:
    """Rasterize to u8 32x32x3. Zones first, then blocks, gripper last;
    later entities occlude earlier ones."""
    img = np.zeros((IMAGE_HW, IMAGE_HW, 3), dtype=np.uint8)
    for zone in ZONE_COLORS:
        zx, zy = ZONE_CENTERS[zone]
        col, row = world_to_pixel(zx, zy)
        _paint(img, row, col, 7, _ZONE_RGB[zone])
    for i, (bx, by) in enumerate(state.block_pos):
        col, row = world_to_pixel(bx, by)
        _paint(img, row, col, 3, _BLOCK_RGB[BLOCK_COLORS[i]])
    col, row = world_to_pixel(state.gripper_pos[0], state.gripper_pos[1])
    _paint(img, row, col, 2, (255, 255, 255))
    return img


def is_success(state: WorldState, task: TaskSpec) -> bool:
    """Task block within SUCCESS_RADIUS of its zone center and not held."""
    bi = task.block_index
    bx, by = state.block_pos[bi]
    zx, zy = task.zone_center
    d2 = (bx - zx) * (bx - zx) + (by - zy) * (by - zy)
    return d2 <= _SUCCESS_R2 and state.attached != bi


def expert_action(state: WorldState, task: TaskSpec, rng: np.random.Generator) -> Action:
    """Scripted two-phase proportional controller.

    Approach the task block and grab it, carry it to the zone, release close
    to the zone center, then idle (never re-grab a delivered block). The
    (dx, dy) perturbation is drawn from the episode stream passed in.
    """
    bi = task.block_index
    gx, gy = state.gripper_pos
    bx, by = state.block_pos[bi]
    zx, zy = task.zone_center

    if state.attached is not None and state.attached != bi:
        # Holding the wrong block (unreachable in expert rollouts): drop it.
        tx, ty, grip = 0.0, 0.0, 0.0
    elif state.attached == bi:
        d2_zone = (gx - zx) * (gx - zx) + (gy - zy) * (gy - zy)
        tx, ty = zx - gx, zy - gy
        grip = 0.0 if d2_zone <= _RELEASE_R2 else 1.0
    else:
        d2_done = (bx - zx) * (bx - zx) + (by - zy) * (by - zy)
        if d2_done <= _SUCCESS_R2:
            tx, ty, grip = 0.0, 0.0, 0.0  # delivered; idle
        else:
            d2_block = (gx - bx) * (gx - bx) + (gy - by) * (gy - by)
            tx, ty = bx - gx, by - gy
            grip = 1.0 if d2_block <= _ATTACH_R2 else 0.0

    noise = rng.uniform(-EXPERT_NOISE, EXPERT_NOISE, size=2)
    dx = _clamp(_clamp(tx, -MAX_DELTA, MAX_DELTA) + float(noise[0]), -MAX_DELTA, MAX_DELTA)
    dy = _clamp(_clamp(ty, -MAX_DELTA, MAX_DELTA) + float(noise[1]), -MAX_DELTA, MAX_DELTA)
    return Action(dx, dy, grip)


def rollout_batch(state: WorldState, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate N action sequences from one start state without Python-level
    per-candidate loops.

    actions: (N, T, 3) float array. Returns (gripper (N,T+1,2),
    blocks (N,T+1,nb,2), attached (N,T+1) with -1 for none). Transitions
    match `step` exactly, element for element.
    """
    actions = np.asarray(actions, dtype=np.float64)
    n, t_len, _ = actions.shape
    nb = len(state.block_pos)
    g = np.tile(np.asarray(state.gripper_pos, dtype=np.float64), (n, 1))
    bl = np.tile(np.asarray(state.block_pos, dtype=np.float64), (n, 1, 1))
    at = np.full(n, -1 if state.attached is None else state.attached, dtype=np.int64)

    g_traj = np.empty((n, t_len + 1, 2))
    b_traj = np.empty((n, t_len + 1, nb, 2))
    a_traj = np.empty((n, t_len + 1), dtype=np.int64)
    g_traj[:, 0], b_traj[:, 0], a_traj[:, 0] = g, bl, at

    rows = np.arange(n)
    for t in range(t_len):
        a = actions[:, t, :]
        g = np.clip(g + np.clip(a[:, :2], -MAX_DELTA, MAX_DELTA), 0.0, 1.0)
        grip_active = np.clip(a[:, 2], 0.0, 1.0) >= 0.5

        diff = bl - g[:, None, :]
        d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]
        nearest = np.argmin(d2, axis=1)
        in_range = d2[rows, nearest] <= _ATTACH_R2
        newly = grip_active & (at < 0) & in_range
        at = np.where(grip_active, np.where(newly, nearest, at), -1)

        held = at >= 0
        bl[held, at[held], :] = g[held]
        g_traj[:, t + 1], b_traj[:, t + 1], a_traj[:, t + 1] = g, bl, at
    return g_traj, b_traj, a_traj
