import numpy as np
import pytest

from livkit import world
from livkit.errors import UnknownTokenError
from livkit.rng import episode_seed, make_rng


def test_init_deterministic():
    a = world.init_episode(123, world.TASKS[0])
    b = world.init_episode(123, world.TASKS[0])
    assert a == b


def test_init_fixed_gripper_start():
    assert world.init_episode(0).gripper_pos == (0.5, 0.95)


def test_init_seeds_differ():
    assert world.init_episode(0).block_pos != world.init_episode(1).block_pos


def test_init_placement_bounds_and_separation():
    for seed in range(200):
        state = world.init_episode(seed)
        for (x, y) in state.block_pos:
            assert 0.1 <= x <= 0.9 and 0.55 <= y <= 0.9
        (x0, y0), (x1, y1) = state.block_pos
        assert (x0 - x1) ** 2 + (y0 - y1) ** 2 >= 0.15 ** 2
        assert state.attached is None and state.step_count == 0


def test_init_ignores_task():
    assert world.init_episode(5, world.TASKS[0]) == world.init_episode(5, world.TASKS[3])


def test_step_identity_motion():
    state = world.init_episode(0)
    out = world.step(state, world.Action(0.0, 0.0, 0.0))
    assert out.gripper_pos == state.gripper_pos
    assert out.block_pos == state.block_pos
    assert out.attached is None
    assert out.step_count == state.step_count + 1


def test_step_clamps_at_border():
    state = world.WorldState((0.99, 0.5), ((0.2, 0.8), (0.8, 0.8)), None, 0)
    out = world.step(state, world.Action(0.08, 0.0, 0.0))
    assert out.gripper_pos == (1.0, 0.5)


def test_step_clamps_oversized_action():
    state = world.WorldState((0.5, 0.5), ((0.2, 0.8), (0.8, 0.8)), None, 0)
    out = world.step(state, world.Action(5.0, -5.0, 0.0))
    assert out.gripper_pos == (0.5 + 0.08, 0.5 - 0.08)


def test_step_attach_on_contact():
    state = world.WorldState((0.3, 0.7), ((0.3, 0.7), (0.8, 0.8)), None, 0)
    out = world.step(state, world.Action(0.0, 0.0, 1.0))
    assert out.attached == 0
    assert out.block_pos[0] == out.gripper_pos


def test_step_attaches_nearest_block():
    state = world.WorldState((0.5, 0.7), ((0.552, 0.7), (0.455, 0.7)), None, 0)
    out = world.step(state, world.Action(0.0, 0.0, 1.0))
    assert out.attached == 1  # both in range, block 1 nearer


def test_step_detach_leaves_block_behind():
    state = world.WorldState((0.3, 0.7), ((0.3, 0.7), (0.8, 0.8)), 0, 1)
    out = world.step(state, world.Action(0.05, 0.0, 0.0))
    assert out.attached is None
    assert out.block_pos[0] == (0.3, 0.7)  # stays at pre-move spot
    assert out.gripper_pos == (0.35, 0.7)


def test_attached_block_tracks_gripper():
    state = world.WorldState((0.3, 0.7), ((0.3, 0.7), (0.8, 0.8)), 0, 0)
    out = world.step(state, world.Action(0.04, -0.03, 1.0))
    assert out.block_pos[0] == out.gripper_pos
    assert out.attached == 0


def test_containment_under_random_actions():
    rng = make_rng(11)
    state = world.init_episode(4)
    for _ in range(200):
        a = world.Action(*(rng.uniform(-1, 1, size=2)), float(rng.uniform(0, 1)))
        state = world.step(state, a)
        gx, gy = state.gripper_pos
        assert 0.0 <= gx <= 1.0 and 0.0 <= gy <= 1.0
        for (bx, by) in state.block_pos:
            assert 0.0 <= bx <= 1.0 and 0.0 <= by <= 1.0
        if state.attached is not None:
            assert state.block_pos[state.attached] == state.gripper_pos


def test_render_block_pixel():
    state = world.WorldState((0.05, 0.05), ((0.5, 0.5), (0.9, 0.9)), None, 0)
    img = world.render(state)
    assert img.shape == (32, 32, 3) and img.dtype == np.uint8
    assert tuple(img[16, 16]) == (255, 0, 0)


def test_render_gripper_occludes_block():
    state = world.WorldState((0.5, 0.5), ((0.5, 0.5), (0.9, 0.9)), None, 0)
    img = world.render(state)
    col, row = world.world_to_pixel(0.5, 0.5)
    assert tuple(img[row, col]) == (255, 255, 255)


def test_render_deterministic():
    state = world.init_episode(9)
    assert np.array_equal(world.render(state), world.render(state))


def test_render_zones_half_intensity():
    img = world.render(world.WorldState((0.5, 0.95), ((0.5, 0.7), (0.7, 0.7)), None, 0))
    gcol, grow = world.world_to_pixel(0.2, 0.2)
    ycol, yrow = world.world_to_pixel(0.8, 0.2)
    assert tuple(img[grow, gcol]) == (0, 128, 0)
    assert tuple(img[yrow, ycol]) == (128, 128, 0)


def test_is_success_exact_center():
    task = world.TASKS[0]  # red block to green zone
    state = world.WorldState((0.9, 0.9), (task.zone_center, (0.8, 0.8)), None, 0)
    assert world.is_success(state, task)


def test_is_success_strict_radius():
    task = world.TASKS[0]
    zx, zy = task.zone_center
    state = world.WorldState((0.9, 0.9), ((zx + 0.081, zy), (0.8, 0.8)), None, 0)
    assert not world.is_success(state, task)
    state = world.WorldState((0.9, 0.9), ((zx + 0.0799, zy), (0.8, 0.8)), None, 0)
    assert world.is_success(state, task)


def test_is_success_requires_release():
    task = world.TASKS[0]
    state = world.WorldState(task.zone_center, (task.zone_center, (0.8, 0.8)), 0, 0)
    assert not world.is_success(state, task)


def test_expert_saturates_toward_far_block():
    task = world.TASKS[0]
    state = world.WorldState((0.1, 0.7), ((0.9, 0.7), (0.5, 0.9)), None, 0)
    a = world.expert_action(state, task, make_rng(0))
    assert 0.07 <= a.dx <= 0.08
    assert a.grip == 0.0


def test_expert_releases_near_zone():
    task = world.TASKS[0]
    zx, zy = task.zone_center
    state = world.WorldState((zx + 0.03, zy), ((zx + 0.03, zy), (0.8, 0.8)), 0, 10)
    a = world.expert_action(state, task, make_rng(0))
    assert a.grip == 0.0


def test_expert_grips_in_range():
    task = world.TASKS[0]
    state = world.WorldState((0.52, 0.7), ((0.5, 0.7), (0.9, 0.9)), None, 0)
    a = world.expert_action(state, task, make_rng(0))
    assert a.grip == 1.0


def test_expert_competence():
    # >= 99% success over 1000 seeded episodes at horizon 40
    successes = 0
    for e in range(1000):
        rng = make_rng(episode_seed(123, e))
        task = world.TASKS[e % 4]
        state = world.init_from_rng(rng)
        for _ in range(39):
            state = world.step(state, world.expert_action(state, task, rng))
        successes += world.is_success(state, task)
    assert successes / 1000 >= 0.99


def test_tokenize_task_string():
    assert world.tokenize("push red block to green zone") == (0, 1, 3, 4, 5, 7)


def test_tokenize_empty():
    assert world.tokenize("") == ()


def test_tokenize_unknown_word():
    # the first offending word is named
    with pytest.raises(UnknownTokenError, match="grab"):
        world.tokenize("grab cup")


def test_task_table():
    assert len(world.TASKS) == 4
    assert [t.annotation for t in world.TASKS] == [
        "push red block to green zone",
        "push red block to yellow zone",
        "push blue block to green zone",
        "push blue block to yellow zone",
    ]
    for t in world.TASKS:
        assert t.token_ids == world.tokenize(t.annotation)


def test_rollout_batch_matches_step():
    rng = np.random.default_rng(5)
    state = world.init_episode(7)
    actions = rng.uniform(-0.12, 1.1, size=(6, 30, 3))  # deliberately out of range
    g_t, b_t, a_t = world.rollout_batch(state, actions)
    assert g_t.shape == (6, 31, 2)
    for n in range(6):
        s = state
        for t in range(30):
            s = world.step(s, world.Action(*actions[n, t]))
            assert s.gripper_pos == (g_t[n, t + 1, 0], g_t[n, t + 1, 1])
            for i in range(2):
                assert s.block_pos[i] == (b_t[n, t + 1, i, 0], b_t[n, t + 1, i, 1])
            assert (-1 if s.attached is None else s.attached) == a_t[n, t + 1]
