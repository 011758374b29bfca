import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oodil.envs import (
    COLLISION,
    GOAL,
    RUNNING,
    TIMEOUT,
    DrivingConfig,
    DrivingEnv,
    InfeasibleGapError,
    PointMassConfig,
    driving_reset,
    driving_step,
    driving_step_batch,
    in_obstacle,
    make_env,
    pointmass_step,
    rollout,
    scripted_driving_demo,
)


def test_reset_reproducible_and_on_start_line():
    cfg = DrivingConfig()
    a = driving_reset(cfg, np.random.default_rng(4))
    b = driving_reset(cfg, np.random.default_rng(4))
    assert np.array_equal(a, b)
    states = DrivingEnv(cfg).reset(np.random.default_rng(0), 10_000)
    assert np.all(states[:, 1] == 0.0)
    assert abs(states[:, 0].mean() - 0.5) < 0.02
    assert states[:, 0].min() >= 0 and states[:, 0].max() <= 1


def test_straight_step():
    r = driving_step(DrivingConfig(), [0.5, 0.0], 0.0)
    np.testing.assert_allclose(r.next_state, [0.5, 0.02])
    assert r.reward == -1.0 and r.cause == RUNNING


def test_goal_step():
    r = driving_step(DrivingConfig(), [0.5, 0.99], 0.0)
    assert r.next_state[1] == pytest.approx(1.01)
    assert r.reward == 999.0 and r.cause == GOAL


def test_speed_five_moves_five_times_as_far():
    cfg = DrivingConfig(obstacle_widths=(0.25, 0.25), speed=5.0)
    for a in (-1.0, -0.3, 0.0, 0.8):
        r = driving_step(cfg, [0.5, 0.2], a)
        assert r.next_state[1] - 0.2 == pytest.approx(0.1, abs=1e-15)


def test_collision_and_action_clamp():
    cfg = DrivingConfig()
    r = driving_step(cfg, [0.25, 0.44], 0.0)
    assert r.cause == COLLISION and r.reward == -1001.0
    r = driving_step(cfg, [0.5, 0.0], 3.0)
    assert r.action_clamped and r.next_state[0] == pytest.approx(0.52)
    env = DrivingEnv(cfg)
    env.step(np.array([[0.5, 0.0]]), np.array([-7.0]), np.array([0]))
    assert env.clamped_actions == 1


def test_obstacle_geometry():
    cfg = DrivingConfig()
    np.testing.assert_allclose(cfg.obstacles(), [(0.05, 0.45), (0.625, 0.875)], atol=1e-15)
    assert set(cfg.gaps()) == {"left", "middle", "right"}
    assert in_obstacle(cfg, 0.3, 0.5) and not in_obstacle(cfg, 0.5, 0.5)
    assert not in_obstacle(cfg, 0.3, 0.6)


def test_pointmass_euler_step():
    cfg = PointMassConfig(force_gain=1.0, drag=0.0, step_size=0.1)
    r = pointmass_step(cfg, [0.0, 0.0], 1.0)
    np.testing.assert_allclose(r.next_state, [0.01, 0.1])
    r = pointmass_step(cfg, [0.3, 0.7], 0.0)
    assert r.next_state[1] == 0.7


def test_pointmass_gain_scaling():
    dv = [pointmass_step(PointMassConfig(force_gain=g, drag=0.0), [0.0, 0.0], 1.0).next_state[1]
          for g in (0.05, 1.0)]
    assert dv[0] / dv[1] == pytest.approx(0.05)


def test_speed_five_demo_length():
    cfg = DrivingConfig(obstacle_widths=(0.25, 0.25), speed=5.0)
    traj = scripted_driving_demo(cfg, "middle", np.random.default_rng(0))
    assert len(traj.states) - 1 == math.ceil(1 / (0.02 * 5)) == 10


@pytest.mark.parametrize("widths,speed", [((0.1, 0.5), 1.0), ((0.5, 0.25), 1.0),
                                          ((0.25, 0.25), 5.0), ((0.4, 0.25), 1.0)])
def test_demos_never_collide(widths, speed):
    cfg = DrivingConfig(obstacle_widths=widths, speed=speed)
    rng = np.random.default_rng(1)
    for gap in cfg.gaps():
        for _ in range(10):
            traj = scripted_driving_demo(cfg, gap, rng)
            assert not np.any(in_obstacle(cfg, traj.states[:, 0], traj.states[:, 1]))
            assert traj.states[-1, 1] >= 1 - 1e-9


def test_demo_deterministic():
    cfg = DrivingConfig(obstacle_widths=(0.1, 0.5))
    a = scripted_driving_demo(cfg, "left", np.random.default_rng(7))
    b = scripted_driving_demo(cfg, "left", np.random.default_rng(7))
    assert np.array_equal(a.states, b.states)


def test_closed_gap_rejected():
    cfg = DrivingConfig(obstacle_widths=(0.5, 0.25))  # left obstacle reaches x = 0
    with pytest.raises(InfeasibleGapError):
        scripted_driving_demo(cfg, "left", np.random.default_rng(0))


def test_rollout_returns():
    env = DrivingEnv(DrivingConfig(max_steps=3))
    ep = rollout(env, lambda s, r: 0.0, np.random.default_rng(0), start=[0.5, 0.0])
    assert ep.undiscounted_return == -3 and ep.cause == TIMEOUT
    env = DrivingEnv(DrivingConfig())
    ep = rollout(env, lambda s, r: 0.0, np.random.default_rng(0), start=[0.5, 0.0], gamma=1.0)
    assert ep.length == 50 and ep.cause == GOAL
    assert ep.undiscounted_return == 950.0
    assert ep.discounted_return == ep.undiscounted_return


def test_make_env_from_dict():
    env = make_env({"kind": "driving", "obstacle_widths": [0.1, 0.5], "speed": 1.0})
    assert env.config.obstacle_widths == (0.1, 0.5)
    assert make_env({"kind": "pointmass"}).state_dim == 2
    with pytest.raises(ValueError):
        make_env({"kind": "hovercraft"})


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), speed=st.sampled_from([1.0, 2.0, 5.0]))
def test_states_stay_in_bounds_and_episodes_end(seed, speed):
    cfg = DrivingConfig(speed=speed)
    env = DrivingEnv(cfg)
    rng = np.random.default_rng(seed)
    ep = rollout(env, lambda s, r: r.uniform(-2, 2), rng)
    assert np.all((ep.states[:, 0] >= 0) & (ep.states[:, 0] <= 1))
    assert np.all(ep.states[:, 1] >= 0)
    assert ep.length <= cfg.max_steps and ep.cause != RUNNING
    np.testing.assert_allclose(np.diff(ep.states[:, 1]), 0.02 * speed, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0, 1), y=st.floats(0, 0.9), a=st.floats(-1, 1))
def test_speed_mismatch_cannot_be_reproduced(x, y, a):
    # a speed-5 transition has dy = 0.1; no speed-1 action gives that
    nxt, *_ = driving_step_batch(DrivingConfig(speed=1.0), np.array([[x, y]]), np.array([a]),
                                 np.array([0]))
    assert abs((nxt[0, 1] - y) - 0.1) > 0.05
